//! Row-major matrices and supervised datasets.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix used for dataset storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: alloc::vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Error::check_len("matrix data", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            Error::check_len("matrix row", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if self.rows == 0 && self.cols == 0 {
            self.cols = row.len();
        }
        Error::check_len("matrix row", self.cols, row.len())?;
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Inputs, targets and optional per-row context (the control vector `[1; u]`
/// for control-affine heads).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub context: Option<Matrix>,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        Self::with_context(inputs, targets, None)
    }

    pub fn with_context(inputs: Matrix, targets: Matrix, context: Option<Matrix>) -> Result<Self> {
        Error::check_len("dataset targets rows", inputs.rows(), targets.rows())?;
        if let Some(c) = &context {
            Error::check_len("dataset context rows", inputs.rows(), c.rows())?;
        }
        let finite = inputs.as_slice().iter().all(|v| v.is_finite())
            && targets.as_slice().iter().all(|v| v.is_finite())
            && context
                .as_ref()
                .is_none_or(|c| c.as_slice().iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::invalid("dataset contains non-finite entries"));
        }
        Ok(Dataset {
            inputs,
            targets,
            context,
        })
    }

    /// Builds a scalar-input, scalar-target dataset.
    pub fn from_xy(xs: &[f64], ys: &[f64]) -> Result<Self> {
        Error::check_len("dataset targets", xs.len(), ys.len())?;
        Self::new(
            Matrix::from_vec(xs.len(), 1, xs.to_vec())?,
            Matrix::from_vec(ys.len(), 1, ys.to_vec())?,
        )
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.cols()
    }

    pub fn context_row(&self, i: usize) -> &[f64] {
        self.context.as_ref().map_or(&[], |c| c.row(i))
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            targets: self.targets.select_rows(idx),
            context: self.context.as_ref().map(|c| c.select_rows(idx)),
        }
    }

    /// The dataset repeated `times` times, row order preserved within each copy.
    pub fn repeated(&self, times: usize) -> Dataset {
        let idx: Vec<usize> = (0..times).flat_map(|_| 0..self.len()).collect();
        self.select(&idx)
    }
}
