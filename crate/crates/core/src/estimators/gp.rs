//! Exact Gaussian-process regression with an RBF kernel.

use alloc::vec::Vec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{PosteriorPrediction, Predictor};
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::linalg::cholesky_with_jitter;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpKernel {
    pub signal_var: f64,
    pub length_scale: f64,
    pub noise_var: f64,
}

impl GpKernel {
    /// `s² exp(-‖a - b‖² / (2ℓ²))`, without the noise term.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_var * libm::exp(-d2 / (2.0 * self.length_scale * self.length_scale))
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.signal_var, self.length_scale, self.noise_var]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("GP kernel parameters must be positive"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub train_inputs: Matrix,
    pub train_targets: Matrix,
    pub kernel: GpKernel,
    /// Row-major lower-triangular factor of `K + (noise + jitter)·I`.
    pub cholesky_factor: Vec<f64>,
    pub jitter: f64,
    /// `(K + σ²I)⁻¹ y`, row-major `n x d_out`.
    alpha: Vec<f64>,
}

fn kernel_matrix(inputs: &Matrix, kernel: &GpKernel) -> DMatrix<f64> {
    let n = inputs.rows();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(inputs.row(i), inputs.row(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += kernel.noise_var;
    }
    k
}

/// Exact posterior for fixed kernel hyperparameters; each target column is
/// an independent GP sharing the kernel.
pub fn fit_gp(dataset: &Dataset, kernel: GpKernel) -> Result<GpModel> {
    kernel.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let n = dataset.len();
    let k = kernel_matrix(&dataset.inputs, &kernel);
    let (chol, jitter) = cholesky_with_jitter(&k)?;
    let d = dataset.target_dim();
    let y = DMatrix::from_row_slice(n, d, dataset.targets.as_slice());
    let alpha = chol.solve(&y);
    let l = chol.l();
    let mut factor = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            factor[i * n + j] = l[(i, j)];
        }
    }
    let mut alpha_rows = alloc::vec![0.0; n * d];
    for i in 0..n {
        for c in 0..d {
            alpha_rows[i * d + c] = alpha[(i, c)];
        }
    }
    Ok(GpModel {
        train_inputs: dataset.inputs.clone(),
        train_targets: dataset.targets.clone(),
        kernel,
        cholesky_factor: factor,
        jitter,
        alpha: alpha_rows,
    })
}

impl GpModel {
    /// Rebuilds a model from stored parts, recomputing `alpha` from the factor.
    pub fn from_parts(train_inputs: Matrix, train_targets: Matrix, kernel: GpKernel, cholesky_factor: Vec<f64>, jitter: f64) -> Result<Self> {
        let n = train_inputs.rows();
        Error::check_len("cholesky factor", n * n, cholesky_factor.len())?;
        let l = DMatrix::from_row_slice(n, n, &cholesky_factor);
        let d = train_targets.cols();
        let y = DMatrix::from_row_slice(n, d, train_targets.as_slice());
        let z = l
            .solve_lower_triangular(&y)
            .ok_or(Error::NotPositiveDefinite { jitter })?;
        let alpha = l
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or(Error::NotPositiveDefinite { jitter })?;
        let mut alpha_rows = alloc::vec![0.0; n * d];
        for i in 0..n {
            for c in 0..d {
                alpha_rows[i * d + c] = alpha[(i, c)];
            }
        }
        Ok(GpModel {
            train_inputs,
            train_targets,
            kernel,
            cholesky_factor,
            jitter,
            alpha: alpha_rows,
        })
    }

    /// `log p(y | X)` summed over target columns.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.train_inputs.rows();
        let d = self.train_targets.cols();
        let log_det: f64 = (0..n).map(|i| libm::log(self.cholesky_factor[i * n + i])).sum();
        let mut fit = 0.0;
        for i in 0..n {
            for c in 0..d {
                fit += self.train_targets.row(i)[c] * self.alpha[i * d + c];
            }
        }
        -0.5 * fit - d as f64 * (log_det + 0.5 * n as f64 * libm::log(2.0 * core::f64::consts::PI))
    }
}

/// Predictive distribution of a noisy observation at `x`: latent posterior
/// variance plus `noise_var`.
pub fn predict_gp(model: &GpModel, x: &[f64]) -> Result<PosteriorPrediction> {
    Error::check_len("GP input", model.train_inputs.cols(), x.len())?;
    let n = model.train_inputs.rows();
    let d = model.train_targets.cols();
    let kstar: Vec<f64> = model.train_inputs.iter_rows().map(|r| model.kernel.eval(r, x)).collect();
    let mut mean = alloc::vec![0.0; d];
    for (i, k) in kstar.iter().enumerate() {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += k * model.alpha[i * d + c];
        }
    }
    // v = L⁻¹ k*
    let l = &model.cholesky_factor;
    let mut v = kstar;
    for i in 0..n {
        let mut s = v[i];
        for j in 0..i {
            s -= l[i * n + j] * v[j];
        }
        v[i] = s / l[i * n + i];
    }
    let latent = (model.kernel.eval(x, x) - v.iter().map(|a| a * a).sum::<f64>()).max(0.0);
    let variance = alloc::vec![latent + model.kernel.noise_var; d];
    PosteriorPrediction::new(mean, variance)
}

impl Predictor for GpModel {
    fn input_dim(&self) -> usize {
        self.train_inputs.cols()
    }
    fn output_dim(&self) -> usize {
        self.train_targets.cols()
    }
    fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction> {
        predict_gp(self, x)
    }
}

/// Log-spaced hyperparameter candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpGrid {
    pub signal_var: Vec<f64>,
    pub length_scale: Vec<f64>,
    pub noise_var: Vec<f64>,
}

impl Default for GpGrid {
    fn default() -> Self {
        GpGrid {
            signal_var: alloc::vec![0.5, 1.0, 2.0, 4.0, 8.0],
            length_scale: alloc::vec![0.25, 0.5, 1.0, 2.0],
            noise_var: alloc::vec![0.02, 0.05, 0.1, 0.2],
        }
    }
}

/// Grid search maximising the log marginal likelihood.
pub fn fit_gp_auto(dataset: &Dataset, grid: &GpGrid) -> Result<GpModel> {
    let mut best: Option<GpModel> = None;
    let mut best_lml = f64::NEG_INFINITY;
    for &s in &grid.signal_var {
        for &l in &grid.length_scale {
            for &nv in &grid.noise_var {
                let kernel = GpKernel {
                    signal_var: s,
                    length_scale: l,
                    noise_var: nv,
                };
                let Ok(model) = fit_gp(dataset, kernel) else {
                    continue;
                };
                let lml = model.log_marginal_likelihood();
                if lml > best_lml {
                    best_lml = lml;
                    best = Some(model);
                }
            }
        }
    }
    best.ok_or(Error::NotPositiveDefinite { jitter: 1e-2 })
}
