//! SWAG with a diagonal Gaussian over the weights.

use alloc::vec;
use alloc::vec::Vec;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{query_stream, PosteriorPrediction, Predictor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, NetworkSpec, Objective, Optimizer, ParamVector, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwagModel {
    pub mean_weights: ParamVector,
    pub weight_variance: Vec<f64>,
    pub snapshots_kept: usize,
    pub sgd_lr: f64,
    pub n_samples: usize,
    pub spec: NetworkSpec,
    pub seed: u64,
}

/// Trains with `config`, then runs `n_snapshots` extra epochs of plain SGD at
/// `swag_lr`, recording the weights after each epoch. The weight posterior is
/// the diagonal Gaussian of the snapshot moments.
pub fn fit_swag(
    dataset: &Dataset,
    spec: &NetworkSpec,
    config: &TrainConfig,
    swag_lr: f64,
    n_snapshots: usize,
    n_samples: usize,
) -> Result<SwagModel> {
    if n_snapshots < 2 {
        return Err(Error::invalid("SWAG needs at least two snapshots"));
    }
    if n_samples < 2 {
        return Err(Error::invalid("SWAG needs at least two predictive samples"));
    }
    if !(swag_lr >= 0.0) {
        return Err(Error::invalid("swag_lr must be >= 0"));
    }
    let base = nn::train(dataset, spec, config)?.params;
    let mut snapshots: Vec<Vec<f64>> = Vec::with_capacity(n_snapshots);
    let mut current = base;
    for k in 0..n_snapshots {
        if swag_lr > 0.0 {
            let mut cfg = config.with_seed(config.seed.wrapping_add(1 + k as u64));
            cfg.epochs = 1;
            cfg.learning_rate = swag_lr;
            cfg.optimizer = Optimizer::Sgd;
            current = nn::train_from(current, dataset, spec, &cfg, Objective::Mse)?.params;
        }
        snapshots.push(current.values.clone());
    }
    let count = n_snapshots as f64;
    let n = current.len();
    // Moments of the offsets from the first snapshot, so identical snapshots
    // give exactly zero variance.
    let base = &snapshots[0];
    let mut shift = vec![0.0; n];
    for s in &snapshots {
        for ((m, w), b) in shift.iter_mut().zip(s).zip(base) {
            *m += w - b;
        }
    }
    shift.iter_mut().for_each(|m| *m /= count);
    let mut variance = vec![0.0; n];
    for s in &snapshots {
        for (((v, w), b), m) in variance.iter_mut().zip(s).zip(base).zip(&shift) {
            let d = (w - b) - m;
            *v += d * d;
        }
    }
    variance.iter_mut().for_each(|v| *v /= count);
    let mean: Vec<f64> = base.iter().zip(&shift).map(|(b, m)| b + m).collect();
    Ok(SwagModel {
        mean_weights: ParamVector {
            values: mean,
            shapes: current.shapes,
        },
        weight_variance: variance,
        snapshots_kept: n_snapshots,
        sgd_lr: swag_lr,
        n_samples,
        spec: spec.clone(),
        seed: config.seed,
    })
}

impl SwagModel {
    /// `n_samples` weight draws from the fitted Gaussian, keyed on `(seed, x)`.
    pub fn predict_seeded(&self, x: &[f64], seed: u64) -> Result<PosteriorPrediction> {
        let mut rng = nn::stream_rng(seed, query_stream(x));
        let mut outs = Vec::with_capacity(self.n_samples);
        let mut w = self.mean_weights.clone();
        for _ in 0..self.n_samples {
            for ((v, m), s2) in w.values.iter_mut().zip(&self.mean_weights.values).zip(&self.weight_variance) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = m + libm::sqrt(*s2) * z;
            }
            outs.push(nn::forward(&w, &self.spec, x, None)?);
        }
        PosteriorPrediction::from_samples(&outs)
    }
}

impl Predictor for SwagModel {
    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }
    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }
    fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction> {
        self.predict_seeded(x, self.seed)
    }
}
