//! Synthetic 1-D regression benchmark: a noisy cubic observed on two
//! disjoint intervals and evaluated on a wider grid.

use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, Predictor};
use crate::metrics::{EvalSplit, Region};
use crate::nn::{stream_rng, NetworkSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bench1dConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub train_domain: Vec<(f64, f64)>,
    pub test_domain: (f64, f64),
    pub noise_half_width: f64,
    pub seed: u64,
}

impl Default for Bench1dConfig {
    fn default() -> Self {
        Bench1dConfig {
            n_train: 513,
            n_test: 1000,
            train_domain: alloc::vec![(-2.5, -0.75), (0.75, 2.5)],
            test_domain: (-3.0, 3.0),
            noise_half_width: 0.5,
            seed: 0,
        }
    }
}

impl Bench1dConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.test_domain;
        if !(lo < hi) {
            return Err(Error::invalid("test_domain must be a non-empty interval"));
        }
        if self.train_domain.is_empty() {
            return Err(Error::invalid("train_domain needs at least one interval"));
        }
        for &(a, b) in &self.train_domain {
            if !(a < b) || a < lo || b > hi {
                return Err(Error::invalid("train intervals must be non-empty and inside test_domain"));
            }
        }
        if !(self.noise_half_width > 0.0) {
            return Err(Error::invalid("noise_half_width must be positive"));
        }
        if self.n_train == 0 || self.n_test < 2 {
            return Err(Error::invalid("n_train >= 1 and n_test >= 2 required"));
        }
        Ok(())
    }

    pub fn in_train_domain(&self, x: f64) -> bool {
        self.train_domain.iter().any(|&(a, b)| x >= a && x <= b)
    }
}

/// Noiseless target `x³/5 − x`.
pub fn cubic(x: f64) -> f64 {
    x * x * x / 5.0 - x
}

/// Training set sampled uniformly over the union of train intervals, and an
/// equispaced labelled test grid. Both carry uniform additive noise.
pub fn generate(config: &Bench1dConfig) -> Result<(Dataset, EvalSplit)> {
    config.validate()?;
    let total: f64 = config.train_domain.iter().map(|(a, b)| b - a).sum();
    let mut rng = stream_rng(config.seed, 0);
    let h = config.noise_half_width;
    let mut xs = Vec::with_capacity(config.n_train);
    let mut ys = Vec::with_capacity(config.n_train);
    for _ in 0..config.n_train {
        let mut u = rng.random_range(0.0..total);
        let mut x = config.train_domain[config.train_domain.len() - 1].1;
        for &(a, b) in &config.train_domain {
            if u < b - a {
                x = a + u;
                break;
            }
            u -= b - a;
        }
        xs.push(x);
        ys.push(cubic(x) + rng.random_range(-h..h));
    }
    let train = Dataset::from_xy(&xs, &ys)?;

    let mut rng = stream_rng(config.seed, 1);
    let (lo, hi) = config.test_domain;
    let step = (hi - lo) / (config.n_test - 1) as f64;
    let mut tx = Vec::with_capacity(config.n_test);
    let mut ty = Vec::with_capacity(config.n_test);
    let mut regions = Vec::with_capacity(config.n_test);
    for i in 0..config.n_test {
        let x = lo + step * i as f64;
        tx.push(x);
        ty.push(cubic(x) + rng.random_range(-h..h));
        regions.push(if config.in_train_domain(x) {
            Region::InDomain
        } else {
            Region::Ood
        });
    }
    let split = EvalSplit::new(
        Matrix::from_vec(config.n_test, 1, tx)?,
        Matrix::from_vec(config.n_test, 1, ty)?,
        regions,
    )?;
    Ok((train, split))
}

/// Network body used for every deep estimator on this benchmark.
pub fn default_spec() -> NetworkSpec {
    NetworkSpec::mlp(1, 1, 4, 10)
}

/// 1000 epochs, learning rate 1e-4, batch 20.
pub fn default_train_config(seed: u64) -> TrainConfig {
    TrainConfig::new(1000, 1e-4, 20, seed)
}

/// Mean predictive variance over the in-domain test rows.
pub fn mean_in_domain_variance<P: Predictor + ?Sized>(model: &P, split: &EvalSplit) -> Result<f64> {
    let idx = split.indices(Region::InDomain);
    if idx.is_empty() {
        return Err(Error::Empty("in-domain test rows"));
    }
    let mut total = 0.0;
    for &i in &idx {
        let p = model.predict(split.inputs.row(i))?;
        total += p.variance.iter().sum::<f64>() / p.dim() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Refits `kind` on the training set duplicated `k` times for every factor
/// and reports the mean in-domain variance.
pub fn shrinkage_study(
    config: &Bench1dConfig,
    kind: &EstimatorKind,
    factors: &[usize],
    spec: &NetworkSpec,
    train: &TrainConfig,
) -> Result<Vec<(usize, f64)>> {
    let (data, split) = generate(config)?;
    factors
        .iter()
        .map(|&k| {
            if k == 0 {
                return Err(Error::invalid("duplication factor must be >= 1"));
            }
            let model = kind.fit(&data.repeated(k), spec, train)?;
            Ok((k, mean_in_domain_variance(&model, &split)?))
        })
        .collect()
}
