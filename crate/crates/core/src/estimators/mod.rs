//! Posterior predictors behind a common [`Predictor`] interface.
//!
//! Every estimator returns a diagonal Gaussian [`PosteriorPrediction`] per
//! query. Stochastic predictors (MC-Dropout, SWAG) draw their randomness from
//! a stream keyed by `(seed, x)`, so a prediction is a pure function of the
//! model and the query.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod dadee;
pub mod direct;
pub mod dropout;
pub mod ensemble;
pub mod gp;
pub mod laplace;
pub mod registry;
pub mod swag;

pub use dadee::{fit_dadee, predict_dadee, DadeeModel, DadeeParts};
pub use direct::{fit_deup, fit_mllv, DeupModel, MllvModel, PointModel};
pub use dropout::{dropout_samples, fit_mc_dropout, predict_mc_dropout, McDropoutModel};
pub use ensemble::{fit_anchored_ensemble, fit_deep_ensemble, predict_ensemble, EnsembleKind, EnsembleModel};
pub use gp::{fit_gp, fit_gp_auto, predict_gp, GpGrid, GpKernel, GpModel};
pub use laplace::{fit_laplace, predict_laplace, LaplaceConfig, LaplaceModel};
pub use registry::{EstimatorKind, FittedModel};
pub use swag::{fit_swag, SwagModel};

/// Per-query predictive mean and diagonal variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl PosteriorPrediction {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        Error::check_len("prediction variance", mean.len(), variance.len())?;
        if variance.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("negative or NaN predictive variance"));
        }
        Ok(PosteriorPrediction { mean, variance })
    }

    /// Mean and unbiased (n - 1) sample variance of `samples`, per output.
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("need at least two samples"));
        }
        let d = samples[0].len();
        let n = samples.len() as f64;
        let mut mean = alloc::vec![0.0; d];
        for s in samples {
            Error::check_len("sample dim", d, s.len())?;
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = alloc::vec![0.0; d];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n - 1.0);
        Ok(PosteriorPrediction { mean, variance: var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// A fitted model that produces a posterior prediction for any query.
pub trait Predictor {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction>;

    fn predict_many(&self, xs: &crate::data::Matrix) -> Result<Vec<PosteriorPrediction>> {
        xs.iter_rows().map(|x| self.predict(x)).collect()
    }
}

impl<P: Predictor + ?Sized> Predictor for alloc::boxed::Box<P> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction> {
        (**self).predict(x)
    }
}

/// Seed for ensemble member `index` derived from a run seed.
pub fn member_seed(seed: u64, index: usize) -> u64 {
    splitmix(seed ^ splitmix((index as u64).wrapping_add(0x5eed)))
}

/// Stream id keyed on the exact bit pattern of a query.
pub(crate) fn query_stream(x: &[f64]) -> u64 {
    x.iter().fold(0x9e37_79b9_7f4a_7c15, |h, v| splitmix(h ^ v.to_bits()))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
