//! Named estimator configurations and a closed enum of fitted models.

use serde::{Deserialize, Serialize};

use super::{
    fit_anchored_ensemble, fit_dadee, fit_deep_ensemble, fit_deup, fit_gp_auto, fit_laplace, fit_mc_dropout, fit_mllv, fit_swag,
    DadeeModel, DeupModel, EnsembleModel, GpGrid, GpModel, LaplaceConfig, LaplaceModel, McDropoutModel, MllvModel, PointModel,
    PosteriorPrediction, Predictor, SwagModel,
};
use crate::data::Dataset;
use crate::error::Result;
use crate::nn::{NetworkSpec, TrainConfig};

/// Estimator and its own hyperparameters. The network body and training
/// schedule are supplied separately at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorKind {
    Mlp,
    McDropout {
        rate: f64,
        n_samples: usize,
    },
    McDropF {
        rate: f64,
        n_samples: usize,
    },
    Swag {
        lr: f64,
        snapshots: usize,
        n_samples: usize,
    },
    Laplace {
        prior_precision: f64,
    },
    Ensemble {
        size: usize,
    },
    Anchored {
        size: usize,
        lambda: f64,
    },
    Mllv,
    Deup,
    Dadee {
        size: usize,
        lambda: f64,
    },
    Gp,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Mlp => "MLP",
            EstimatorKind::McDropout { .. } => "MC-Dropout",
            EstimatorKind::McDropF { .. } => "MC-DropF",
            EstimatorKind::Swag { .. } => "SWAG",
            EstimatorKind::Laplace { .. } => "Laplace",
            EstimatorKind::Ensemble { .. } => "Ensemble",
            EstimatorKind::Anchored { .. } => "Anchored",
            EstimatorKind::Mllv => "MLLV",
            EstimatorKind::Deup => "DEUP",
            EstimatorKind::Dadee { .. } => "DADEE",
            EstimatorKind::Gp => "GP",
        }
    }

    /// Looks up a default configuration by (case-insensitive) name.
    pub fn by_name(name: &str) -> Option<Self> {
        let lower = name.to_ascii_lowercase();
        Self::defaults()
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == lower)
    }

    /// Every estimator with its default hyperparameters.
    pub fn defaults() -> [EstimatorKind; 11] {
        [
            EstimatorKind::Mlp,
            EstimatorKind::McDropout { rate: 0.2, n_samples: 5 },
            EstimatorKind::McDropF { rate: 0.2, n_samples: 5 },
            EstimatorKind::Swag {
                lr: 0.03,
                snapshots: 10,
                n_samples: 5,
            },
            EstimatorKind::Laplace { prior_precision: 1.0 },
            EstimatorKind::Ensemble { size: 5 },
            EstimatorKind::Anchored { size: 5, lambda: 10.0 },
            EstimatorKind::Mllv,
            EstimatorKind::Deup,
            EstimatorKind::Dadee { size: 5, lambda: 10.0 },
            EstimatorKind::Gp,
        ]
    }

    /// Trains the estimator. `spec` is the mean-network body; two-channel
    /// and variance networks are derived from it.
    pub fn fit(&self, dataset: &Dataset, spec: &NetworkSpec, config: &TrainConfig) -> Result<FittedModel> {
        Ok(match *self {
            EstimatorKind::Mlp => FittedModel::Point(PointModel::fit(dataset, spec, config)?),
            EstimatorKind::McDropout { rate, n_samples } | EstimatorKind::McDropF { rate, n_samples } => {
                let frozen = matches!(self, EstimatorKind::McDropF { .. });
                let s = spec.clone().with_dropout(rate);
                let params = fit_mc_dropout(dataset, &s, config)?;
                FittedModel::Dropout(McDropoutModel::new(params, s, n_samples, frozen, config.seed)?)
            }
            EstimatorKind::Swag { lr, snapshots, n_samples } => {
                FittedModel::Swag(fit_swag(dataset, spec, config, lr, snapshots, n_samples)?)
            }
            EstimatorKind::Laplace { prior_precision } => {
                let cfg = LaplaceConfig {
                    prior_precision,
                    ..LaplaceConfig::default()
                };
                FittedModel::Laplace(fit_laplace(dataset, spec, config, &cfg)?)
            }
            EstimatorKind::Ensemble { size } => FittedModel::Ensemble(fit_deep_ensemble(dataset, spec, config, size)?),
            EstimatorKind::Anchored { size, lambda } => {
                FittedModel::Ensemble(fit_anchored_ensemble(dataset, spec, config, size, lambda)?)
            }
            EstimatorKind::Mllv => {
                let s = spec.clone().with_output_dim(2 * spec.output_dim);
                FittedModel::Mllv(fit_mllv(dataset, &s, config)?)
            }
            EstimatorKind::Deup => FittedModel::Deup(fit_deup(dataset, spec, config)?),
            EstimatorKind::Dadee { size, lambda } => FittedModel::Dadee(fit_dadee(dataset, spec, config, size, lambda)?),
            EstimatorKind::Gp => FittedModel::Gp(fit_gp_auto(dataset, &GpGrid::default())?),
        })
    }
}

/// Any fitted estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedModel {
    Point(PointModel),
    Dropout(McDropoutModel),
    Swag(SwagModel),
    Laplace(LaplaceModel),
    Ensemble(EnsembleModel),
    Mllv(MllvModel),
    Deup(DeupModel),
    Dadee(DadeeModel),
    Gp(GpModel),
}

impl FittedModel {
    fn inner(&self) -> &dyn Predictor {
        match self {
            FittedModel::Point(m) => m,
            FittedModel::Dropout(m) => m,
            FittedModel::Swag(m) => m,
            FittedModel::Laplace(m) => m,
            FittedModel::Ensemble(m) => m,
            FittedModel::Mllv(m) => m,
            FittedModel::Deup(m) => m,
            FittedModel::Dadee(m) => m,
            FittedModel::Gp(m) => m,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FittedModel::Point(_) => "point",
            FittedModel::Dropout(_) => "dropout",
            FittedModel::Swag(_) => "swag",
            FittedModel::Laplace(_) => "laplace",
            FittedModel::Ensemble(_) => "ensemble",
            FittedModel::Mllv(_) => "mllv",
            FittedModel::Deup(_) => "deup",
            FittedModel::Dadee(_) => "dadee",
            FittedModel::Gp(_) => "gp",
        }
    }
}

impl Predictor for FittedModel {
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner().output_dim()
    }
    fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction> {
        self.inner().predict(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in EstimatorKind::defaults() {
            assert_eq!(EstimatorKind::by_name(k.name()), Some(k.clone()));
        }
        assert_eq!(EstimatorKind::by_name("dadee"), EstimatorKind::defaults().get(9).cloned());
        assert!(EstimatorKind::by_name("nope").is_none());
    }

    #[test]
    fn every_kind_fits_a_tiny_problem() {
        let xs: alloc::vec::Vec<f64> = (0..24).map(|i| i as f64 / 8.0 - 1.5).collect();
        let ys: alloc::vec::Vec<f64> = xs.iter().map(|x| 0.5 * x).collect();
        let data = Dataset::from_xy(&xs, &ys).unwrap();
        let spec = NetworkSpec::mlp(1, 1, 1, 4);
        let cfg = TrainConfig::new(3, 1e-3, 8, 1);
        for k in EstimatorKind::defaults() {
            let m = k.fit(&data, &spec, &cfg).unwrap();
            let p = m.predict(&[0.2]).unwrap();
            assert_eq!(p.dim(), 1, "{}", k.name());
            assert!(p.variance[0] >= 0.0);
        }
    }
}
