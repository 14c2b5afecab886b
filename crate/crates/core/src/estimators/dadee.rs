//! Anchored-ensemble epistemic variance plus a direct aleatoric estimator.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::direct::{error_dataset, fit_variance_net, variance_seed, variance_spec};
use super::ensemble::{fit_anchored_ensemble, predict_ensemble, EnsembleKind, EnsembleModel};
use super::{PosteriorPrediction, Predictor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, NetworkSpec, ParamVector, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DadeeModel {
    pub ensemble: EnsembleModel,
    pub var_params: ParamVector,
    pub var_spec: NetworkSpec,
}

/// Variance split returned by [`DadeeModel::predict_parts`].
#[derive(Debug, Clone, PartialEq)]
pub struct DadeeParts {
    pub mean: Vec<f64>,
    pub member_outputs: Vec<Vec<f64>>,
    pub epistemic: Vec<f64>,
    pub aleatoric: Vec<f64>,
}

/// Trains `size` anchored members, collects the squared error of the
/// ensemble mean on every training row, and fits the variance network to
/// those errors.
pub fn fit_dadee(dataset: &Dataset, spec: &NetworkSpec, config: &TrainConfig, size: usize, lambda: f64) -> Result<DadeeModel> {
    let ensemble = fit_anchored_ensemble(dataset, spec, config, size, lambda)?;
    let errors = error_dataset(dataset, |i| {
        let x = dataset.inputs.row(i);
        let mean = predict_ensemble(&ensemble, x)?.mean;
        Ok(nn::apply_head(spec, &mean, dataset.context_row(i)))
    })?;
    let var_spec = variance_spec(spec);
    let var_params = fit_variance_net(&errors, &var_spec, &config.with_seed(variance_seed(config.seed)))?;
    DadeeModel::new(ensemble, var_params, var_spec)
}

impl DadeeModel {
    pub fn new(ensemble: EnsembleModel, var_params: ParamVector, var_spec: NetworkSpec) -> Result<Self> {
        if ensemble.kind != EnsembleKind::Anchored {
            return Err(Error::invalid("DADEE needs an anchored ensemble"));
        }
        var_params.check(&var_spec)?;
        Error::check_len("variance net output", ensemble.spec.output_dim, var_spec.output_dim)?;
        Ok(DadeeModel {
            ensemble,
            var_params,
            var_spec,
        })
    }

    pub fn predict_parts(&self, x: &[f64]) -> Result<DadeeParts> {
        let member_outputs = self.ensemble.member_outputs(x)?;
        let ens = PosteriorPrediction::from_samples(&member_outputs)?;
        let aleatoric = nn::forward(&self.var_params, &self.var_spec, x, None)?
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        Ok(DadeeParts {
            mean: ens.mean,
            member_outputs,
            epistemic: ens.variance,
            aleatoric,
        })
    }
}

/// Ensemble mean; variance is the direct term plus the unbiased member
/// variance, per output.
pub fn predict_dadee(model: &DadeeModel, x: &[f64]) -> Result<PosteriorPrediction> {
    let parts = model.predict_parts(x)?;
    let variance = parts
        .epistemic
        .iter()
        .zip(&parts.aleatoric)
        .map(|(e, a)| e + a)
        .collect();
    PosteriorPrediction::new(parts.mean, variance)
}

impl Predictor for DadeeModel {
    fn input_dim(&self) -> usize {
        self.ensemble.spec.input_dim
    }
    fn output_dim(&self) -> usize {
        self.ensemble.spec.output_dim
    }
    fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction> {
        predict_dadee(self, x)
    }
}
