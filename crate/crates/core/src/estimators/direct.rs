//! Direct variance estimators: MLLV (joint mean/variance likelihood) and
//! DEUP (mean network, then a variance network fit to its squared errors).
//! Also the plain point-estimate MLP.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{PosteriorPrediction, Predictor};
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::nn::{self, NetworkSpec, Objective, OutputLink, ParamVector, TrainConfig, VARIANCE_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MllvModel {
    pub params: ParamVector,
    /// Two-channel spec: `target_dim` means then `target_dim` raw variances.
    pub spec: NetworkSpec,
}

/// Trains `spec2ch` (output_dim = 2 x target_dim) on the Gaussian NLL.
pub fn fit_mllv(dataset: &Dataset, spec2ch: &NetworkSpec, config: &TrainConfig) -> Result<MllvModel> {
    Error::check_len("MLLV output dim (2 x target)", 2 * dataset.target_dim(), spec2ch.output_dim)?;
    let init = ParamVector::glorot(spec2ch, &mut nn::stream_rng(config.seed, u64::MAX));
    let params = nn::train_from(init, dataset, spec2ch, config, Objective::MllvNll)?.params;
    Ok(MllvModel {
        params,
        spec: spec2ch.clone(),
    })
}

impl Predictor for MllvModel {
    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }
    fn output_dim(&self) -> usize {
        self.spec.output_dim / 2
    }
    fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction> {
        let out = nn::forward(&self.params, &self.spec, x, None)?;
        let d = out.len() / 2;
        let variance = out[d..]
            .iter()
            .map(|z| libm::log1p(libm::exp(*z)) + VARIANCE_FLOOR)
            .collect();
        PosteriorPrediction::new(out[..d].to_vec(), variance)
    }
}

/// Deterministic MLP with zero predictive variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointModel {
    pub params: ParamVector,
    pub spec: NetworkSpec,
}

impl PointModel {
    pub fn fit(dataset: &Dataset, spec: &NetworkSpec, config: &TrainConfig) -> Result<Self> {
        Ok(PointModel {
            params: nn::train(dataset, spec, config)?.params,
            spec: spec.clone(),
        })
    }
}

impl Predictor for PointModel {
    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }
    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }
    fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction> {
        let mean = nn::forward(&self.params, &self.spec, x, None)?;
        let variance = alloc::vec![0.0; mean.len()];
        PosteriorPrediction::new(mean, variance)
    }
}

/// Spec of the variance network paired with a mean network: same body,
/// softplus link, no dropout.
pub fn variance_spec(mean_spec: &NetworkSpec) -> NetworkSpec {
    let mut s = mean_spec.clone().with_link(OutputLink::Softplus).with_dropout(0.0);
    if let nn::Head::ControlAffine { state_dim } = s.head {
        s.head = nn::Head::ControlAffineSquared { state_dim };
    }
    s
}

/// Seed of the variance network trained alongside a mean model.
pub fn variance_seed(seed: u64) -> u64 {
    super::member_seed(seed, usize::MAX)
}

/// Squared residual of `predict` on every training row, per target entry.
pub fn error_dataset<F>(dataset: &Dataset, mut predict: F) -> Result<Dataset>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    let mut errors = Matrix::zeros(dataset.len(), dataset.target_dim());
    for i in 0..dataset.len() {
        let pred = predict(i)?;
        Error::check_len("prediction dim", dataset.target_dim(), pred.len())?;
        for ((e, p), y) in errors.row_mut(i).iter_mut().zip(&pred).zip(dataset.targets.row(i)) {
            *e = (p - y) * (p - y);
        }
    }
    Dataset::with_context(dataset.inputs.clone(), errors, dataset.context.clone())
}

/// Trains the variance network on an error dataset with MSE through the
/// softplus link.
pub fn fit_variance_net(errors: &Dataset, var_spec: &NetworkSpec, config: &TrainConfig) -> Result<ParamVector> {
    let init = ParamVector::glorot(var_spec, &mut nn::stream_rng(config.seed, u64::MAX));
    Ok(nn::train_from(init, errors, var_spec, config, Objective::Mse)?.params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeupModel {
    pub mean_params: ParamVector,
    pub mean_spec: NetworkSpec,
    pub var_params: ParamVector,
    pub var_spec: NetworkSpec,
}

/// Stage one fits the mean network on MSE; stage two fits the variance
/// network to the squared training residuals of stage one.
pub fn fit_deup(dataset: &Dataset, spec: &NetworkSpec, config: &TrainConfig) -> Result<DeupModel> {
    let mean_params = nn::train(dataset, spec, config)?.params;
    let errors = error_dataset(dataset, |i| {
        let out = nn::forward(&mean_params, spec, dataset.inputs.row(i), None)?;
        Ok(nn::apply_head(spec, &out, dataset.context_row(i)))
    })?;
    let var_spec = variance_spec(spec);
    let var_params = fit_variance_net(&errors, &var_spec, &config.with_seed(variance_seed(config.seed)))?;
    Ok(DeupModel {
        mean_params,
        mean_spec: spec.clone(),
        var_params,
        var_spec,
    })
}

impl DeupModel {
    /// Variance-network output at `x`, clamped at zero.
    pub fn direct_variance(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(nn::forward(&self.var_params, &self.var_spec, x, None)?
            .into_iter()
            .map(|v| v.max(0.0))
            .collect())
    }
}

impl Predictor for DeupModel {
    fn input_dim(&self) -> usize {
        self.mean_spec.input_dim
    }
    fn output_dim(&self) -> usize {
        self.mean_spec.output_dim
    }
    fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction> {
        let mean = nn::forward(&self.mean_params, &self.mean_spec, x, None)?;
        PosteriorPrediction::new(mean, self.direct_variance(x)?)
    }
}
