//! Deep and anchored ensembles.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{member_seed, PosteriorPrediction, Predictor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, AnchorPrior, NetworkSpec, Objective, ParamVector, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Deep,
    Anchored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<ParamVector>,
    pub spec: NetworkSpec,
    pub kind: EnsembleKind,
    /// One prior draw per member; empty for deep ensembles.
    pub anchors: Vec<ParamVector>,
    pub lambda: Option<f64>,
}

impl EnsembleModel {
    pub fn new(
        members: Vec<ParamVector>,
        spec: NetworkSpec,
        kind: EnsembleKind,
        anchors: Vec<ParamVector>,
        lambda: Option<f64>,
    ) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::invalid("an ensemble needs at least two members"));
        }
        for m in &members {
            m.check(&spec)?;
        }
        if kind == EnsembleKind::Anchored {
            Error::check_len("anchors", members.len(), anchors.len())?;
            if !lambda.is_some_and(|l| l >= 0.0) {
                return Err(Error::invalid("anchored ensemble needs lambda >= 0"));
            }
        }
        Ok(EnsembleModel {
            members,
            spec,
            kind,
            anchors,
            lambda,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Raw output of every member at `x`.
    pub fn member_outputs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.members
            .iter()
            .map(|m| nn::forward(m, &self.spec, x, None))
            .collect()
    }
}

fn train_member(
    dataset: &Dataset,
    spec: &NetworkSpec,
    config: &TrainConfig,
    seed: u64,
    anchor: Option<AnchorPrior>,
) -> Result<ParamVector> {
    let mut cfg = config.with_seed(seed);
    let init = match &anchor {
        Some(a) => a.anchor.clone(),
        None => ParamVector::glorot(spec, &mut nn::stream_rng(seed, u64::MAX)),
    };
    cfg.l2_anchor = anchor;
    Ok(nn::train_from(init, dataset, spec, &cfg, Objective::Mse)?.params)
}

/// `size` members trained on MSE from independent seeds (and therefore
/// independent initialisations and shuffles).
pub fn fit_deep_ensemble(dataset: &Dataset, spec: &NetworkSpec, config: &TrainConfig, size: usize) -> Result<EnsembleModel> {
    let seeds: Vec<u64> = (0..size).map(|l| member_seed(config.seed, l)).collect();
    fit_deep_ensemble_with_seeds(dataset, spec, config, &seeds)
}

pub fn fit_deep_ensemble_with_seeds(
    dataset: &Dataset,
    spec: &NetworkSpec,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<EnsembleModel> {
    if seeds.len() < 2 {
        return Err(Error::invalid("ensemble size must be >= 2"));
    }
    let members = seeds
        .iter()
        .map(|&s| train_member(dataset, spec, config, s, None))
        .collect::<Result<Vec<_>>>()?;
    EnsembleModel::new(members, spec.clone(), EnsembleKind::Deep, Vec::new(), None)
}

/// Anchor prior standard deviation as a multiple of the Glorot scale.
pub const ANCHOR_PRIOR_SCALE: f64 = 2.0;

/// Draws the anchor of the member trained with `seed` from the Gaussian
/// weight prior.
pub fn member_anchor(spec: &NetworkSpec, seed: u64) -> ParamVector {
    ParamVector::sample_prior(spec, ANCHOR_PRIOR_SCALE, &mut nn::stream_rng(seed, u64::MAX - 1))
}

/// Randomised-MAP ensemble: member `l` starts at its own anchor `θ_a,l` and
/// minimises `MSE + (lambda / |D|) * ||β_l - θ_a,l||²`.
pub fn fit_anchored_ensemble(
    dataset: &Dataset,
    spec: &NetworkSpec,
    config: &TrainConfig,
    size: usize,
    lambda: f64,
) -> Result<EnsembleModel> {
    if size < 2 {
        return Err(Error::invalid("ensemble size must be >= 2"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be finite and >= 0"));
    }
    let mut members = Vec::with_capacity(size);
    let mut anchors = Vec::with_capacity(size);
    for l in 0..size {
        let seed = member_seed(config.seed, l);
        let anchor = member_anchor(spec, seed);
        members.push(train_member(
            dataset,
            spec,
            config,
            seed,
            Some(AnchorPrior {
                lambda,
                anchor: anchor.clone(),
            }),
        )?);
        anchors.push(anchor);
    }
    EnsembleModel::new(members, spec.clone(), EnsembleKind::Anchored, anchors, Some(lambda))
}

/// Member average and unbiased across-member variance.
pub fn predict_ensemble(model: &EnsembleModel, x: &[f64]) -> Result<PosteriorPrediction> {
    PosteriorPrediction::from_samples(&model.member_outputs(x)?)
}

impl Predictor for EnsembleModel {
    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }
    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }
    fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction> {
        predict_ensemble(self, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Dataset {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 20.0 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x * x - 0.5 * x).collect();
        Dataset::from_xy(&xs, &ys).unwrap()
    }

    #[test]
    fn size_one_is_rejected() {
        let spec = NetworkSpec::mlp(1, 1, 1, 4);
        let cfg = TrainConfig::new(1, 1e-3, 8, 0);
        assert!(fit_deep_ensemble(&toy(), &spec, &cfg, 1).is_err());
        assert!(fit_anchored_ensemble(&toy(), &spec, &cfg, 1, 1.0).is_err());
    }

    #[test]
    fn identical_seeds_collapse_variance() {
        let spec = NetworkSpec::mlp(1, 1, 2, 6);
        let cfg = TrainConfig::new(20, 1e-2, 8, 3);
        let model = fit_deep_ensemble_with_seeds(&toy(), &spec, &cfg, &[42; 4]).unwrap();
        for x in [-2.0, 0.0, 0.3, 3.0] {
            assert_eq!(model.predict(&[x]).unwrap().variance, vec![0.0]);
        }
    }

    #[test]
    fn zero_lambda_is_plain_mse_training() {
        let spec = NetworkSpec::mlp(1, 1, 2, 6);
        let cfg = TrainConfig::new(15, 1e-2, 8, 9);
        let anchored = fit_anchored_ensemble(&toy(), &spec, &cfg, 2, 0.0).unwrap();
        for (l, (m, a)) in anchored.members.iter().zip(&anchored.anchors).enumerate() {
            let plain = nn::train_from(a.clone(), &toy(), &spec, &cfg.with_seed(member_seed(9, l)), Objective::Mse).unwrap();
            assert_eq!(*m, plain.params);
        }
    }

    #[test]
    fn huge_lambda_pins_member_to_anchor() {
        let spec = NetworkSpec::mlp(1, 1, 1, 4);
        // Plain SGD with a step small enough for the stiff penalty to contract.
        let cfg = TrainConfig::new(50, 1e-8, 40, 5).with_optimizer(nn::Optimizer::Sgd);
        let model = fit_anchored_ensemble(&toy(), &spec, &cfg, 2, 1e9).unwrap();
        for (m, a) in model.members.iter().zip(&model.anchors) {
            let max_dev = m
                .values
                .iter()
                .zip(&a.values)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(max_dev < 1e-6, "max deviation {max_dev}");
        }
    }

    #[test]
    fn prediction_matches_direct_recomputation() {
        let spec = NetworkSpec::mlp(2, 2, 1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let members: Vec<ParamVector> = (0..5).map(|_| ParamVector::glorot(&spec, &mut rng)).collect();
        let model = EnsembleModel::new(members.clone(), spec.clone(), EnsembleKind::Deep, vec![], None).unwrap();
        for _ in 0..10 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let p = predict_ensemble(&model, &x).unwrap();
            let outs: Vec<Vec<f64>> = members.iter().map(|m| nn::forward(m, &spec, &x, None).unwrap()).collect();
            for k in 0..2 {
                let mean = outs.iter().map(|o| o[k]).sum::<f64>() / 5.0;
                let var = outs.iter().map(|o| (o[k] - mean) * (o[k] - mean)).sum::<f64>() / 4.0;
                assert_eq!(p.mean[k], mean);
                assert_eq!(p.variance[k], var);
            }
        }
    }
}
