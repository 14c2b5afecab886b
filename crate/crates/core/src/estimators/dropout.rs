//! Monte-Carlo dropout, with fresh masks per query or a frozen mask set
//! reused for every query.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{query_stream, PosteriorPrediction, Predictor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, DropoutMask, NetworkSpec, ParamVector, TrainConfig};

/// Trains with dropout active; the network is then sampled at inference time.
pub fn fit_mc_dropout(dataset: &Dataset, spec: &NetworkSpec, config: &TrainConfig) -> Result<ParamVector> {
    if !(spec.dropout_rate > 0.0) {
        return Err(Error::invalid("MC-Dropout needs dropout_rate > 0"));
    }
    Ok(nn::train(dataset, spec, config)?.params)
}

fn masks_for(spec: &NetworkSpec, n_samples: usize, seed: u64, stream: u64) -> Vec<DropoutMask> {
    let mut rng = nn::stream_rng(seed, stream);
    (0..n_samples).map(|_| DropoutMask::sample(spec, &mut rng)).collect()
}

fn predict_with_masks(params: &ParamVector, spec: &NetworkSpec, x: &[f64], masks: &[DropoutMask]) -> Result<PosteriorPrediction> {
    let outs = masks
        .iter()
        .map(|m| nn::forward(params, spec, x, Some(m)))
        .collect::<Result<Vec<_>>>()?;
    PosteriorPrediction::from_samples(&outs)
}

/// Raw outputs of `n_samples` forward passes under fresh masks keyed on
/// `(seed, x)`.
pub fn dropout_samples(params: &ParamVector, spec: &NetworkSpec, x: &[f64], n_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    masks_for(spec, n_samples, seed, query_stream(x))
        .iter()
        .map(|m| nn::forward(params, spec, x, Some(m)))
        .collect()
}

/// `n_samples` stochastic forward passes. `frozen = true` reuses one mask set
/// drawn from `seed` for every query; otherwise masks are redrawn per query
/// from a stream keyed on `(seed, x)`.
pub fn predict_mc_dropout(
    params: &ParamVector,
    spec: &NetworkSpec,
    x: &[f64],
    n_samples: usize,
    frozen: bool,
    seed: u64,
) -> Result<PosteriorPrediction> {
    if n_samples < 2 {
        return Err(Error::invalid("MC-Dropout needs n_samples >= 2"));
    }
    let stream = if frozen { 0 } else { query_stream(x) };
    predict_with_masks(params, spec, x, &masks_for(spec, n_samples, seed, stream))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDropoutModel {
    pub params: ParamVector,
    pub spec: NetworkSpec,
    pub n_samples: usize,
    pub frozen: bool,
    pub seed: u64,
    #[serde(skip)]
    frozen_masks: Vec<DropoutMask>,
}

impl McDropoutModel {
    pub fn new(params: ParamVector, spec: NetworkSpec, n_samples: usize, frozen: bool, seed: u64) -> Result<Self> {
        params.check(&spec)?;
        if n_samples < 2 {
            return Err(Error::invalid("MC-Dropout needs n_samples >= 2"));
        }
        let frozen_masks = if frozen {
            masks_for(&spec, n_samples, seed, 0)
        } else {
            Vec::new()
        };
        Ok(McDropoutModel {
            params,
            spec,
            n_samples,
            frozen,
            seed,
            frozen_masks,
        })
    }
}

impl Predictor for McDropoutModel {
    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }
    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }
    fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction> {
        if self.frozen && self.frozen_masks.len() == self.n_samples {
            predict_with_masks(&self.params, &self.spec, x, &self.frozen_masks)
        } else {
            predict_mc_dropout(&self.params, &self.spec, x, self.n_samples, self.frozen, self.seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn needs_two_samples() {
        let spec = NetworkSpec::mlp(1, 1, 1, 4).with_dropout(0.2);
        let p = ParamVector::zeros(&spec);
        assert!(predict_mc_dropout(&p, &spec, &[0.0], 1, false, 0).is_err());
    }

    #[test]
    fn zero_rate_is_deterministic_forward() {
        let spec = NetworkSpec::mlp(1, 1, 2, 6);
        let p = ParamVector::glorot(&spec, &mut ChaCha8Rng::seed_from_u64(2));
        let pred = predict_mc_dropout(&p, &spec, &[0.4], 5, false, 1).unwrap();
        assert_eq!(pred.variance, alloc::vec![0.0]);
        assert_eq!(pred.mean, nn::forward(&p, &spec, &[0.4], None).unwrap());
    }

    #[test]
    fn frozen_masks_reused_across_queries() {
        let spec = NetworkSpec::mlp(1, 1, 2, 8).with_dropout(0.3);
        let p = ParamVector::glorot(&spec, &mut ChaCha8Rng::seed_from_u64(4));
        let model = McDropoutModel::new(p.clone(), spec.clone(), 5, true, 7).unwrap();
        let masks = masks_for(&spec, 5, 7, 0);
        for x in [-1.0, 0.0, 2.5] {
            let expected = predict_with_masks(&p, &spec, &[x], &masks).unwrap();
            assert_eq!(model.predict(&[x]).unwrap(), expected);
            assert_eq!(predict_mc_dropout(&p, &spec, &[x], 5, true, 7).unwrap(), expected);
        }
    }

    #[test]
    fn fresh_masks_are_deterministic_per_query() {
        let spec = NetworkSpec::mlp(1, 1, 2, 8).with_dropout(0.3);
        let p = ParamVector::glorot(&spec, &mut ChaCha8Rng::seed_from_u64(4));
        let a = predict_mc_dropout(&p, &spec, &[0.25], 5, false, 3).unwrap();
        let b = predict_mc_dropout(&p, &spec, &[0.25], 5, false, 3).unwrap();
        assert_eq!(a, b);
    }
}
