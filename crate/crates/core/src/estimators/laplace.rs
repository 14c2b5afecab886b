//! Full-covariance Laplace approximation with a generalised Gauss-Newton
//! curvature and linearised predictive.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{PosteriorPrediction, Predictor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::cholesky_with_jitter;
use crate::nn::{self, AnchorPrior, NetworkSpec, Objective, ParamVector, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceConfig {
    /// Precision of the isotropic Gaussian weight prior.
    pub prior_precision: f64,
    /// Added to the linearised predictive variance.
    pub noise_floor: f64,
    /// Parameter-count limit for the dense curvature.
    pub max_params: usize,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        LaplaceConfig {
            prior_precision: 1.0,
            noise_floor: 0.0,
            max_params: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceModel {
    pub map_weights: ParamVector,
    /// Row-major `p x p` posterior covariance over the weights.
    pub covariance: Vec<f64>,
    pub spec: NetworkSpec,
    /// Gaussian likelihood variance estimated from the MAP residuals.
    pub likelihood_variance: f64,
    pub jitter: f64,
    pub noise_floor: f64,
}

/// MAP training (MSE plus an L2 pull to zero scaled by the prior precision),
/// then `Σ = (Σ_i J_iᵀJ_i / σ² + prior_precision·I + jitter·I)⁻¹`.
pub fn fit_laplace(dataset: &Dataset, spec: &NetworkSpec, config: &TrainConfig, laplace: &LaplaceConfig) -> Result<LaplaceModel> {
    if spec.param_count() > laplace.max_params {
        return Err(Error::invalid("too many weights for a dense Laplace covariance"));
    }
    if !(laplace.prior_precision > 0.0) {
        return Err(Error::invalid("prior_precision must be positive"));
    }
    let mut cfg = config.clone();
    cfg.l2_anchor = Some(AnchorPrior {
        lambda: laplace.prior_precision,
        anchor: ParamVector::zeros(spec),
    });
    let init = ParamVector::glorot(spec, &mut nn::stream_rng(config.seed, u64::MAX));
    let map = nn::train_from(init, dataset, spec, &cfg, Objective::Mse)?.params;
    laplace_at(map, dataset, spec, laplace)
}

/// Curvature and covariance around fixed MAP weights.
pub fn laplace_at(map: ParamVector, dataset: &Dataset, spec: &NetworkSpec, laplace: &LaplaceConfig) -> Result<LaplaceModel> {
    if spec.head != nn::Head::Direct {
        return Err(Error::invalid("Laplace needs a direct head"));
    }
    let p = map.len();
    let mut sse = 0.0;
    let mut ggn = DMatrix::<f64>::zeros(p, p);
    for i in 0..dataset.len() {
        let x = dataset.inputs.row(i);
        let y = dataset.targets.row(i);
        let out = nn::forward(&map, spec, x, None)?;
        sse += out.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let jac = nn::jacobian(&map, spec, x)?;
        for k in 0..spec.output_dim {
            let row = &jac[k * p..(k + 1) * p];
            for a in 0..p {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..p {
                    ggn[(a, b)] += ra * row[b];
                }
            }
        }
    }
    let noise = (sse / (dataset.len() * spec.output_dim).max(1) as f64).max(1e-6);
    for a in 0..p {
        for b in a..p {
            let v = ggn[(a, b)] / noise;
            ggn[(a, b)] = v;
            ggn[(b, a)] = v;
        }
        ggn[(a, a)] += laplace.prior_precision;
    }
    let (chol, jitter) = cholesky_with_jitter(&ggn)?;
    let cov = chol.inverse();
    let mut covariance = vec![0.0; p * p];
    for a in 0..p {
        for b in 0..p {
            covariance[a * p + b] = 0.5 * (cov[(a, b)] + cov[(b, a)]);
        }
    }
    Ok(LaplaceModel {
        map_weights: map,
        covariance,
        spec: spec.clone(),
        likelihood_variance: noise,
        jitter,
        noise_floor: laplace.noise_floor,
    })
}

/// Linearised predictive: mean `f_MAP(x)`, variance `J Σ Jᵀ` per output plus
/// the configured noise floor.
pub fn predict_laplace(model: &LaplaceModel, x: &[f64]) -> Result<PosteriorPrediction> {
    let mean = nn::forward(&model.map_weights, &model.spec, x, None)?;
    let jac = nn::jacobian(&model.map_weights, &model.spec, x)?;
    let p = model.map_weights.len();
    let mut variance = Vec::with_capacity(mean.len());
    let mut tmp = vec![0.0; p];
    for k in 0..mean.len() {
        let j = &jac[k * p..(k + 1) * p];
        for (a, t) in tmp.iter_mut().enumerate() {
            let row = &model.covariance[a * p..(a + 1) * p];
            *t = row.iter().zip(j).map(|(c, v)| c * v).sum();
        }
        let v: f64 = tmp.iter().zip(j).map(|(t, v)| t * v).sum();
        variance.push(v.max(0.0) + model.noise_floor);
    }
    PosteriorPrediction::new(mean, variance)
}

impl Predictor for LaplaceModel {
    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }
    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }
    fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction> {
        predict_laplace(self, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn linear_model_variance_grows_with_distance() {
        let spec = NetworkSpec::mlp(1, 1, 0, 0);
        let xs: Vec<f64> = (-10..=10).map(|i| i as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x).collect();
        let data = Dataset::from_xy(&xs, &ys).unwrap();
        let map = ParamVector::from_values(&spec, vec![0.5, 0.0]).unwrap();
        let cfg = LaplaceConfig {
            prior_precision: 100.0,
            ..Default::default()
        };
        let m = laplace_at(map, &data, &spec, &cfg).unwrap();
        let mut last = -1.0;
        for x in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let v = predict_laplace(&m, &[x]).unwrap().variance[0];
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn covariance_is_symmetric_positive_definite() {
        let spec = NetworkSpec::mlp(1, 1, 2, 4);
        let xs: Vec<f64> = (0..25).map(|i| i as f64 / 12.0 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let data = Dataset::from_xy(&xs, &ys).unwrap();
        let m = fit_laplace(&data, &spec, &TrainConfig::new(20, 1e-2, 5, 3), &LaplaceConfig::default()).unwrap();
        let p = m.map_weights.len();
        let cov = DMatrix::from_row_slice(p, p, &m.covariance);
        assert_eq!(cov, cov.transpose());
        let eig = SymmetricEigen::new(cov);
        assert!(eig.eigenvalues.iter().all(|e| *e > 0.0));
    }

    #[test]
    fn linearised_variance_matches_weight_sampling() {
        // 1 -> 3 -> 3 -> 1: 22 weights
        let spec = NetworkSpec::mlp(1, 1, 2, 3);
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 10.0 - 1.5).collect();
        let ys: Vec<f64> = xs.iter().map(|x| libm::sin(*x) + 0.1 * libm::cos(7.0 * x)).collect();
        let data = Dataset::from_xy(&xs, &ys).unwrap();
        let m = fit_laplace(&data, &spec, &TrainConfig::new(200, 1e-2, 10, 1), &LaplaceConfig::default()).unwrap();
        let p = m.map_weights.len();
        let cov = DMatrix::from_row_slice(p, p, &m.covariance);
        let l = cov.cholesky().unwrap().unpack();
        let x = [0.7];
        let jac = nn::jacobian(&m.map_weights, &spec, &x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        let mut z = vec![0.0; p];
        for _ in 0..n {
            z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            // δθ = L z, linearised output shift = J δθ
            let mut shift = 0.0;
            for a in 0..p {
                let d: f64 = (0..=a).map(|b| l[(a, b)] * z[b]).sum();
                shift += jac[a] * d;
            }
            s1 += shift;
            s2 += shift * shift;
        }
        let mc = s2 / n as f64 - (s1 / n as f64) * (s1 / n as f64);
        let analytic = predict_laplace(&m, &x).unwrap().variance[0];
        assert!(((mc - analytic) / analytic).abs() < 0.05, "mc {mc} analytic {analytic}");
    }
}
