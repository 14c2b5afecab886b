//! Scores for posterior predictions: MSE, MSLL, RMSCE and variance
//! sensitivity.
//!
//! Multi-output scores are computed per output dimension and averaged.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::estimators::{PosteriorPrediction, Predictor};
use crate::special::normal_cdf;

/// Variance added to every prediction before scoring.
pub const SCORE_EPSILON: f64 = 0.01;
/// Probe offset used by [`sensitivity`] in reports.
pub const SENSITIVITY_DX: f64 = 1e-3;
/// Number of points in the calibration grid `{0, 0.01, ..., 1}`.
pub const CALIBRATION_GRID: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    InDomain,
    Ood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub regions: Vec<Region>,
}

impl EvalSplit {
    pub fn new(inputs: Matrix, targets: Matrix, regions: Vec<Region>) -> Result<Self> {
        Error::check_len("eval targets", inputs.rows(), targets.rows())?;
        Error::check_len("region labels", inputs.rows(), regions.len())?;
        Ok(EvalSplit {
            inputs,
            targets,
            regions,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self, region: Region) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.regions[i] == region).collect()
    }
}

/// One Table-I style row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub msll: f64,
    pub msll_in: f64,
    pub msll_ood: f64,
    pub rmsce: f64,
    pub rmsce_in: f64,
    pub rmsce_ood: f64,
    pub sensitivity: f64,
    pub train_time_s: f64,
    pub infer_time_s: f64,
}

impl MetricReport {
    /// Column names in serialization order.
    pub const COLUMNS: [&'static str; 10] = [
        "train_time_s",
        "infer_time_s",
        "mse",
        "msll",
        "msll_in",
        "msll_ood",
        "rmsce",
        "rmsce_in",
        "rmsce_ood",
        "sensitivity",
    ];

    /// Values in [`MetricReport::COLUMNS`] order.
    pub fn values(&self) -> [f64; 10] {
        [
            self.train_time_s,
            self.infer_time_s,
            self.mse,
            self.msll,
            self.msll_in,
            self.msll_ood,
            self.rmsce,
            self.rmsce_in,
            self.rmsce_ood,
            self.sensitivity,
        ]
    }

    /// Scores `preds` against `split`. Regions with no rows score NaN.
    pub fn from_predictions(
        preds: &[PosteriorPrediction],
        split: &EvalSplit,
        sensitivity: f64,
        train_time_s: f64,
        infer_time_s: f64,
    ) -> Result<Self> {
        Error::check_len("predictions", split.len(), preds.len())?;
        let region = |r: Region, f: fn(&[PosteriorPrediction], &Matrix) -> Result<f64>| -> Result<f64> {
            let idx = split.indices(r);
            if idx.is_empty() {
                return Ok(f64::NAN);
            }
            let p: Vec<PosteriorPrediction> = idx.iter().map(|&i| preds[i].clone()).collect();
            f(&p, &split.targets.select_rows(&idx))
        };
        Ok(MetricReport {
            mse: mse(preds, &split.targets)?,
            msll: msll(preds, &split.targets)?,
            msll_in: region(Region::InDomain, msll)?,
            msll_ood: region(Region::Ood, msll)?,
            rmsce: rmsce(preds, &split.targets)?,
            rmsce_in: region(Region::InDomain, rmsce)?,
            rmsce_ood: region(Region::Ood, rmsce)?,
            sensitivity,
            train_time_s,
            infer_time_s,
        })
    }
}

fn check_inputs(preds: &[PosteriorPrediction], targets: &Matrix) -> Result<usize> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    Error::check_len("targets", preds.len(), targets.rows())?;
    let d = targets.cols();
    for p in preds {
        Error::check_len("prediction dim", d, p.dim())?;
    }
    Ok(d)
}

pub fn mse(preds: &[PosteriorPrediction], targets: &Matrix) -> Result<f64> {
    let d = check_inputs(preds, targets)?;
    let mut total = 0.0;
    for (p, y) in preds.iter().zip(targets.iter_rows()) {
        for k in 0..d {
            total += (p.mean[k] - y[k]) * (p.mean[k] - y[k]);
        }
    }
    Ok(total / (preds.len() * d) as f64)
}

/// Gaussian negative log density of one target under `(mu, var + ε)`.
pub fn log_loss(mu: f64, var: f64, y: f64) -> f64 {
    let v = var + SCORE_EPSILON;
    0.5 * libm::log(2.0 * core::f64::consts::PI * v) + (y - mu) * (y - mu) / (2.0 * v)
}

/// Mean standardized log loss with the `ε = 0.01` variance floor.
pub fn msll(preds: &[PosteriorPrediction], targets: &Matrix) -> Result<f64> {
    let d = check_inputs(preds, targets)?;
    let mut total = 0.0;
    for (p, y) in preds.iter().zip(targets.iter_rows()) {
        for k in 0..d {
            total += log_loss(p.mean[k], p.variance[k], y[k]);
        }
    }
    Ok(total / (preds.len() * d) as f64)
}

/// Mass of the central interval of `N(mu, var + ε)` that just reaches `y`.
pub fn interval_mass(mu: f64, var: f64, y: f64) -> f64 {
    let z = (y - mu).abs() / libm::sqrt(var + SCORE_EPSILON);
    (2.0 * normal_cdf(z) - 1.0).clamp(0.0, 1.0)
}

/// Root-mean-square gap between each grid level `p_j` and the fraction of
/// targets whose interval mass is at most `p_j`.
pub fn rmsce(preds: &[PosteriorPrediction], targets: &Matrix) -> Result<f64> {
    let d = check_inputs(preds, targets)?;
    let n = preds.len();
    let mut acc = 0.0;
    let mut masses = Vec::with_capacity(n);
    for k in 0..d {
        masses.clear();
        masses.extend(
            preds
                .iter()
                .zip(targets.iter_rows())
                .map(|(p, y)| interval_mass(p.mean[k], p.variance[k], y[k])),
        );
        masses.sort_by(f64::total_cmp);
        let mut below = 0usize;
        let mut sq = 0.0;
        for j in 0..CALIBRATION_GRID {
            let level = j as f64 / (CALIBRATION_GRID - 1) as f64;
            while below < n && masses[below] <= level {
                below += 1;
            }
            let gap = level - below as f64 / n as f64;
            sq += gap * gap;
        }
        acc += libm::sqrt(sq / CALIBRATION_GRID as f64);
    }
    Ok(acc / d as f64)
}

/// `Σ_x |Var(x + Δx) − Var(x)| / Δx` over the probes, with every input
/// coordinate shifted by `dx`. Multi-output variances are averaged.
pub fn sensitivity<P: Predictor + ?Sized>(predictor: &P, probes: &Matrix, dx: f64) -> Result<f64> {
    if !(dx > 0.0) {
        return Err(Error::invalid("sensitivity step must be positive"));
    }
    let mut total = 0.0;
    let mut shifted = Vec::with_capacity(probes.cols());
    for x in probes.iter_rows() {
        shifted.clear();
        shifted.extend(x.iter().map(|v| v + dx));
        let a = predictor.predict(x)?;
        let b = predictor.predict(&shifted)?;
        let d = a.dim() as f64;
        let change: f64 = a.variance.iter().zip(&b.variance).map(|(u, v)| (v - u).abs()).sum();
        total += change / d / dx;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn pred(mu: f64, var: f64) -> PosteriorPrediction {
        PosteriorPrediction::new(vec![mu], vec![var]).unwrap()
    }

    fn col(ys: &[f64]) -> Matrix {
        Matrix::from_vec(ys.len(), 1, ys.to_vec()).unwrap()
    }

    #[test]
    fn msll_log_term_cancels() {
        let v = 1.0 / (2.0 * core::f64::consts::PI) - 0.01;
        assert!(msll(&[pred(1.5, v)], &col(&[1.5])).unwrap().abs() < 1e-15);
    }

    #[test]
    fn msll_unit_effective_variance() {
        let m = msll(&[pred(0.0, 0.99)], &col(&[0.0])).unwrap();
        assert!((m - 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn msll_matches_termwise_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut preds = Vec::new();
        let mut ys = Vec::new();
        let mut expected = 0.0;
        for _ in 0..10 {
            let mu: f64 = rng.random_range(-2.0..2.0);
            let var: f64 = rng.random_range(0.0..3.0);
            let y: f64 = rng.random_range(-3.0..3.0);
            let v = var + 0.01;
            expected += 0.5 * (2.0 * core::f64::consts::PI * v).ln() + (y - mu).powi(2) / (2.0 * v);
            preds.push(pred(mu, var));
            ys.push(y);
        }
        expected /= 10.0;
        assert!((msll(&preds, &col(&ys)).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn rmsce_perfect_calibration_is_zero() {
        // Interval masses (i + 0.5) / 100 put exactly j of the 100 targets at
        // or below level j / 100.
        let mut preds = Vec::new();
        let mut ys = Vec::new();
        for i in 0..100 {
            let mass = (i as f64 + 0.5) / 100.0;
            let z = crate::special::normal_quantile(0.5 + 0.5 * mass).unwrap();
            preds.push(pred(0.3, 0.24));
            ys.push(0.3 + 0.5 * z);
        }
        assert!(rmsce(&preds, &col(&ys)).unwrap() < 1e-12);
    }

    #[test]
    fn rmsce_far_targets_closed_form() {
        let preds: Vec<_> = (0..20).map(|i| pred(i as f64 * 0.1, 0.5)).collect();
        let ys = vec![1e6; 20];
        // Every mass is 1, so the fraction is 0 below the last level and 1 at it.
        let expected = ((0..100).map(|j| (j as f64 / 100.0).powi(2)).sum::<f64>() / 101.0).sqrt();
        let r = rmsce(&preds, &col(&ys)).unwrap();
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 0.5702).abs() < 1e-4);
    }

    #[test]
    fn rmsce_sampling_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut preds = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..10_000 {
            let mu: f64 = rng.random_range(-3.0..3.0);
            let var: f64 = rng.random_range(0.05..2.0);
            let y = Normal::new(mu, (var + SCORE_EPSILON).sqrt()).unwrap().sample(&mut rng);
            preds.push(pred(mu, var));
            ys.push(y);
        }
        assert!(rmsce(&preds, &col(&ys)).unwrap() < 0.02);
    }

    #[test]
    fn rmsce_rejects_empty() {
        assert!(rmsce(&[], &Matrix::zeros(0, 1)).is_err());
    }

    #[test]
    fn split_scores_combine_by_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 37;
        let preds: Vec<_> = (0..n).map(|_| pred(rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0))).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let regions: Vec<Region> = (0..n)
            .map(|i| if i % 3 == 0 { Region::Ood } else { Region::InDomain })
            .collect();
        let split = EvalSplit::new(col(&ys), col(&ys), regions).unwrap();
        let r = MetricReport::from_predictions(&preds, &split, 0.0, 0.0, 0.0).unwrap();
        let n_ood = split.indices(Region::Ood).len() as f64;
        let n_in = n as f64 - n_ood;
        let combined = (n_in * r.msll_in + n_ood * r.msll_ood) / n as f64;
        assert!((combined - r.msll).abs() < 1e-12);
        for v in [r.rmsce, r.rmsce_in, r.rmsce_ood] {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn zero_variance_scores_are_finite() {
        let preds = vec![pred(0.0, 0.0), pred(1.0, 0.0)];
        let ys = col(&[0.4, 0.2]);
        assert!(msll(&preds, &ys).unwrap().is_finite());
        let r = rmsce(&preds, &ys).unwrap();
        assert!((0.0..=1.0).contains(&r));
    }

    struct Affine(f64, f64);

    impl Predictor for Affine {
        fn input_dim(&self) -> usize {
            1
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn predict(&self, x: &[f64]) -> Result<PosteriorPrediction> {
            PosteriorPrediction::new(vec![0.0], vec![self.0 + self.1 * x[0]])
        }
    }

    #[test]
    fn sensitivity_examples() {
        let probes = col(&[0.0, 1.0]);
        assert_eq!(sensitivity(&Affine(0.7, 0.0), &probes, 1e-3).unwrap(), 0.0);
        assert_eq!(sensitivity(&Affine(0.0, 1.0), &probes, 1.0).unwrap(), 2.0);
        assert!(sensitivity(&Affine(0.0, 1.0), &probes, 0.0).is_err());
    }
}
