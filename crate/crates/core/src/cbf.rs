//! Elliptical control barrier functions and chance-constrained control
//! barrier conditions over a learned control-affine model.
//!
//! The state is a unicycle pose `(x, y, θ)` with control `u = (v, ω)` and
//! dynamics `ẋ = F(x) ū`, `ū = [1; u]`. Barriers are evaluated at a point a
//! short distance ahead of the robot so that ω enters the condition at
//! relative degree one.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::socp::{Cone, ConeProgram};
use crate::special::normal_quantile;

/// State dimension of the unicycle.
pub const STATE_DIM: usize = 3;
/// Control dimension of the unicycle.
pub const CONTROL_DIM: usize = 2;
/// Columns of `F`: drift plus one per control.
pub const AUGMENTED_DIM: usize = CONTROL_DIM + 1;

/// `c_p = √2 erf⁻¹(2p − 1)`, the standard normal quantile at `p`.
pub fn risk_multiplier(p: f64) -> Result<f64> {
    normal_quantile(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierSide {
    /// `h = (x − x₀)ᵀQ(x − x₀) − 1`: stay outside the ellipse.
    KeepOutside,
    /// `h = 1 − (x − x₀)ᵀQ(x − x₀)`: stay inside the ellipse.
    KeepInside,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSpec {
    pub center: Vec<f64>,
    /// Row-major symmetric positive-definite shape matrix.
    pub q: Vec<f64>,
    pub side: BarrierSide,
    /// Gain γ of the class-𝒦 term `α(h) = γh`.
    pub alpha_gain: f64,
    /// Margin ζ ≥ 0 required of the condition.
    pub zeta: f64,
}

impl BarrierSpec {
    /// Axis-aligned ellipse with the given semi-axes.
    pub fn ellipse(center: [f64; 2], semi_axes: [f64; 2], side: BarrierSide) -> Self {
        BarrierSpec {
            center: center.to_vec(),
            q: vec![1.0 / (semi_axes[0] * semi_axes[0]), 0.0, 0.0, 1.0 / (semi_axes[1] * semi_axes[1])],
            side,
            alpha_gain: 1.0,
            zeta: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        Error::check_len("barrier Q", n * n, self.q.len())?;
        if !(self.alpha_gain > 0.0) || !(self.zeta >= 0.0) {
            return Err(Error::invalid("barrier needs alpha_gain > 0 and zeta >= 0"));
        }
        for i in 0..n {
            for j in 0..n {
                if (self.q[i * n + j] - self.q[j * n + i]).abs() > 1e-12 {
                    return Err(Error::invalid("barrier Q must be symmetric"));
                }
            }
        }
        let m = nalgebra::DMatrix::from_row_slice(n, n, &self.q);
        if m.cholesky().is_none() {
            return Err(Error::NotPositiveDefinite { jitter: 0.0 });
        }
        Ok(())
    }

    fn sign(&self) -> f64 {
        match self.side {
            BarrierSide::KeepOutside => 1.0,
            BarrierSide::KeepInside => -1.0,
        }
    }
}

/// `h(x)` at a position `x`.
pub fn barrier_value(spec: &BarrierSpec, x: &[f64]) -> f64 {
    let n = spec.dim();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += (x[i] - spec.center[i]) * spec.q[i * n + j] * (x[j] - spec.center[j]);
        }
    }
    spec.sign() * (quad - 1.0)
}

/// `∇h(x) = ±2Q(x − x₀)`.
pub fn barrier_gradient(spec: &BarrierSpec, x: &[f64]) -> Vec<f64> {
    let n = spec.dim();
    (0..n)
        .map(|i| {
            let row: f64 = (0..n).map(|j| spec.q[i * n + j] * (x[j] - spec.center[j])).sum();
            2.0 * spec.sign() * row
        })
        .collect()
}

/// Point `look_ahead` metres ahead of the pose along its heading.
pub fn look_ahead_point(pose: &[f64], look_ahead: f64) -> [f64; 2] {
    [
        pose[0] + look_ahead * libm::cos(pose[2]),
        pose[1] + look_ahead * libm::sin(pose[2]),
    ]
}

/// `h` at the look-ahead point and its gradient with respect to the pose.
pub fn pose_barrier(spec: &BarrierSpec, pose: &[f64], look_ahead: f64) -> (f64, [f64; 3]) {
    let p = look_ahead_point(pose, look_ahead);
    let g = barrier_gradient(spec, &p);
    let (s, c) = (libm::sin(pose[2]), libm::cos(pose[2]));
    (
        barrier_value(spec, &p),
        [g[0], g[1], look_ahead * (-s * g[0] + c * g[1])],
    )
}

/// A belief over the row-major `3 x 3` matrix `F` at one pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsBelief {
    pub mean: Vec<f64>,
    /// Sampled matrices (ensemble members or dropout draws); may be empty.
    pub members: Vec<Vec<f64>>,
    /// Per-entry variance from a direct estimator; empty or all zero for none.
    pub entry_variance: Vec<f64>,
}

impl DynamicsBelief {
    pub fn exact(f: Vec<f64>) -> Self {
        DynamicsBelief {
            mean: f,
            members: Vec::new(),
            entry_variance: Vec::new(),
        }
    }

    /// Mean of the members, keeping them as samples.
    pub fn from_members(members: Vec<Vec<f64>>, entry_variance: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("members"));
        }
        let n = members[0].len();
        let mut mean = vec![0.0; n];
        for m in &members {
            Error::check_len("member matrix", n, m.len())?;
            mean.iter_mut().zip(m).for_each(|(a, b)| *a += b);
        }
        mean.iter_mut().for_each(|a| *a /= members.len() as f64);
        Ok(DynamicsBelief {
            mean,
            members,
            entry_variance,
        })
    }

    fn validate(&self) -> Result<()> {
        let n = STATE_DIM * AUGMENTED_DIM;
        Error::check_len("dynamics mean", n, self.mean.len())?;
        for m in &self.members {
            Error::check_len("dynamics member", n, m.len())?;
        }
        if !self.entry_variance.is_empty() {
            Error::check_len("dynamics entry variance", n, self.entry_variance.len())?;
        }
        Ok(())
    }
}

/// Distribution of `CBC(u) = ∇hᵀF ū + γh`: mean `bᵀu + d`, variance
/// `‖A_dev ū‖² + ‖A_ale ū‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbcDistribution {
    pub b: Vec<f64>,
    pub d: f64,
    /// Epistemic rows over `ū`, one per member.
    pub dev: Vec<Vec<f64>>,
    /// Aleatoric rows over `ū`, one per control column.
    pub aleatoric: Vec<Vec<f64>>,
    /// Barrier value at the look-ahead point.
    pub h: f64,
    pub zeta: f64,
}

impl CbcDistribution {
    pub fn mean(&self, u: &[f64]) -> f64 {
        self.d + self.b.iter().zip(u).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn variance(&self, u: &[f64]) -> f64 {
        self.dev
            .iter()
            .chain(&self.aleatoric)
            .map(|r| {
                let v = r[0] + r[1..].iter().zip(u).map(|(a, x)| a * x).sum::<f64>();
                v * v
            })
            .sum()
    }
}

pub fn cbc_distribution(spec: &BarrierSpec, belief: &DynamicsBelief, pose: &[f64], look_ahead: f64) -> Result<CbcDistribution> {
    spec.validate()?;
    belief.validate()?;
    Error::check_len("pose", STATE_DIM, pose.len())?;
    if spec.dim() != 2 {
        return Err(Error::invalid("unicycle barriers need a 2-D position"));
    }
    let (h, grad) = pose_barrier(spec, pose, look_ahead);
    let project = |f: &[f64]| -> Vec<f64> {
        (0..AUGMENTED_DIM)
            .map(|j| (0..STATE_DIM).map(|i| grad[i] * f[i * AUGMENTED_DIM + j]).sum())
            .collect()
    };
    let w = project(&belief.mean);
    let dev = if belief.members.len() >= 2 {
        let scale = 1.0 / libm::sqrt((belief.members.len() - 1) as f64);
        belief
            .members
            .iter()
            .map(|m| {
                let diff: Vec<f64> = m.iter().zip(&belief.mean).map(|(a, b)| a - b).collect();
                project(&diff).into_iter().map(|v| v * scale).collect()
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut aleatoric = Vec::new();
    if belief.entry_variance.iter().any(|v| *v > 0.0) {
        for j in 0..AUGMENTED_DIM {
            let s: f64 = (0..STATE_DIM)
                .map(|i| grad[i] * grad[i] * belief.entry_variance[i * AUGMENTED_DIM + j].max(0.0))
                .sum();
            let mut row = vec![0.0; AUGMENTED_DIM];
            row[j] = libm::sqrt(s);
            aleatoric.push(row);
        }
    }
    Ok(CbcDistribution {
        b: w[1..].to_vec(),
        d: w[0] + spec.alpha_gain * h,
        dev,
        aleatoric,
        h,
        zeta: spec.zeta,
    })
}

/// Goal-descent term of the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalTerm {
    /// `(∇VᵀF̂)` restricted to the control columns.
    pub gradient: Vec<f64>,
    pub lambda: f64,
}

/// `∇VᵀF̂` over the control columns for `V = ‖p − x_d‖²` at the look-ahead
/// point `p`.
pub fn goal_term(mean_f: &[f64], pose: &[f64], goal: [f64; 2], look_ahead: f64, lambda: f64) -> GoalTerm {
    let p = look_ahead_point(pose, look_ahead);
    let gx = 2.0 * (p[0] - goal[0]);
    let gy = 2.0 * (p[1] - goal[1]);
    let (s, c) = (libm::sin(pose[2]), libm::cos(pose[2]));
    let grad = [gx, gy, look_ahead * (-s * gx + c * gy)];
    let gradient = (1..AUGMENTED_DIM)
        .map(|j| (0..STATE_DIM).map(|i| grad[i] * mean_f[i * AUGMENTED_DIM + j]).sum())
        .collect();
    GoalTerm { gradient, lambda }
}

/// Minimises `‖u‖² + λ goalᵀu` subject to
/// `E[CBC] − ζ − c_p √Var[CBC] ≥ 0` for every barrier and the box.
pub fn build_program(
    cbcs: &[CbcDistribution],
    p: f64,
    zeta: f64,
    goal: &GoalTerm,
    u_min: &[f64],
    u_max: &[f64],
) -> Result<ConeProgram> {
    if !(0.5..1.0).contains(&p) {
        return Err(Error::invalid("acceptance risk p must lie in [0.5, 1)"));
    }
    if !(zeta >= 0.0) {
        return Err(Error::invalid("zeta must be >= 0"));
    }
    let c = risk_multiplier(p)?;
    let mut prog = ConeProgram::boxed(
        goal.gradient.iter().map(|g| goal.lambda * g).collect(),
        u_min.to_vec(),
        u_max.to_vec(),
    );
    for cbc in cbcs {
        Error::check_len("CBC control dim", prog.dim(), cbc.b.len())?;
        prog.cones.push(Cone {
            c,
            a: cbc.dev.iter().chain(&cbc.aleatoric).cloned().collect(),
            b: cbc.b.clone(),
            d: cbc.d - zeta - cbc.zeta,
        });
    }
    Ok(prog)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn couch() -> BarrierSpec {
        BarrierSpec::ellipse([0.0, 0.0], [1.5, 1.0], BarrierSide::KeepOutside)
    }

    fn room() -> BarrierSpec {
        BarrierSpec::ellipse([0.0, 0.0], [5.0, 4.0], BarrierSide::KeepInside)
    }

    #[test]
    fn barrier_at_center() {
        assert_eq!(barrier_value(&couch(), &[0.0, 0.0]), -1.0);
        assert_eq!(barrier_value(&room(), &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn risk_multiplier_values() {
        assert_eq!(risk_multiplier(0.5).unwrap(), 0.0);
        assert!((risk_multiplier(0.9).unwrap() - 1.2815515655446004).abs() < 1e-9);
        assert!((risk_multiplier(0.95).unwrap() - 1.6448536269514722).abs() < 1e-9);
        assert!(risk_multiplier(1.0).is_err());
    }

    #[test]
    fn rejects_indefinite_shape() {
        let mut b = couch();
        b.q = vec![1.0, 0.0, 0.0, -1.0];
        assert!(b.validate().is_err());
    }

    #[test]
    fn zero_variance_belief_has_no_cone_rows() {
        let f = vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let cbc = cbc_distribution(&couch(), &DynamicsBelief::exact(f), &[2.0, 0.5, 0.3], 0.1).unwrap();
        assert!(cbc.dev.is_empty() && cbc.aleatoric.is_empty());
        assert_eq!(cbc.variance(&[0.4, -1.0]), 0.0);
    }

    #[test]
    fn program_at_half_is_linear() {
        let cbc = CbcDistribution {
            b: vec![1.0, 0.5],
            d: 0.2,
            dev: vec![vec![0.3, 0.1, 0.0]],
            aleatoric: vec![],
            h: 0.2,
            zeta: 0.0,
        };
        let goal = GoalTerm {
            gradient: vec![0.0, 0.0],
            lambda: 1.0,
        };
        let prog = build_program(&[cbc], 0.5, 0.0, &goal, &[-1.0, -2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(prog.cones[0].c, 0.0);
        assert!(build_program(&[], 0.4, 0.0, &goal, &[-1.0, -2.0], &[1.0, 2.0]).is_err());
    }
    #[test]
    fn pose_gradient_matches_central_differences() {
        let pose = [2.1, -0.7, 0.9];
        for spec in [couch(), room()] {
            let (_, g) = pose_barrier(&spec, &pose, 0.1);
            for k in 0..3 {
                let step = 1e-6;
                let (mut a, mut b) = (pose, pose);
                a[k] += step;
                b[k] -= step;
                let fd = (pose_barrier(&spec, &a, 0.1).0 - pose_barrier(&spec, &b, 0.1).0) / (2.0 * step);
                assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()), "k={k}: {fd} vs {}", g[k]);
            }
        }
    }

    // Three hand-written members plus per-entry variance, scored against the
    // sample moments of the scalar CBC computed directly.
    #[test]
    fn cbc_moments_match_sample_oracle() {
        let members = vec![
            vec![0.1, 0.9, 0.0, -0.2, 0.0, 0.1, 0.0, 0.05, 1.1],
            vec![0.0, 1.2, 0.1, 0.1, 0.2, 0.0, 0.1, 0.0, 0.8],
            vec![-0.1, 0.7, -0.1, 0.0, -0.1, 0.2, 0.0, -0.1, 1.0],
        ];
        let s = vec![0.01, 0.02, 0.0, 0.03, 0.0, 0.04, 0.0, 0.05, 0.06];
        let pose = [2.0, 0.6, -0.4];
        let spec = couch();
        let belief = DynamicsBelief::from_members(members.clone(), s.clone()).unwrap();
        let cbc = cbc_distribution(&spec, &belief, &pose, 0.1).unwrap();
        let (h, g) = pose_barrier(&spec, &pose, 0.1);
        for u in [[0.3, -1.2], [1.0, 0.0], [-0.5, 2.0]] {
            let ub = [1.0, u[0], u[1]];
            let scalar = |f: &[f64]| -> f64 {
                (0..3).map(|i| g[i] * (0..3).map(|j| f[i * 3 + j] * ub[j]).sum::<f64>()).sum::<f64>() + spec.alpha_gain * h
            };
            let vals: Vec<f64> = members.iter().map(|m| scalar(m)).collect();
            let mean = vals.iter().sum::<f64>() / 3.0;
            let epi = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 2.0;
            let ale: f64 = (0..3)
                .map(|j| ub[j] * ub[j] * (0..3).map(|i| g[i] * g[i] * s[i * 3 + j]).sum::<f64>())
                .sum();
            assert!((cbc.mean(&u) - mean).abs() < 1e-12);
            assert!((cbc.variance(&u) - epi - ale).abs() < 1e-12 * (1.0 + epi + ale));
        }
    }

    #[test]
    fn cone_residual_is_chance_margin() {
        let members = vec![
            vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 1.0],
            vec![0.1, 0.8, 0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 0.9],
        ];
        let belief = DynamicsBelief::from_members(members, vec![0.02; 9]).unwrap();
        let mut spec = room();
        spec.zeta = 0.03;
        let cbc = cbc_distribution(&spec, &belief, &[3.5, 1.0, 2.0], 0.1).unwrap();
        let goal = GoalTerm {
            gradient: vec![0.0, 0.0],
            lambda: 1.0,
        };
        let p = 0.8;
        let prog = build_program(core::slice::from_ref(&cbc), p, 0.01, &goal, &[-1.0, -2.0], &[1.0, 2.0]).unwrap();
        let c = risk_multiplier(p).unwrap();
        for u in [[0.2, 0.3], [-1.0, 1.5]] {
            let want = cbc.mean(&u) - 0.01 - 0.03 - c * libm::sqrt(cbc.variance(&u));
            assert!((prog.cones[0].residual(&u) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cbc_mean_is_affine_in_u() {
        let f: Vec<f64> = (0..9).map(|i| 0.1 * i as f64 - 0.3).collect();
        let cbc = cbc_distribution(&couch(), &DynamicsBelief::exact(f), &[1.9, -0.4, 0.2], 0.1).unwrap();
        let (u, v, t) = ([0.3, -0.8], [-1.1, 0.4], 0.37);
        let mix = [t * u[0] + (1.0 - t) * v[0], t * u[1] + (1.0 - t) * v[1]];
        let lhs = cbc.mean(&mix);
        let rhs = t * cbc.mean(&u) + (1.0 - t) * cbc.mean(&v);
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
