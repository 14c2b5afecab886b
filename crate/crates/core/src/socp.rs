//! Small second-order cone programs over a boxed control vector.
//!
//! Problems have the form
//!
//! ```text
//! minimize    uᵀPu + qᵀu
//! subject to  c_k ‖A_k ū‖ ≤ b_kᵀu + d_k     for every cone k, ū = [1; u]
//!             u_min ≤ u ≤ u_max
//! ```
//!
//! and are solved by a primal log-barrier method. A phase-I problem that
//! maximises the smallest constraint slack supplies a strictly feasible start
//! or, when none exists, the least-violating control.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `c ‖A ū‖ ≤ bᵀu + d` with `A` stored row by row over `ū = [1; u]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub c: f64,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub d: f64,
}

impl Cone {
    pub fn linear(b: Vec<f64>, d: f64) -> Self {
        Cone {
            c: 0.0,
            a: Vec::new(),
            b,
            d,
        }
    }

    /// `bᵀu + d`.
    pub fn affine(&self, u: &[f64]) -> f64 {
        self.d + self.b.iter().zip(u).map(|(b, x)| b * x).sum::<f64>()
    }

    /// `‖A ū‖`.
    pub fn norm(&self, u: &[f64]) -> f64 {
        let sq: f64 = self.a.iter().map(|r| {
            let v = row_dot(r, u);
            v * v
        }).sum();
        libm::sqrt(sq)
    }

    /// Constraint slack `bᵀu + d − c‖Aū‖`; non-negative when satisfied.
    pub fn residual(&self, u: &[f64]) -> f64 {
        self.affine(u) - self.c * self.norm(u)
    }
}

fn row_dot(row: &[f64], u: &[f64]) -> f64 {
    row[0] + row[1..].iter().zip(u).map(|(a, x)| a * x).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeProgram {
    /// Row-major `n x n` PSD cost matrix.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub cones: Vec<Cone>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
}

impl ConeProgram {
    /// `min ‖u‖² + qᵀu` over the box, no cones.
    pub fn boxed(q: Vec<f64>, u_min: Vec<f64>, u_max: Vec<f64>) -> Self {
        let n = q.len();
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            p[i * n + i] = 1.0;
        }
        ConeProgram {
            p,
            q,
            cones: Vec::new(),
            u_min,
            u_max,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::invalid("control dimension must be >= 1"));
        }
        Error::check_len("cost matrix", n * n, self.p.len())?;
        Error::check_len("u_min", n, self.u_min.len())?;
        Error::check_len("u_max", n, self.u_max.len())?;
        for i in 0..n {
            if !(self.u_min[i] < self.u_max[i]) {
                return Err(Error::invalid("box bounds need u_min < u_max"));
            }
            for j in 0..n {
                if (self.p[i * n + j] - self.p[j * n + i]).abs() > 1e-12 {
                    return Err(Error::invalid("cost matrix must be symmetric"));
                }
            }
        }
        for k in &self.cones {
            Error::check_len("cone b", n, k.b.len())?;
            for r in &k.a {
                Error::check_len("cone row", n + 1, r.len())?;
            }
            if !(k.c >= 0.0) || !k.c.is_finite() {
                return Err(Error::invalid("cone multiplier must be finite and >= 0"));
            }
        }
        let all_finite = self.p.iter().chain(&self.q).chain(&self.u_min).chain(&self.u_max).all(|v| v.is_finite())
            && self
                .cones
                .iter()
                .all(|k| k.d.is_finite() && k.b.iter().chain(k.a.iter().flatten()).all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::invalid("program data must be finite"));
        }
        Ok(())
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        let n = self.dim();
        let mut v = 0.0;
        for i in 0..n {
            v += self.q[i] * u[i];
            for j in 0..n {
                v += u[i] * self.p[i * n + j] * u[j];
            }
        }
        v
    }

    /// Smallest cone slack at `u` (`+∞` without cones).
    pub fn min_residual(&self, u: &[f64]) -> f64 {
        self.cones.iter().map(|k| k.residual(u)).fold(f64::INFINITY, f64::min)
    }

    pub fn in_box(&self, u: &[f64], tol: f64) -> bool {
        u.iter()
            .zip(self.u_min.iter().zip(&self.u_max))
            .all(|(x, (lo, hi))| *x >= lo - tol && *x <= hi + tol)
    }

    /// Same program with every cone row scaled by `factor`.
    pub fn scale_uncertainty(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for k in &mut out.cones {
            for r in &mut k.a {
                r.iter_mut().for_each(|v| *v *= factor);
            }
        }
        out
    }

    /// Same program with every cone multiplier set to zero.
    pub fn expectation_only(&self) -> Self {
        let mut out = self.clone();
        for k in &mut out.cones {
            k.c = 0.0;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub u: Vec<f64>,
    pub status: SolveStatus,
    pub objective: f64,
    /// Smallest cone slack at `u`.
    pub min_residual: f64,
    pub newton_steps: usize,
}

/// Constraints with slack at or above `-FEASIBILITY_TOL` count as satisfied.
pub const FEASIBILITY_TOL: f64 = 1e-6;

// Barrier terms over z = (u) or z = (u, t). With `phase_one` the cone slack is
// shifted by the last coordinate t.
struct Barrier<'a> {
    prog: &'a ConeProgram,
    phase_one: bool,
}

impl Barrier<'_> {
    fn n(&self) -> usize {
        self.prog.dim() + usize::from(self.phase_one)
    }

    /// Number of barrier "degrees" (2 per box dimension, 2 per cone).
    fn degree(&self) -> f64 {
        (2 * self.prog.dim() + 2 * self.prog.cones.len()) as f64
    }

    /// Value, gradient and Hessian of the barrier; `None` outside its domain.
    fn eval(&self, z: &[f64], grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) -> Option<f64> {
        let n = self.prog.dim();
        let dim = self.n();
        grad.fill(0.0);
        hess.fill(0.0);
        let mut value = 0.0;
        for i in 0..n {
            let lo = z[i] - self.prog.u_min[i];
            let hi = self.prog.u_max[i] - z[i];
            if !(lo > 0.0 && hi > 0.0) {
                return None;
            }
            value -= libm::log(lo) + libm::log(hi);
            grad[i] += -1.0 / lo + 1.0 / hi;
            hess[(i, i)] += 1.0 / (lo * lo) + 1.0 / (hi * hi);
        }
        let u = &z[..n];
        let mut ds = DVector::zeros(dim);
        let mut dd = DVector::zeros(dim);
        for k in &self.prog.cones {
            let mut s = k.affine(u);
            ds.fill(0.0);
            for i in 0..n {
                ds[i] = k.b[i];
            }
            if self.phase_one {
                s -= z[n];
                ds[n] = -1.0;
            }
            if !(s > 0.0) {
                return None;
            }
            let c2 = k.c * k.c;
            if c2 == 0.0 || k.a.is_empty() {
                value -= libm::log(s);
                for i in 0..dim {
                    grad[i] -= ds[i] / s;
                    for j in 0..dim {
                        hess[(i, j)] += ds[i] * ds[j] / (s * s);
                    }
                }
                continue;
            }
            // D = s² − c²‖w‖², w = Aū.
            let w: Vec<f64> = k.a.iter().map(|r| row_dot(r, u)).collect();
            let wn2: f64 = w.iter().map(|v| v * v).sum();
            let d = s * s - c2 * wn2;
            if !(d > 0.0) {
                return None;
            }
            value -= libm::log(d);
            dd.fill(0.0);
            for i in 0..dim {
                dd[i] = 2.0 * s * ds[i];
            }
            for (r, wv) in k.a.iter().zip(&w) {
                for i in 0..n {
                    dd[i] -= 2.0 * c2 * r[i + 1] * wv;
                }
            }
            for i in 0..dim {
                grad[i] -= dd[i] / d;
                for j in 0..dim {
                    let mut d2 = 2.0 * ds[i] * ds[j];
                    if i < n && j < n {
                        let aa: f64 = k.a.iter().map(|r| r[i + 1] * r[j + 1]).sum();
                        d2 -= 2.0 * c2 * aa;
                    }
                    hess[(i, j)] += dd[i] * dd[j] / (d * d) - d2 / d;
                }
            }
        }
        Some(value)
    }
}

// Minimises t·f0(z) + barrier(z) from a strictly feasible z by damped Newton.
struct Centering<'a, F> {
    barrier: Barrier<'a>,
    f0: F,
}

impl<F> Centering<'_, F>
where
    F: Fn(&[f64], &mut DVector<f64>, &mut DMatrix<f64>) -> f64,
{
    fn total(&self, t: f64, z: &[f64], g: &mut DVector<f64>, h: &mut DMatrix<f64>) -> Option<f64> {
        let dim = self.barrier.n();
        let mut g0 = DVector::zeros(dim);
        let mut h0 = DMatrix::zeros(dim, dim);
        let v0 = (self.f0)(z, &mut g0, &mut h0);
        let vb = self.barrier.eval(z, g, h)?;
        *g += g0 * t;
        *h += h0 * t;
        Some(t * v0 + vb)
    }

    fn center(&self, t: f64, z: &mut Vec<f64>, steps: &mut usize) -> bool {
        let dim = self.barrier.n();
        let mut g = DVector::zeros(dim);
        let mut h = DMatrix::zeros(dim, dim);
        let mut g2 = DVector::zeros(dim);
        let mut h2 = DMatrix::zeros(dim, dim);
        for _ in 0..100 {
            let Some(value) = self.total(t, z, &mut g, &mut h) else {
                return false;
            };
            *steps += 1;
            let Some(dz) = newton_direction(&h, &g) else {
                return false;
            };
            let decrement = -g.dot(&dz);
            if decrement / 2.0 <= 1e-12 {
                return true;
            }
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand: Vec<f64> = z.iter().zip(dz.iter()).map(|(a, b)| a + step * b).collect();
                if let Some(v) = self.total(t, &cand, &mut g2, &mut h2) {
                    if v <= value - 0.25 * step * decrement {
                        *z = cand;
                        moved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved {
                return true;
            }
        }
        true
    }
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let n = h.nrows();
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    for jitter in [0.0, 1e-14, 1e-12, 1e-10, 1e-8] {
        let mut hj = h.clone();
        for i in 0..n {
            hj[(i, i)] += jitter * scale;
        }
        if let Some(ch) = hj.cholesky() {
            let dz = ch.solve(&(-g));
            if dz.iter().all(|v| v.is_finite()) {
                return Some(dz);
            }
        }
    }
    None
}

const PHASE_ONE_STOP: f64 = 1e-7;

/// Maximises the smallest cone slack over the open box. Returns the
/// maximiser and its slack; stops early once the slack is safely positive.
fn phase_one(prog: &ConeProgram, steps: &mut usize) -> (Vec<f64>, f64) {
    let n = prog.dim();
    let center: Vec<f64> = prog.u_min.iter().zip(&prog.u_max).map(|(a, b)| 0.5 * (a + b)).collect();
    let r0 = prog.min_residual(&center);
    if r0 > 0.0 {
        return (center, r0);
    }
    let scale = prog
        .cones
        .iter()
        .map(|k| k.affine(&center).abs() + k.c * k.norm(&center))
        .fold(1.0, f64::max);
    let mut z = center;
    z.push(r0 - scale);
    let cent = Centering {
        barrier: Barrier { prog, phase_one: true },
        f0: |z: &[f64], g: &mut DVector<f64>, _h: &mut DMatrix<f64>| {
            g.fill(0.0);
            g[n] = -1.0;
            -z[n]
        },
    };
    let degree = cent.barrier.degree();
    let mut t = 1.0 / scale;
    let mut best = (z[..n].to_vec(), prog.min_residual(&z[..n]));
    for _ in 0..80 {
        if !cent.center(t, &mut z, steps) {
            break;
        }
        let r = prog.min_residual(&z[..n]);
        if r > best.1 {
            best = (z[..n].to_vec(), r);
        }
        if r > PHASE_ONE_STOP * (1.0 + scale) || degree / t < 1e-11 * (1.0 + scale) {
            break;
        }
        t *= 10.0;
    }
    best
}

/// Solves the program. Infeasible programs return the control that maximises
/// the smallest cone slack, with status [`SolveStatus::Infeasible`].
pub fn solve(prog: &ConeProgram) -> Result<Solution> {
    prog.validate()?;
    let n = prog.dim();
    let mut steps = 0usize;
    let (start, slack) = if prog.cones.is_empty() {
        let c: Vec<f64> = prog.u_min.iter().zip(&prog.u_max).map(|(a, b)| 0.5 * (a + b)).collect();
        (c, f64::INFINITY)
    } else {
        phase_one(prog, &mut steps)
    };
    if !(slack > 0.0) {
        let u = clamp_box(prog, start);
        let status = if prog.min_residual(&u) >= -FEASIBILITY_TOL {
            SolveStatus::Optimal
        } else {
            SolveStatus::Infeasible
        };
        return Ok(finish(prog, u, status, steps));
    }
    let cent = Centering {
        barrier: Barrier { prog, phase_one: false },
        f0: |u: &[f64], g: &mut DVector<f64>, h: &mut DMatrix<f64>| {
            for i in 0..n {
                g[i] = prog.q[i];
                for j in 0..n {
                    let pij = prog.p[i * n + j];
                    g[i] += 2.0 * pij * u[j];
                    h[(i, j)] = 2.0 * pij;
                }
            }
            prog.objective(u)
        },
    };
    let degree = cent.barrier.degree();
    let mut z = start;
    let mut t = 1.0;
    for _ in 0..60 {
        if !cent.center(t, &mut z, &mut steps) {
            break;
        }
        if degree / t < 1e-10 {
            break;
        }
        t *= 20.0;
    }
    Ok(finish(prog, z, SolveStatus::Optimal, steps))
}

fn clamp_box(prog: &ConeProgram, mut u: Vec<f64>) -> Vec<f64> {
    for i in 0..u.len() {
        u[i] = u[i].clamp(prog.u_min[i], prog.u_max[i]);
    }
    u
}

fn finish(prog: &ConeProgram, u: Vec<f64>, status: SolveStatus, steps: usize) -> Solution {
    Solution {
        objective: prog.objective(&u),
        min_residual: prog.min_residual(&u),
        u,
        status,
        newton_steps: steps,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum FallbackAction {
    Retrained,
    ScaledUncertainty { factor: f64 },
    ExpectationOnly,
    LeastViolation,
}

/// Result of [`feasibility_fallback`]: the solution, the actions taken and
/// the program the solution is feasible for.
#[derive(Debug, Clone, PartialEq)]
pub struct FallbackOutcome {
    pub solution: Solution,
    pub actions: Vec<FallbackAction>,
    pub program: ConeProgram,
}

/// Solves `prog`, and on infeasibility tries in order: one rebuild through
/// `retrain`, halving every cone row up to five times, dropping the
/// uncertainty term, and finally the least-violating control.
pub fn feasibility_fallback<F>(prog: &ConeProgram, mut retrain: F) -> Result<FallbackOutcome>
where
    F: FnMut() -> Option<ConeProgram>,
{
    let mut actions = Vec::new();
    let done = |solution: Solution, actions: Vec<FallbackAction>, program: ConeProgram| {
        Ok(FallbackOutcome {
            solution,
            actions,
            program,
        })
    };
    let first = solve(prog)?;
    if first.status == SolveStatus::Optimal {
        return done(first, actions, prog.clone());
    }
    let mut current = prog.clone();
    if let Some(rebuilt) = retrain() {
        actions.push(FallbackAction::Retrained);
        let s = solve(&rebuilt)?;
        if s.status == SolveStatus::Optimal {
            return done(s, actions, rebuilt);
        }
        current = rebuilt;
    }
    let mut factor = 1.0;
    for _ in 0..5 {
        factor *= 0.5;
        actions.push(FallbackAction::ScaledUncertainty { factor });
        let scaled = current.scale_uncertainty(factor);
        let s = solve(&scaled)?;
        if s.status == SolveStatus::Optimal {
            return done(s, actions, scaled);
        }
    }
    actions.push(FallbackAction::ExpectationOnly);
    let mean_only = current.expectation_only();
    let s = solve(&mean_only)?;
    if s.status != SolveStatus::Optimal {
        actions.push(FallbackAction::LeastViolation);
    }
    done(s, actions, mean_only)
}

/// With probability `epsilon` draws `u_r` uniformly in the box and returns
/// the closest control satisfying the same cones; otherwise, or when that
/// projection is infeasible, returns `u_opt`.
pub fn epsilon_greedy_safe<R: Rng + ?Sized>(u_opt: &[f64], epsilon: f64, prog: &ConeProgram, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid("epsilon must lie in [0, 1]"));
    }
    if epsilon == 0.0 || rng.random::<f64>() >= epsilon {
        return Ok(u_opt.to_vec());
    }
    let u_r: Vec<f64> = prog
        .u_min
        .iter()
        .zip(&prog.u_max)
        .map(|(lo, hi)| rng.random_range(*lo..*hi))
        .collect();
    project(&u_r, prog).map(|p| p.unwrap_or_else(|| u_opt.to_vec()))
}

/// Closest point to `target` (Euclidean) satisfying the cones and box of
/// `prog`; `None` when infeasible.
pub fn project(target: &[f64], prog: &ConeProgram) -> Result<Option<Vec<f64>>> {
    Error::check_len("projection target", prog.dim(), target.len())?;
    let mut proj = ConeProgram::boxed(target.iter().map(|v| -2.0 * v).collect(), prog.u_min.clone(), prog.u_max.clone());
    proj.cones = prog.cones.clone();
    let s = solve(&proj)?;
    Ok((s.status == SolveStatus::Optimal).then_some(s.u))
}
