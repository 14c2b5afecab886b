//! Independent oracles shared by the integration tests and the acceptance
//! target. Nothing here calls the code path it checks.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safeuq_core::data::{Dataset, Matrix};
use safeuq_core::estimators::gp::{fit_gp, predict_gp, GpKernel};
use safeuq_core::nn::{backward, Loss, NetworkSpec, ParamVector};
use safeuq_core::socp::{Cone, ConeProgram};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, half: f64) -> Matrix {
    let v = (0..rows * cols).map(|_| rng.random_range(-half..half)).collect();
    Matrix::from_vec(rows, cols, v).unwrap()
}

pub const LOSS_NAMES: [&str; 3] = ["mse", "mllv_nll", "anchored_mse"];

/// `‖analytic − fd‖ / max(‖analytic‖, ‖fd‖)` for one random network,
/// batch and loss. `which` indexes [`LOSS_NAMES`].
pub fn gradient_rel_error(seed: u64, which: usize) -> f64 {
    let mut r = rng(seed);
    let input = r.random_range(1..=3);
    let target = r.random_range(1..=2);
    let layers = r.random_range(1..=3);
    let units = r.random_range(2..=6);
    let out = if which == 1 { 2 * target } else { target };
    let spec = NetworkSpec::mlp(input, out, layers, units);
    let n = r.random_range(2..=12);
    let data = Dataset::new(uniform_matrix(&mut r, n, input, 2.0), uniform_matrix(&mut r, n, target, 1.5)).unwrap();
    let values: Vec<f64> = (0..spec.param_count()).map(|_| r.random_range(-0.8..0.8)).collect();
    let params = ParamVector::from_values(&spec, values).unwrap();
    let anchor_values: Vec<f64> = (0..spec.param_count()).map(|_| r.random_range(-1.0..1.0)).collect();
    let anchor = ParamVector::from_values(&spec, anchor_values).unwrap();
    let loss = match which {
        0 => Loss::Mse,
        1 => Loss::MllvNll,
        _ => Loss::AnchoredMse {
            anchor: &anchor,
            lambda: r.random_range(0.1..5.0),
            dataset_len: n,
        },
    };
    let (grad, _) = backward(&params, &spec, &data, loss).unwrap();
    let h = 1e-5;
    let mut diff2 = 0.0;
    let (mut a2, mut f2) = (0.0, 0.0);
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus.values[i] += h;
        let mut minus = params.clone();
        minus.values[i] -= h;
        let fd = (backward(&plus, &spec, &data, loss).unwrap().1 - backward(&minus, &spec, &data, loss).unwrap().1) / (2.0 * h);
        let a = grad.values[i];
        diff2 += (a - fd) * (a - fd);
        a2 += a * a;
        f2 += fd * fd;
    }
    let scale = a2.max(f2).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff2.sqrt() / scale
    }
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn dense_inverse(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x * n + col].abs().total_cmp(&m[y * n + col].abs()))
            .unwrap();
        for k in 0..n {
            m.swap(col * n + k, piv * n + k);
            inv.swap(col * n + k, piv * n + k);
        }
        let d = m[col * n + col];
        for k in 0..n {
            m[col * n + k] /= d;
            inv[col * n + k] /= d;
        }
        for row in 0..n {
            if row != col {
                let f = m[row * n + col];
                for k in 0..n {
                    m[row * n + k] -= f * m[col * n + k];
                    inv[row * n + k] -= f * inv[col * n + k];
                }
            }
        }
    }
    inv
}

/// Largest `|gp − oracle| / (1 + |oracle|)` over mean and variance at a few
/// random queries of one random dataset with `n ≤ 10`.
pub fn gp_oracle_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..=10);
    let dim = r.random_range(1..=3);
    let kernel = GpKernel {
        signal_var: r.random_range(0.2..3.0),
        length_scale: r.random_range(0.3..2.0),
        noise_var: r.random_range(0.01..0.5),
    };
    let xs = uniform_matrix(&mut r, n, dim, 2.0);
    let ys = uniform_matrix(&mut r, n, 1, 2.0);
    let model = fit_gp(&Dataset::new(xs.clone(), ys.clone()).unwrap(), kernel).unwrap();
    assert_eq!(model.jitter, 0.0);
    let k = |a: &[f64], b: &[f64]| -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        kernel.signal_var * (-d2 / (2.0 * kernel.length_scale * kernel.length_scale)).exp()
    };
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            gram[i * n + j] = k(xs.row(i), xs.row(j)) + if i == j { kernel.noise_var } else { 0.0 };
        }
    }
    let inv = dense_inverse(&gram, n);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let x: Vec<f64> = (0..dim).map(|_| r.random_range(-3.0..3.0)).collect();
        let ks: Vec<f64> = (0..n).map(|i| k(xs.row(i), &x)).collect();
        let kinv: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv[i * n + j] * ks[j]).sum()).collect();
        let mean: f64 = (0..n).map(|i| kinv[i] * ys.row(i)[0]).sum();
        let var = k(&x, &x) - (0..n).map(|i| ks[i] * kinv[i]).sum::<f64>() + kernel.noise_var;
        let p = predict_gp(&model, &x).unwrap();
        worst = worst
            .max((p.mean[0] - mean).abs() / (1.0 + mean.abs()))
            .max((p.variance[0] - var).abs() / (1.0 + var.abs()));
    }
    worst
}

/// A random 2-D program: random convex quadratic cost, box, and up to three
/// cones of which some may be unsatisfiable.
pub fn random_program(seed: u64) -> ConeProgram {
    let mut r = rng(seed);
    let a: f64 = r.random_range(0.2..2.0);
    let c = r.random_range(0.2..2.0);
    let off = r.random_range(-0.5..0.5) * (a * c).sqrt();
    let q = vec![r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
    let mut prog = ConeProgram::boxed(q, vec![-1.0, -1.5], vec![1.0, 1.5]);
    prog.p = vec![a, off, off, c];
    for _ in 0..r.random_range(0..=3) {
        let rows = r.random_range(0..=2);
        prog.cones.push(Cone {
            c: r.random_range(0.0..1.5),
            a: (0..rows).map(|_| (0..3).map(|_| r.random_range(-0.6..0.6)).collect()).collect(),
            b: vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
            d: r.random_range(-0.8..0.6),
        });
    }
    prog
}

fn objective(prog: &ConeProgram, u: [f64; 2]) -> f64 {
    let p = &prog.p;
    u[0] * (p[0] * u[0] + p[1] * u[1]) + u[1] * (p[2] * u[0] + p[3] * u[1]) + prog.q[0] * u[0] + prog.q[1] * u[1]
}

fn slack(cone: &Cone, u: [f64; 2]) -> f64 {
    let norm2: f64 = cone
        .a
        .iter()
        .map(|row| {
            let v = row[0] + row[1] * u[0] + row[2] * u[1];
            v * v
        })
        .sum();
    cone.b[0] * u[0] + cone.b[1] * u[1] + cone.d - cone.c * norm2.sqrt()
}

fn feasible(prog: &ConeProgram, u: [f64; 2]) -> bool {
    prog.cones.iter().all(|k| slack(k, u) >= 0.0)
}

fn grid_best(prog: &ConeProgram, lo: [f64; 2], hi: [f64; 2], n: usize) -> Option<([f64; 2], f64)> {
    let mut best: Option<([f64; 2], f64)> = None;
    for i in 0..n {
        for j in 0..n {
            let u = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64,
            ];
            if feasible(prog, u) {
                let f = objective(prog, u);
                if best.is_none_or(|(_, b)| f < b) {
                    best = Some((u, f));
                }
            }
        }
    }
    best
}

/// `GRID x GRID` search over the box, then three zoomed grids of the same
/// size spanning eight cells either side of the incumbent. `None` when no
/// grid point is feasible.
pub const GRID: usize = 401;

pub fn grid_oracle(prog: &ConeProgram) -> Option<([f64; 2], f64)> {
    let (lo, hi) = ([prog.u_min[0], prog.u_min[1]], [prog.u_max[0], prog.u_max[1]]);
    let mut best = grid_best(prog, lo, hi, GRID)?;
    let cells = 8.0;
    let mut half = [
        cells * (hi[0] - lo[0]) / (GRID - 1) as f64,
        cells * (hi[1] - lo[1]) / (GRID - 1) as f64,
    ];
    for _ in 0..3 {
        let zl = [(best.0[0] - half[0]).max(lo[0]), (best.0[1] - half[1]).max(lo[1])];
        let zh = [(best.0[0] + half[0]).min(hi[0]), (best.0[1] + half[1]).min(hi[1])];
        if let Some(b) = grid_best(prog, zl, zh, GRID) {
            if b.1 < best.1 {
                best = b;
            }
        }
        half = [
            cells * half[0] * 2.0 / (GRID - 1) as f64,
            cells * half[1] * 2.0 / (GRID - 1) as f64,
        ];
    }
    Some(best)
}

/// `Φ(z)` by composite Simpson quadrature of the density from 0.
pub fn normal_cdf_quadrature(z: f64) -> f64 {
    let n = 4000;
    let h = z / n as f64;
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = phi(0.0) + phi(z);
    for i in 1..n {
        s += phi(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 + s * h / 3.0
}

/// Quantile by bisection on [`normal_cdf_quadrature`].
pub fn normal_quantile_oracle(p: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf_quadrature(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
