//! Closed-loop unicycle in an elliptical room with an elliptical obstacle.
//! The controller learns the control-affine dynamics online from a replay
//! buffer and keeps both barriers under a chance constraint.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cbf::{self, BarrierSide, BarrierSpec, CbcDistribution, DynamicsBelief, AUGMENTED_DIM, STATE_DIM};
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::estimators::{direct, dropout_samples, member_seed};
use crate::nn::{self, AnchorPrior, Head, NetworkSpec, Objective, ParamVector, TrainConfig};
use crate::socp::{self, ConeProgram, FallbackAction};

/// Controller and dynamics model used in an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// True plant matrix, no uncertainty.
    Oracle,
    /// Learned point model with the variance term dropped (`c_p = 0`).
    Baseline,
    McDropout,
    Anchored,
    Deup,
    Dadee,
}

impl ControllerKind {
    pub const LEARNED: [ControllerKind; 5] = [
        ControllerKind::Baseline,
        ControllerKind::McDropout,
        ControllerKind::Anchored,
        ControllerKind::Deup,
        ControllerKind::Dadee,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Oracle => "oracle",
            ControllerKind::Baseline => "baseline",
            ControllerKind::McDropout => "mc_dropout",
            ControllerKind::Anchored => "anchored",
            ControllerKind::Deup => "deup",
            ControllerKind::Dadee => "dadee",
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        let n = name.to_ascii_lowercase().replace('-', "_");
        [ControllerKind::Oracle]
            .into_iter()
            .chain(Self::LEARNED)
            .find(|k| k.name() == n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub u_min: [f64; 2],
    pub u_max: [f64; 2],
    pub couch: BarrierSpec,
    pub room: BarrierSpec,
    pub checkpoints: Vec<[f64; 2]>,
    pub checkpoint_radius: f64,
    pub start: [f64; 3],
    pub buffer_capacity: usize,
    pub train_every: usize,
    pub train_epochs: usize,
    pub epsilon: f64,
    pub p_k: f64,
    pub episode_steps: usize,
    pub actuation_gains: [f64; 2],
    pub look_ahead: f64,
    /// Margin ζ in the chance constraint.
    pub zeta: f64,
    /// Goal-descent weight λ.
    pub goal_weight: f64,
    /// A step counts as CBC-active when some cone residual at the applied
    /// control is below this value.
    pub active_margin: f64,
    /// Random-control steps that seed the buffer before the controller starts.
    pub warmup_steps: usize,
    pub warmup_speed: f64,
    pub warmup_epochs: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub ensemble_size: usize,
    pub anchor_lambda: f64,
    /// Anchor prior standard deviation as a multiple of the Glorot scale.
    pub anchor_prior_scale: f64,
    pub dropout_rate: f64,
    pub dropout_samples: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let r = 3.0;
        let checkpoints = (0..3)
            .map(|k| {
                let a = k as f64 * TAU / 3.0;
                [r * libm::cos(a), r * libm::sin(a)]
            })
            .collect();
        SimConfig {
            dt: 0.05,
            u_min: [-1.0, -2.0],
            u_max: [1.0, 2.0],
            couch: BarrierSpec::ellipse([0.0, 0.0], [1.5, 1.0], BarrierSide::KeepOutside),
            room: BarrierSpec::ellipse([0.0, 0.0], [5.0, 4.0], BarrierSide::KeepInside),
            checkpoints,
            checkpoint_radius: 0.3,
            start: [3.0, 0.0, PI / 2.0],
            buffer_capacity: 10_000,
            train_every: 20,
            train_epochs: 10,
            epsilon: 0.1,
            p_k: 0.9,
            episode_steps: 1000,
            actuation_gains: [0.9, 1.1],
            look_ahead: 0.1,
            zeta: 0.01,
            goal_weight: 10.0,
            active_margin: 0.5,
            warmup_steps: 40,
            warmup_speed: 0.3,
            warmup_epochs: 50,
            hidden_layers: 2,
            hidden_units: 16,
            learning_rate: 3e-3,
            batch_size: 32,
            ensemble_size: 5,
            anchor_lambda: 1.0,
            anchor_prior_scale: 1.0,
            dropout_rate: 0.2,
            dropout_samples: 10,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        if self.buffer_capacity == 0 || self.train_every == 0 {
            return Err(Error::invalid("buffer_capacity and train_every must be positive"));
        }
        if self.checkpoints.len() != 3 {
            return Err(Error::invalid("exactly three checkpoints are required"));
        }
        if (0..2).any(|i| !(self.u_min[i] < self.u_max[i])) {
            return Err(Error::invalid("u_min must be below u_max"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid("epsilon must lie in [0, 1]"));
        }
        if !(self.p_k >= 0.5 && self.p_k < 1.0) {
            return Err(Error::invalid("p_k must lie in [0.5, 1)"));
        }
        if !(self.checkpoint_radius > 0.0 && self.look_ahead > 0.0 && self.zeta >= 0.0) {
            return Err(Error::invalid("checkpoint_radius, look_ahead > 0 and zeta >= 0 required"));
        }
        if self.ensemble_size < 2 || self.dropout_samples < 2 {
            return Err(Error::invalid("ensemble_size and dropout_samples must be >= 2"));
        }
        if self.warmup_steps == 0 || self.batch_size == 0 || self.hidden_units == 0 {
            return Err(Error::invalid("warmup_steps, batch_size and hidden_units must be positive"));
        }
        self.couch.validate()?;
        self.room.validate()
    }

    fn barriers(&self) -> [&BarrierSpec; 2] {
        [&self.couch, &self.room]
    }

    fn network_spec(&self) -> NetworkSpec {
        NetworkSpec::mlp(4, STATE_DIM * AUGMENTED_DIM, self.hidden_layers, self.hidden_units)
            .with_head(Head::ControlAffine { state_dim: STATE_DIM })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub pose: [f64; 3],
    pub active_checkpoint: usize,
    pub step: usize,
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let t = a - TAU * libm::floor((a + PI) / TAU);
    if t <= -PI {
        t + TAU
    } else {
        t
    }
}

/// True plant matrix `F(x)` for actuation gains `(g_v, g_ω)`.
pub fn true_dynamics(pose: &[f64], gains: [f64; 2]) -> Vec<f64> {
    let (s, c) = (libm::sin(pose[2]), libm::cos(pose[2]));
    vec![0.0, gains[0] * c, 0.0, 0.0, gains[0] * s, 0.0, 0.0, 0.0, gains[1]]
}

/// One explicit Euler step of the unicycle.
pub fn true_step(pose: [f64; 3], u: [f64; 2], gains: [f64; 2], dt: f64) -> [f64; 3] {
    [
        pose[0] + dt * gains[0] * u[0] * libm::cos(pose[2]),
        pose[1] + dt * gains[0] * u[0] * libm::sin(pose[2]),
        wrap_angle(pose[2] + dt * gains[1] * u[1]),
    ]
}

/// Finite-difference state derivative; the heading uses the wrapped
/// difference.
pub fn observe_derivative(prev: &[f64; 3], next: &[f64; 3], dt: f64) -> Result<[f64; 3]> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    Ok([
        (next[0] - prev[0]) / dt,
        (next[1] - prev[1]) / dt,
        wrap_angle(next[2] - prev[2]) / dt,
    ])
}

/// Learner input: `(cos θ, sin θ, x, y)`.
pub fn features(pose: &[f64]) -> [f64; 4] {
    [libm::cos(pose[2]), libm::sin(pose[2]), pose[0], pose[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: [f64; 3],
    pub control: [f64; 2],
    pub xdot: [f64; 3],
}

/// Bounded FIFO of transitions; the oldest entry is evicted first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    entries: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("buffer capacity must be positive"));
        }
        Ok(ReplayBuffer {
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.entries.iter()
    }

    /// Features as inputs, `ẋ` as targets and `ū = [1; u]` as context.
    pub fn to_dataset(&self) -> Result<Dataset> {
        if self.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        let n = self.len();
        let mut x = Vec::with_capacity(n * 4);
        let mut y = Vec::with_capacity(n * STATE_DIM);
        let mut c = Vec::with_capacity(n * AUGMENTED_DIM);
        for t in &self.entries {
            x.extend_from_slice(&features(&t.state));
            y.extend_from_slice(&t.xdot);
            c.extend_from_slice(&[1.0, t.control[0], t.control[1]]);
        }
        Dataset::with_context(
            Matrix::from_vec(n, 4, x)?,
            Matrix::from_vec(n, STATE_DIM, y)?,
            Some(Matrix::from_vec(n, AUGMENTED_DIM, c)?),
        )
    }
}

/// Online dynamics model. Every retrain continues from the current weights.
#[derive(Debug, Clone)]
struct Learner {
    kind: ControllerKind,
    spec: NetworkSpec,
    members: Vec<ParamVector>,
    anchors: Vec<ParamVector>,
    var: Option<(NetworkSpec, ParamVector)>,
    config: SimConfig,
    rounds: usize,
}

impl Learner {
    fn new(kind: ControllerKind, config: &SimConfig) -> Self {
        let mut spec = config.network_spec();
        if kind == ControllerKind::McDropout {
            spec = spec.with_dropout(config.dropout_rate);
        }
        let size = match kind {
            ControllerKind::Anchored | ControllerKind::Dadee => config.ensemble_size,
            _ => 1,
        };
        let anchored = matches!(kind, ControllerKind::Anchored | ControllerKind::Dadee);
        let mut members = Vec::with_capacity(size);
        let mut anchors = Vec::new();
        for l in 0..size {
            let seed = member_seed(config.seed, l);
            if anchored {
                let a = ParamVector::sample_prior(&spec, config.anchor_prior_scale, &mut nn::stream_rng(seed, u64::MAX - 1));
                members.push(a.clone());
                anchors.push(a);
            } else {
                members.push(ParamVector::glorot(&spec, &mut nn::stream_rng(seed, u64::MAX)));
            }
        }
        let var = matches!(kind, ControllerKind::Deup | ControllerKind::Dadee).then(|| {
            let vs = direct::variance_spec(&spec);
            let p = ParamVector::glorot(&vs, &mut nn::stream_rng(direct::variance_seed(config.seed), u64::MAX));
            (vs, p)
        });
        Learner {
            kind,
            spec,
            members,
            anchors,
            var,
            config: config.clone(),
            rounds: 0,
        }
    }

    fn retrain(&mut self, buffer: &ReplayBuffer, epochs: usize) -> Result<()> {
        let data = buffer.to_dataset()?;
        let round_seed = member_seed(self.config.seed ^ 0x7261_696e, self.rounds);
        self.rounds += 1;
        let base = TrainConfig::new(epochs, self.config.learning_rate, self.config.batch_size, round_seed);
        for (l, m) in self.members.iter_mut().enumerate() {
            let mut cfg = base.with_seed(member_seed(round_seed, l));
            if let Some(a) = self.anchors.get(l) {
                cfg.l2_anchor = Some(AnchorPrior {
                    lambda: self.config.anchor_lambda,
                    anchor: a.clone(),
                });
            }
            *m = nn::train_from(m.clone(), &data, &self.spec, &cfg, Objective::Mse)?.params;
        }
        if let Some((vs, vp)) = &self.var {
            let errors = direct::error_dataset(&data, |i| {
                let f = self.mean_matrix(data.inputs.row(i))?;
                Ok(nn::apply_head(&self.spec, &f, data.context_row(i)))
            })?;
            let cfg = base.with_seed(direct::variance_seed(round_seed));
            let p = nn::train_from(vp.clone(), &errors, vs, &cfg, Objective::Mse)?.params;
            self.var = Some((vs.clone(), p));
        }
        Ok(())
    }

    fn mean_matrix(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut mean = vec![0.0; self.spec.output_dim];
        for m in &self.members {
            let out = nn::forward(m, &self.spec, x, None)?;
            mean.iter_mut().zip(&out).for_each(|(a, b)| *a += b);
        }
        mean.iter_mut().for_each(|a| *a /= self.members.len() as f64);
        Ok(mean)
    }

    fn belief(&self, pose: &[f64]) -> Result<DynamicsBelief> {
        let x = features(pose);
        let entry_variance = match &self.var {
            Some((vs, vp)) => nn::forward(vp, vs, &x, None)?.into_iter().map(|v| v.max(0.0)).collect(),
            None => Vec::new(),
        };
        match self.kind {
            ControllerKind::McDropout => {
                let samples = dropout_samples(&self.members[0], &self.spec, &x, self.config.dropout_samples, self.config.seed)?;
                DynamicsBelief::from_members(samples, entry_variance)
            }
            ControllerKind::Anchored | ControllerKind::Dadee => {
                let outs = self
                    .members
                    .iter()
                    .map(|m| nn::forward(m, &self.spec, &x, None))
                    .collect::<Result<Vec<_>>>()?;
                DynamicsBelief::from_members(outs, entry_variance)
            }
            _ => Ok(DynamicsBelief {
                mean: self.mean_matrix(&x)?,
                members: Vec::new(),
                entry_variance,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Optimal,
    /// Solved after one or more fallback actions.
    Fallback,
    /// No fallback stage was feasible; least-violating control applied.
    LeastViolation,
}

impl StepStatus {
    pub fn name(self) -> &'static str {
        match self {
            StepStatus::Optimal => "optimal",
            StepStatus::Fallback => "fallback",
            StepStatus::LeastViolation => "least_violation",
        }
    }
}

/// One controlled step: the state before the step and the control applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: SimState,
    pub u: [f64; 2],
    /// True barrier values at the look-ahead point after the step.
    pub h_couch: f64,
    pub h_room: f64,
    pub status: StepStatus,
    /// Objective of the solved program.
    pub objective: f64,
    pub active: bool,
    pub violation: bool,
    /// `‖F̂ū − ẋ‖` of the mean model on the applied control.
    pub model_error: f64,
    /// Smallest true barrier condition `∇hᵀF ū + γh` over both barriers at
    /// the applied control.
    pub true_condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub controller: ControllerKind,
    pub p_k: f64,
    pub seed: u64,
    pub error_rate: f64,
    pub steps_cbc_active: usize,
    pub violations: usize,
    /// CBC-active steps where the true barrier condition was negative at the
    /// applied control.
    pub condition_failures: usize,
    pub infeasible_events: usize,
    /// Checkpoint indices in the order they were reached.
    pub checkpoints_reached: Vec<usize>,
    pub trajectory: Vec<StepRecord>,
}

impl EpisodeReport {
    pub fn min_barrier(&self) -> (f64, f64) {
        self.trajectory.iter().fold((f64::INFINITY, f64::INFINITY), |(a, b), r| {
            (a.min(r.h_couch), b.min(r.h_room))
        })
    }
}

fn cbcs(config: &SimConfig, belief: &DynamicsBelief, pose: &[f64]) -> Result<Vec<CbcDistribution>> {
    config
        .barriers()
        .iter()
        .map(|b| cbf::cbc_distribution(b, belief, pose, config.look_ahead))
        .collect()
}

fn program(config: &SimConfig, belief: &DynamicsBelief, pose: &[f64], p: f64, goal: [f64; 2]) -> Result<ConeProgram> {
    let goal = cbf::goal_term(&belief.mean, pose, goal, config.look_ahead, config.goal_weight);
    cbf::build_program(&cbcs(config, belief, pose)?, p, config.zeta, &goal, &config.u_min, &config.u_max)
}

fn true_barriers(config: &SimConfig, pose: &[f64]) -> (f64, f64) {
    let q = cbf::look_ahead_point(pose, config.look_ahead);
    (cbf::barrier_value(&config.couch, &q), cbf::barrier_value(&config.room, &q))
}

/// Runs one seeded episode. The report is a pure function of the inputs.
pub fn run_episode(config: &SimConfig, kind: ControllerKind) -> Result<EpisodeReport> {
    config.validate()?;
    let gains = config.actuation_gains;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut learner = (kind != ControllerKind::Oracle).then(|| Learner::new(kind, config));
    let mut pose = config.start;
    pose[2] = wrap_angle(pose[2]);

    let mut rng = nn::stream_rng(config.seed, 2);
    for _ in 0..config.warmup_steps {
        let u = [
            rng.random_range(-config.warmup_speed..=config.warmup_speed),
            rng.random_range(config.u_min[1]..=config.u_max[1]),
        ];
        let next = true_step(pose, u, gains, config.dt);
        buffer.push(Transition {
            state: pose,
            control: u,
            xdot: observe_derivative(&pose, &next, config.dt)?,
        });
        pose = next;
    }
    if let Some(l) = learner.as_mut() {
        l.retrain(&buffer, config.warmup_epochs)?;
    }

    let p = if kind == ControllerKind::Baseline { 0.5 } else { config.p_k };
    let mut rng = nn::stream_rng(config.seed, 1);
    let mut state = SimState {
        pose,
        active_checkpoint: 1,
        step: 0,
    };
    let mut report = EpisodeReport {
        controller: kind,
        p_k: config.p_k,
        seed: config.seed,
        error_rate: 0.0,
        steps_cbc_active: 0,
        violations: 0,
        condition_failures: 0,
        infeasible_events: 0,
        checkpoints_reached: Vec::new(),
        trajectory: Vec::with_capacity(config.episode_steps),
    };
    for step in 0..config.episode_steps {
        state.step = step;
        let goal = config.checkpoints[state.active_checkpoint];
        let belief = match &learner {
            Some(l) => l.belief(&state.pose)?,
            None => DynamicsBelief::exact(true_dynamics(&state.pose, gains)),
        };
        let prog = program(config, &belief, &state.pose, p, goal)?;
        let mut retrain_error: Option<Error> = None;
        let out = socp::feasibility_fallback(&prog, || {
            let l = learner.as_mut()?;
            let rebuilt = l
                .retrain(&buffer, config.train_epochs)
                .and_then(|_| l.belief(&state.pose))
                .and_then(|b| program(config, &b, &state.pose, p, goal));
            rebuilt.map_err(|e| retrain_error = Some(e)).ok()
        })?;
        if let Some(e) = retrain_error {
            return Err(e);
        }
        let (sol, used) = (out.solution, out.program);
        let status = if out.actions.is_empty() {
            StepStatus::Optimal
        } else if out.actions.contains(&FallbackAction::LeastViolation) {
            StepStatus::LeastViolation
        } else {
            StepStatus::Fallback
        };
        if status != StepStatus::Optimal {
            report.infeasible_events += 1;
        }
        let u = if status == StepStatus::LeastViolation {
            sol.u.clone()
        } else {
            socp::epsilon_greedy_safe(&sol.u, config.epsilon, &used, &mut rng)?
        };
        let u = [
            u[0].clamp(config.u_min[0], config.u_max[0]),
            u[1].clamp(config.u_min[1], config.u_max[1]),
        ];
        let active = used.cones.iter().any(|c| c.residual(&u) <= config.active_margin);

        let next = true_step(state.pose, u, gains, config.dt);
        let xdot = observe_derivative(&state.pose, &next, config.dt)?;
        buffer.push(Transition {
            state: state.pose,
            control: u,
            xdot,
        });
        let ubar = [1.0, u[0], u[1]];
        let model_error = libm::sqrt(
            (0..STATE_DIM)
                .map(|i| {
                    let pred: f64 = (0..AUGMENTED_DIM).map(|j| belief.mean[i * AUGMENTED_DIM + j] * ubar[j]).sum();
                    (pred - xdot[i]) * (pred - xdot[i])
                })
                .sum(),
        );
        let truth = DynamicsBelief::exact(true_dynamics(&state.pose, gains));
        let true_condition = cbcs(config, &truth, &state.pose)?
            .iter()
            .map(|c| c.mean(&u))
            .fold(f64::INFINITY, f64::min);
        let (h_couch, h_room) = true_barriers(config, &next);
        let violation = active && (h_couch < 0.0 || h_room < 0.0);
        if active {
            report.steps_cbc_active += 1;
        }
        if violation {
            report.violations += 1;
        }
        if active && true_condition < 0.0 {
            report.condition_failures += 1;
        }
        report.trajectory.push(StepRecord {
            state,
            u,
            h_couch,
            h_room,
            status,
            objective: sol.objective,
            active,
            violation,
            model_error,
            true_condition,
        });

        state.pose = next;
        let c = config.checkpoints[state.active_checkpoint];
        if libm::hypot(next[0] - c[0], next[1] - c[1]) <= config.checkpoint_radius {
            report.checkpoints_reached.push(state.active_checkpoint);
            state.active_checkpoint = (state.active_checkpoint + 1) % config.checkpoints.len();
        }
        if (step + 1) % config.train_every == 0 {
            if let Some(l) = learner.as_mut() {
                l.retrain(&buffer, config.train_epochs)?;
            }
        }
    }
    report.error_rate = report.violations as f64 / report.steps_cbc_active.max(1) as f64;
    Ok(report)
}

/// Seed of run `r` in a multi-run cell.
pub fn run_seed(root: u64, run: usize) -> u64 {
    member_seed(root ^ 0x7275_6e73, run)
}

/// Mean error rate over runs of one (controller, p) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub controller: ControllerKind,
    pub p_k: f64,
    pub seeds: Vec<u64>,
    pub error_rates: Vec<f64>,
    pub mean_error_rate: f64,
    /// Failed runs, as (seed, message).
    pub failures: Vec<(u64, String)>,
}

/// Runs `n_runs` episodes of one cell; failing runs are recorded and skipped.
pub fn error_rate_cell(config: &SimConfig, kind: ControllerKind, p_k: f64, n_runs: usize) -> CellResult {
    let mut cell = CellResult {
        controller: kind,
        p_k,
        seeds: Vec::new(),
        error_rates: Vec::new(),
        mean_error_rate: f64::NAN,
        failures: Vec::new(),
    };
    for r in 0..n_runs {
        let seed = run_seed(config.seed, r);
        let cfg = SimConfig {
            seed,
            p_k,
            ..config.clone()
        };
        match run_episode(&cfg, kind) {
            Ok(rep) => {
                cell.seeds.push(seed);
                cell.error_rates.push(rep.error_rate);
            }
            Err(e) => cell.failures.push((seed, alloc::format!("{e}"))),
        }
    }
    if !cell.error_rates.is_empty() {
        cell.mean_error_rate = cell.error_rates.iter().sum::<f64>() / cell.error_rates.len() as f64;
    }
    cell
}

/// Every (controller, p) cell, controllers outermost.
pub fn error_rate_sweep(config: &SimConfig, kinds: &[ControllerKind], p_values: &[f64], n_runs: usize) -> Vec<CellResult> {
    kinds
        .iter()
        .flat_map(|&k| p_values.iter().map(move |&p| (k, p)))
        .map(|(k, p)| error_rate_cell(config, k, p, n_runs))
        .collect()
}
