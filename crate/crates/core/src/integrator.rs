//! Positivity-guarded time integration of the truncated system.
//!
//! Adaptive mode uses the Dormand–Prince 5(4) pair with FSAL, a PI step-size
//! controller and 4th-order continuous-extension dense output at the requested sample times.
//! Fixed-step mode runs classical RK4 without rejection and serves as the
//! oracle for the adaptive path.
//!
//! Alongside the state, every run accumulates the mass that has left through
//! the truncation boundary by integrating the outflow rate with the same
//! quadrature weights as the state. For the exact scheme this equals
//! `M1(0) − M1(t)`, but without the cancellation of subtracting two masses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::DiagnosticsRecord;
use crate::kernel::CoagulationKernel;
use crate::stop;
use crate::system::{Rhs, SizeDistribution, SystemError};

#[derive(Debug, Error)]
pub enum IntegrationError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("non-finite value encountered at t = {time}")]
    NonFinite { time: f64 },
    #[error("step size underflow at t = {time} (h = {step:e})")]
    Stalled { time: f64, step: f64, last: Box<SizeDistribution> },
    #[error("interrupted at t = {time}")]
    Interrupted { time: f64, last: Box<SizeDistribution> },
    #[error("trajectory invariant violated: {detail}")]
    InvariantViolation { detail: String, trajectory: Box<Trajectory> },
    #[error(transparent)]
    System(#[from] SystemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepMode {
    Adaptive,
    FixedStep { h: f64 },
}

/// PI controller constants: `fac = safety · err^-(1/5 − 0.75 β) · err_prev^β`,
/// clamped to `[min_factor, max_factor]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerParams {
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    pub beta: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 5.0,
            beta: 0.04,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "defaults::rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "defaults::abs_tol")]
    pub abs_tol: f64,
    pub t_end: f64,
    /// Defaults to `t_end`.
    #[serde(default)]
    pub max_step: Option<f64>,
    #[serde(default = "defaults::positivity_floor")]
    pub positivity_floor: f64,
    #[serde(default = "defaults::mode")]
    pub mode: StepMode,
    /// Ascending output times in `[0, t_end]`; empty means 101 uniform samples.
    #[serde(default)]
    pub sample_times: Vec<f64>,
    #[serde(default)]
    pub controller: ControllerParams,
    #[serde(default = "defaults::max_steps")]
    pub max_steps: usize,
}

mod defaults {
    use super::StepMode;
    pub fn rel_tol() -> f64 {
        1e-8
    }
    pub fn abs_tol() -> f64 {
        1e-10
    }
    pub fn positivity_floor() -> f64 {
        1e-14
    }
    pub fn mode() -> StepMode {
        StepMode::Adaptive
    }
    pub fn max_steps() -> usize {
        10_000_000
    }
}

impl SolverConfig {
    pub fn new(t_end: f64) -> Self {
        Self {
            rel_tol: defaults::rel_tol(),
            abs_tol: defaults::abs_tol(),
            t_end,
            max_step: None,
            positivity_floor: defaults::positivity_floor(),
            mode: StepMode::Adaptive,
            sample_times: Vec::new(),
            controller: ControllerParams::default(),
            max_steps: defaults::max_steps(),
        }
    }

    pub fn fixed_step(t_end: f64, h: f64) -> Self {
        Self {
            mode: StepMode::FixedStep { h },
            ..Self::new(t_end)
        }
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    /// `n + 1` uniformly spaced samples on `[0, t_end]`.
    pub fn with_uniform_samples(mut self, n: usize) -> Self {
        let n = n.max(1);
        self.sample_times = (0..=n).map(|m| self.t_end * m as f64 / n as f64).collect();
        self.sample_times[n] = self.t_end;
        self
    }

    pub fn with_sample_times(mut self, times: Vec<f64>) -> Self {
        self.sample_times = times;
        self
    }

    pub fn max_step(&self) -> f64 {
        self.max_step.unwrap_or(self.t_end)
    }

    pub fn min_step(&self) -> f64 {
        1e-12 * self.t_end
    }

    /// Resolved output grid: the configured times, or 101 uniform samples.
    pub fn samples(&self) -> Vec<f64> {
        if self.sample_times.is_empty() {
            self.clone().with_uniform_samples(100).sample_times
        } else {
            self.sample_times.clone()
        }
    }

    pub fn validate(&self) -> Result<(), IntegrationError> {
        let bad = |m: String| Err(IntegrationError::Config(m));
        if !(self.rel_tol > 0.0) {
            return bad(format!("rel_tol must be positive, got {}", self.rel_tol));
        }
        if !(self.abs_tol > 0.0) {
            return bad(format!("abs_tol must be positive, got {}", self.abs_tol));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if !(self.max_step() > 0.0) {
            return bad(format!("max_step must be positive, got {}", self.max_step()));
        }
        if !(self.positivity_floor >= 0.0) {
            return bad(format!("positivity_floor must be nonnegative, got {}", self.positivity_floor));
        }
        if let StepMode::FixedStep { h } = self.mode {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("fixed step h must be positive, got {h}"));
            }
        }
        let c = &self.controller;
        if !(c.safety > 0.0 && c.min_factor > 0.0 && c.min_factor <= 1.0 && c.max_factor >= 1.0) {
            return bad("controller constants out of range".into());
        }
        let times = self.samples();
        if times.first() != Some(&0.0) || times.last() != Some(&self.t_end) {
            return bad("sample_times must start at 0 and end at t_end".into());
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("sample_times must be strictly ascending".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub positivity_rejections: usize,
    pub min_step: f64,
    pub max_step: f64,
    pub rhs_evaluations: usize,
    /// Mass `Σ i |ξ_i|` added by clamping small negatives after accepted steps.
    pub clamped_mass: f64,
    /// Mass added by clamping interpolated samples (does not feed back into the run).
    pub sample_clamped_mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub kernel: String,
    pub truncation: usize,
    pub samples: Vec<SizeDistribution>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    /// Cumulative mass lost through the truncation boundary at each sample.
    pub outflow: Vec<f64>,
    pub step_stats: StepStats,
    /// max over samples of |dξ_i/dt|, per size i.
    pub rhs_sup_per_size: Vec<f64>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(SizeDistribution::time).collect()
    }

    pub fn first(&self) -> &SizeDistribution {
        &self.samples[0]
    }

    pub fn last(&self) -> &SizeDistribution {
        self.samples.last().expect("trajectory is nonempty")
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `1e-9 · M1(0)`.
    pub fn mass_slack(&self) -> f64 {
        1e-9 * self.first().mass()
    }

    /// Checks ascending times and mass monotonicity within `mass_slack`.
    pub fn check_invariants(&self) -> Result<(), String> {
        let slack = self.mass_slack();
        for (n, w) in self.samples.windows(2).enumerate() {
            if !(w[1].time() > w[0].time()) {
                return Err(format!("sample times not ascending at index {}", n + 1));
            }
            let (m0, m1) = (w[0].mass(), w[1].mass());
            if m1 > m0 + slack {
                return Err(format!(
                    "mass increased from {m0:e} to {m1:e} between t={} and t={}",
                    w[0].time(),
                    w[1].time()
                ));
            }
        }
        Ok(())
    }
}

/// Outcome of a single adaptive step; a rejected step returns the input state.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub new_state: SizeDistribution,
    pub error_estimate: f64,
    pub accepted: bool,
}

// Dormand–Prince 5(4) tableau. The system is autonomous, so stage times are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Attempt {
    err_norm: f64,
    min_component: f64,
    outflow_increment: f64,
}

/// Dormand–Prince stepper with scratch buffers. `stages[0]` holds f(y_n),
/// and after an attempt `stages[6]` holds f(y_{n+1}) (FSAL).
struct DormandPrince<'k> {
    rhs: Rhs<'k>,
    stages: [Vec<f64>; 7],
    leaks: [f64; 7],
    stage_y: Vec<f64>,
    y_new: Vec<f64>,
    evaluations: usize,
}

impl<'k> DormandPrince<'k> {
    fn new(kernel: &'k CoagulationKernel, k: usize) -> Result<Self, SystemError> {
        Ok(Self {
            rhs: Rhs::new(kernel, k)?,
            stages: std::array::from_fn(|_| vec![0.0; k]),
            leaks: [0.0; 7],
            stage_y: vec![0.0; k],
            y_new: vec![0.0; k],
            evaluations: 0,
        })
    }

    fn eval_first(&mut self, y: &[f64]) -> Result<(), SystemError> {
        self.evaluations += 1;
        self.leaks[0] = self.rhs.eval(y, &mut self.stages[0])?;
        Ok(())
    }

    #[allow(clippy::needless_range_loop)] // indexes several stage buffers in lockstep
    fn attempt(&mut self, y: &[f64], h: f64, rel_tol: f64, abs_tol: f64) -> Result<Attempt, SystemError> {
        let k = y.len();
        for s in 1..7 {
            for n in 0..k {
                let mut acc = 0.0;
                for (r, a) in A[s][..s].iter().enumerate() {
                    if *a != 0.0 {
                        acc += a * self.stages[r][n];
                    }
                }
                self.stage_y[n] = y[n] + h * acc;
            }
            let (_, rest) = self.stages.split_at_mut(s);
            self.evaluations += 1;
            self.leaks[s] = self.rhs.eval(&self.stage_y, &mut rest[0])?;
        }
        // stage 7 was evaluated at y + h Σ b_s k_s, which is y_{n+1}.
        self.y_new.copy_from_slice(&self.stage_y);
        let mut sq = 0.0;
        let mut min_component = f64::INFINITY;
        for n in 0..k {
            let mut e = 0.0;
            for (s, es) in E.iter().enumerate() {
                if *es != 0.0 {
                    e += es * self.stages[s][n];
                }
            }
            let e = h * e;
            let sc = abs_tol + rel_tol * y[n].abs().max(self.y_new[n].abs());
            sq += (e / sc) * (e / sc);
            min_component = min_component.min(self.y_new[n]);
        }
        let outflow_increment = h * B.iter().zip(&self.leaks).map(|(b, l)| b * l).sum::<f64>();
        Ok(Attempt {
            err_norm: (sq / k as f64).sqrt(),
            min_component,
            outflow_increment,
        })
    }
}

fn weighted_rms(v: &[f64], y: &[f64], rel_tol: f64, abs_tol: f64) -> f64 {
    let sq: f64 = v
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = a / (abs_tol + rel_tol * b.abs());
            r * r
        })
        .sum();
    (sq / v.len() as f64).sqrt()
}

/// Clamps components in `[-guard, 0)` (or every negative when `guard` is
/// infinite) to zero and returns the mass `Σ i |ξ_i|` that was added.
fn clamp_negatives(y: &mut [f64], guard: f64) -> f64 {
    let mut added = 0.0;
    for (n, v) in y.iter_mut().enumerate() {
        if *v < 0.0 && *v >= -guard {
            added += (n + 1) as f64 * -*v;
            *v = 0.0;
        }
    }
    added
}

fn positivity_guard(config: &SolverConfig) -> f64 {
    config.positivity_floor * 1e3
}

/// One Dormand–Prince step of size `h` from `state`. Accepted iff the
/// weighted error norm is at most 1 and no component falls below
/// `-1e3 · positivity_floor`; small negatives are clamped on acceptance.
pub fn step(
    state: &SizeDistribution,
    kernel: &CoagulationKernel,
    h: f64,
    config: &SolverConfig,
) -> Result<StepOutcome, IntegrationError> {
    if !(h > 0.0) || h > config.max_step() {
        return Err(IntegrationError::Config(format!(
            "step size {h} must lie in (0, max_step = {}]",
            config.max_step()
        )));
    }
    let mut dp = DormandPrince::new(kernel, state.truncation())?;
    let y = state.values();
    dp.eval_first(y)?;
    let attempt = dp.attempt(y, h, config.rel_tol, config.abs_tol)?;
    let time = state.time() + h;
    if !attempt.err_norm.is_finite() || dp.y_new.iter().any(|v| !v.is_finite()) {
        return Err(IntegrationError::NonFinite { time });
    }
    let guard = positivity_guard(config);
    let accepted = attempt.err_norm <= 1.0 && attempt.min_component >= -guard;
    if !accepted {
        return Ok(StepOutcome {
            new_state: state.clone(),
            error_estimate: attempt.err_norm,
            accepted,
        });
    }
    let mut values = dp.y_new.clone();
    clamp_negatives(&mut values, guard);
    Ok(StepOutcome {
        new_state: SizeDistribution::from_raw(values, time),
        error_estimate: attempt.err_norm,
        accepted,
    })
}

/// Integrates from `init` over `[0, t_end]`, sampling at the configured times.
///
/// `init.time()` is ignored; the run always starts at 0.
pub fn integrate(
    init: &SizeDistribution,
    kernel: &CoagulationKernel,
    config: &SolverConfig,
) -> Result<Trajectory, IntegrationError> {
    config.validate()?;
    let times = config.samples();
    let raw = match config.mode {
        StepMode::Adaptive => run_adaptive(init, kernel, config, &times)?,
        StepMode::FixedStep { h } => run_fixed(init, kernel, &times, h)?,
    };
    let trajectory = finish(raw, kernel)?;
    if let Err(detail) = trajectory.check_invariants() {
        return Err(IntegrationError::InvariantViolation {
            detail,
            trajectory: Box::new(trajectory),
        });
    }
    Ok(trajectory)
}

struct RawRun {
    samples: Vec<SizeDistribution>,
    outflow: Vec<f64>,
    stats: StepStats,
}

fn finish(raw: RawRun, kernel: &CoagulationKernel) -> Result<Trajectory, IntegrationError> {
    let k = raw.samples[0].truncation();
    let mut rhs = Rhs::new(kernel, k)?;
    let mut deriv = vec![0.0; k];
    let mut sup = vec![0.0_f64; k];
    let mut diagnostics = Vec::with_capacity(raw.samples.len());
    for s in &raw.samples {
        rhs.eval(s.values(), &mut deriv)?;
        for (m, d) in sup.iter_mut().zip(&deriv) {
            *m = m.max(d.abs());
        }
        diagnostics.push(DiagnosticsRecord::from_parts(s, &deriv, &[2.0], &[]));
    }
    Ok(Trajectory {
        kernel: kernel.name.clone(),
        truncation: k,
        samples: raw.samples,
        diagnostics,
        outflow: raw.outflow,
        step_stats: raw.stats,
        rhs_sup_per_size: sup,
    })
}

fn check_finite(y: &[f64], time: f64) -> Result<(), IntegrationError> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(IntegrationError::NonFinite { time })
    }
}

fn initial_step(dp: &mut DormandPrince<'_>, y: &[f64], config: &SolverConfig) -> Result<f64, IntegrationError> {
    let (rt, at) = (config.rel_tol, config.abs_tol);
    let d0 = weighted_rms(y, y, rt, at);
    let f0 = dp.stages[0].clone();
    let d1 = weighted_rms(&f0, y, rt, at);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(config.max_step());
    let y1: Vec<f64> = y.iter().zip(&f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; y.len()];
    dp.evaluations += 1;
    dp.rhs.eval(&y1, &mut f1)?;
    let diff: Vec<f64> = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
    let d2 = weighted_rms(&diff, y, rt, at) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    Ok((100.0 * h0).min(h1).min(config.max_step()).min(config.t_end))
}

/// Coefficients of the 4th-order continuous extension: the weight of stage
/// `s` at `θ` is `Σ_j P[s][j] θ^{j+1}`.
const P: [[f64; 4]; 7] = [
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0],
    [0.0; 4],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0],
];

fn dense_weights(theta: f64) -> [f64; 7] {
    let powers = [theta, theta * theta, theta.powi(3), theta.powi(4)];
    std::array::from_fn(|s| P[s].iter().zip(&powers).map(|(p, t)| p * t).sum())
}

fn run_adaptive(
    init: &SizeDistribution,
    kernel: &CoagulationKernel,
    config: &SolverConfig,
    times: &[f64],
) -> Result<RawRun, IntegrationError> {
    let k = init.truncation();
    let mut dp = DormandPrince::new(kernel, k)?;
    let mut y = init.values().to_vec();
    let mut t = 0.0;
    let mut outflow = 0.0;
    let mut stats = StepStats {
        min_step: f64::INFINITY,
        ..Default::default()
    };
    let guard = positivity_guard(config);
    let ctrl = config.controller;
    let alpha = 0.2 - 0.75 * ctrl.beta;

    let mut samples = vec![SizeDistribution::from_raw(y.clone(), 0.0)];
    let mut outflows = vec![0.0];
    let mut next_sample = 1;

    dp.eval_first(&y)?;
    let mut h = initial_step(&mut dp, &y, config)?;
    let mut err_prev = 1e-4_f64;
    let mut last_rejected = false;
    let mut steps = 0usize;
    let mut interp = vec![0.0; k];

    while next_sample < times.len() {
        if stop::stop_requested() {
            return Err(IntegrationError::Interrupted {
                time: t,
                last: Box::new(SizeDistribution::from_raw(y, t)),
            });
        }
        steps += 1;
        if steps > config.max_steps {
            return Err(IntegrationError::Stalled {
                time: t,
                step: h,
                last: Box::new(SizeDistribution::from_raw(y, t)),
            });
        }
        let remaining = config.t_end - t;
        let mut h_try = h.min(config.max_step());
        if h_try >= remaining || remaining - h_try < 1e-12 * config.t_end {
            h_try = remaining;
        }
        let attempt = dp.attempt(&y, h_try, config.rel_tol, config.abs_tol)?;
        if !attempt.err_norm.is_finite() {
            return Err(IntegrationError::NonFinite { time: t + h_try });
        }
        let positive = attempt.min_component >= -guard;
        if attempt.err_norm <= 1.0 && positive {
            check_finite(&dp.y_new, t + h_try)?;
            let t_new = if h_try == remaining { config.t_end } else { t + h_try };
            let mut y_new = dp.y_new.clone();
            stats.clamped_mass += clamp_negatives(&mut y_new, guard);
            let out_new = outflow + attempt.outflow_increment;
            while next_sample < times.len() && times[next_sample] <= t_new {
                let ts = times[next_sample];
                let (vals, out) = if ts == t_new {
                    (y_new.clone(), out_new)
                } else {
                    let w = dense_weights((ts - t) / h_try);
                    for n in 0..k {
                        let slope: f64 = w.iter().zip(&dp.stages).map(|(c, st)| c * st[n]).sum();
                        interp[n] = y[n] + h_try * slope;
                    }
                    check_finite(&interp, ts)?;
                    let o = outflow + h_try * w.iter().zip(&dp.leaks).map(|(c, l)| c * l).sum::<f64>();
                    let mut vals = interp.clone();
                    stats.sample_clamped_mass += clamp_negatives(&mut vals, f64::INFINITY);
                    (vals, o)
                };
                samples.push(SizeDistribution::from_raw(vals, ts));
                outflows.push(out);
                next_sample += 1;
            }
            stats.accepted += 1;
            stats.min_step = stats.min_step.min(h_try);
            stats.max_step = stats.max_step.max(h_try);
            t = t_new;
            y = y_new;
            outflow = out_new;
            // FSAL
            let (first, rest) = dp.stages.split_at_mut(1);
            std::mem::swap(&mut first[0], &mut rest[5]);
            dp.leaks[0] = dp.leaks[6];
            if y.iter().zip(&dp.y_new).any(|(a, b)| a != b) {
                // a clamp changed the state; refresh f(y)
                dp.eval_first(&y)?;
            }

            let err = attempt.err_norm.max(1e-10);
            let mut fac = ctrl.safety * err.powf(-alpha) * err_prev.powf(ctrl.beta);
            fac = fac.clamp(ctrl.min_factor, ctrl.max_factor);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h = h_try * fac;
            err_prev = attempt.err_norm.max(1e-4);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            let fac = if !positive {
                stats.positivity_rejections += 1;
                0.5
            } else {
                (ctrl.safety * attempt.err_norm.powf(-0.2)).max(ctrl.min_factor)
            };
            h = h_try * fac.min(1.0);
            last_rejected = true;
            if h < config.min_step() {
                return Err(IntegrationError::Stalled {
                    time: t,
                    step: h,
                    last: Box::new(SizeDistribution::from_raw(y, t)),
                });
            }
        }
    }
    stats.rhs_evaluations = dp.evaluations;
    if stats.accepted == 0 {
        stats.min_step = 0.0;
    }
    Ok(RawRun {
        samples,
        outflow: outflows,
        stats,
    })
}

fn run_fixed(
    init: &SizeDistribution,
    kernel: &CoagulationKernel,
    times: &[f64],
    h: f64,
) -> Result<RawRun, IntegrationError> {
    let k = init.truncation();
    let mut rhs = Rhs::new(kernel, k)?;
    let mut y = init.values().to_vec();
    let mut outflow = 0.0;
    let mut stats = StepStats {
        min_step: f64::INFINITY,
        ..Default::default()
    };
    let mut samples = vec![SizeDistribution::from_raw(y.clone(), 0.0)];
    let mut outflows = vec![0.0];
    let mut stages: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; k]);
    let mut tmp = vec![0.0; k];

    for w in times.windows(2) {
        let span = w[1] - w[0];
        let n = ((span / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let hs = span / n as f64;
        for m in 0..n {
            let t = w[0] + m as f64 * hs;
            if stop::stop_requested() {
                return Err(IntegrationError::Interrupted {
                    time: t,
                    last: Box::new(SizeDistribution::from_raw(y, t)),
                });
            }
            let l1 = rhs.eval(&y, &mut stages[0])?;
            for i in 0..k {
                tmp[i] = y[i] + 0.5 * hs * stages[0][i];
            }
            let l2 = rhs.eval(&tmp, &mut stages[1])?;
            for i in 0..k {
                tmp[i] = y[i] + 0.5 * hs * stages[1][i];
            }
            let l3 = rhs.eval(&tmp, &mut stages[2])?;
            for i in 0..k {
                tmp[i] = y[i] + hs * stages[2][i];
            }
            let l4 = rhs.eval(&tmp, &mut stages[3])?;
            for i in 0..k {
                y[i] += hs / 6.0 * (stages[0][i] + 2.0 * stages[1][i] + 2.0 * stages[2][i] + stages[3][i]);
            }
            outflow += hs / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
            check_finite(&y, t + hs)?;
            stats.clamped_mass += clamp_negatives(&mut y, f64::INFINITY);
            stats.accepted += 1;
            stats.rhs_evaluations += 4;
            stats.min_step = stats.min_step.min(hs);
            stats.max_step = stats.max_step.max(hs);
        }
        samples.push(SizeDistribution::from_raw(y.clone(), w[1]));
        outflows.push(outflow);
    }
    Ok(RawRun {
        samples,
        outflow: outflows,
        stats,
    })
}
