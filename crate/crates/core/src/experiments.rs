//! Verification studies: each turns a conservation law, moment bound,
//! identity or asymptotic statement into a falsifiable numerical check and
//! returns an [`ExperimentReport`] that echoes its thresholds.
//!
//! All studies are deterministic for a given configuration. Independent runs
//! (different truncations, perturbations) fan out over at most
//! [`worker_count`] threads and are collected in input order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{check_moment_propagation, g_moment, mass_defect, mass_drop, moment};
use crate::integrator::{integrate, IntegrationError, SolverConfig, Trajectory};
use crate::kernel::{CoagulationKernel, KernelRule};
use crate::report::ExperimentReport;
use crate::system::{
    finite_identity_rate, partial_functional, weak_form_rate, InitialRule, Rhs, SizeDistribution, TestSequence,
};
use crate::weights::{check_inequality_15, construct_dlvp, dlvp_moment_bound, ConvexWeight};

/// Worker cap from `COAGKIN_THREADS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("COAGKIN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Order-preserving parallel map over at most [`worker_count`] threads.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = worker_count().min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("experiment worker panicked"))
            .collect()
    })
}

/// Copy of `config` with horizon `t_end`; a sample grid that does not end at
/// `t_end` is replaced by a uniform one with the same number of points.
pub fn with_horizon(config: &SolverConfig, t_end: f64) -> SolverConfig {
    let mut c = config.clone();
    if c.t_end != t_end {
        let n = c.sample_times.len().saturating_sub(1).max(100);
        c.t_end = t_end;
        if c.max_step.is_some_and(|h| h > t_end) {
            c.max_step = None;
        }
        c = c.with_uniform_samples(n);
    }
    c
}

fn failed_run(report: &mut ExperimentReport, label: &str, err: &IntegrationError) {
    if matches!(err, IntegrationError::Interrupted { .. }) {
        report.mark_interrupted();
    }
    report.check(format!("integrate:{label}"), false, err.to_string());
}

fn echo<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

// ---------------------------------------------------------------------------
// Truncation convergence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationParams {
    #[serde(default = "TruncationParams::default_k_list")]
    pub k_list: Vec<usize>,
    #[serde(default = "TruncationParams::default_t_end")]
    pub t_end: f64,
    /// Bound on `defect(k_max) / M1(0)`.
    #[serde(default = "TruncationParams::default_defect_threshold")]
    pub defect_threshold: f64,
}

impl TruncationParams {
    fn default_k_list() -> Vec<usize> {
        vec![16, 32, 64, 128]
    }
    fn default_t_end() -> f64 {
        5.0
    }
    fn default_defect_threshold() -> f64 {
        1e-6
    }
}

impl Default for TruncationParams {
    fn default() -> Self {
        Self {
            k_list: Self::default_k_list(),
            t_end: Self::default_t_end(),
            defect_threshold: Self::default_defect_threshold(),
        }
    }
}

/// Per-truncation outcome of [`truncation_convergence`].
#[derive(Debug, Clone, Serialize)]
pub struct TruncationRun {
    pub k: usize,
    pub defect: f64,
    pub mass_drop: f64,
    pub final_state: Vec<f64>,
}

/// Runs the solver at every `k` in `params.k_list` and checks that
/// (a) the mass defect decreases strictly in `k` (equal zeros allowed),
/// (b) the distance `Σ_{i≤k} i |ξ^k(T) − ξ^{k'}(T)|` between consecutive
///     truncations does not grow beyond the integrator noise floor
///     `10 · rel_tol · M1(0)`,
/// (c) the defect at the largest `k` is at most `defect_threshold · M1(0)`.
pub fn truncation_convergence(
    kernel: &CoagulationKernel,
    init: &InitialRule,
    mass_scale: f64,
    params: &TruncationParams,
    solver: &SolverConfig,
) -> (ExperimentReport, Vec<TruncationRun>) {
    let config = with_horizon(solver, params.t_end);
    let mut report = ExperimentReport::new("truncation").with_config(serde_json::json!({
        "kernel": kernel.name,
        "initial": echo(init),
        "mass_scale": mass_scale,
        "params": echo(params),
        "solver": echo(&config),
    }));
    report.threshold("defect_threshold", params.defect_threshold);
    let ks = &params.k_list;
    if ks.len() < 3 || ks.iter().any(|&k| k < 2) || ks.windows(2).any(|w| w[1] <= w[0]) {
        report.check(
            "k_list",
            false,
            format!("k_list needs >= 3 ascending entries >= 2, got {ks:?}"),
        );
        return (report, Vec::new());
    }

    let outcomes = parallel_map(ks, |&k| {
        let init_k = init.build(k, mass_scale).map_err(IntegrationError::from)?;
        integrate(&init_k, kernel, &config)
    });
    let mut runs = Vec::new();
    for (&k, outcome) in ks.iter().zip(outcomes) {
        match outcome {
            Ok(traj) => runs.push(TruncationRun {
                k,
                defect: mass_defect(&traj),
                mass_drop: mass_drop(&traj),
                final_state: traj.last().values().to_vec(),
            }),
            Err(e) => {
                failed_run(&mut report, &format!("k={k}"), &e);
                return (report, runs);
            }
        }
    }

    let m1 = init.build(ks[0], mass_scale).map(|s| s.mass()).unwrap_or(0.0);
    let noise = 10.0 * config.rel_tol * m1;
    report.threshold("distance_noise_floor", noise);
    for r in &runs {
        report.metric(format!("defect[k={}]", r.k), r.defect);
        report.metric(format!("mass_drop[k={}]", r.k), r.mass_drop);
    }

    let mut decreasing = true;
    let mut detail = String::from("ok");
    for w in runs.windows(2) {
        let ok = w[1].defect < w[0].defect || (w[0].defect == 0.0 && w[1].defect == 0.0);
        if !ok && decreasing {
            decreasing = false;
            detail = format!(
                "defect(k={}) = {:e} >= defect(k={}) = {:e}",
                w[1].k, w[1].defect, w[0].k, w[0].defect
            );
        }
    }
    report.check("defect_decreasing", decreasing, detail);

    let distances: Vec<f64> = runs
        .windows(2)
        .map(|w| {
            let kmin = w[0].k.min(w[1].k);
            (1..=kmin)
                .map(|i| i as f64 * (w[0].final_state[i - 1] - w[1].final_state[i - 1]).abs())
                .sum()
        })
        .collect();
    for (w, d) in runs.windows(2).zip(&distances) {
        report.metric(format!("distance[k={},{}]", w[0].k, w[1].k), *d);
    }
    let grows = distances.windows(2).position(|d| d[1] > d[0] + noise);
    report.check(
        "distance_nonincreasing",
        grows.is_none(),
        grows.map_or("ok".into(), |p| format!("distance grows at pair {}", p + 1)),
    );

    let last = runs.last().expect("at least three runs");
    let relative = if m1 > 0.0 { last.defect / m1 } else { 0.0 };
    report.metric("relative_defect_max_k", relative);
    report.check(
        "defect_below_threshold",
        relative <= params.defect_threshold,
        format!("defect(k={})/M1(0) = {relative:e}", last.k),
    );
    (report, runs)
}

// ---------------------------------------------------------------------------
// Continuous dependence and uniqueness
// ---------------------------------------------------------------------------

/// `Σ i |ξ_i − η_i|`.
pub fn weighted_distance(a: &SizeDistribution, b: &SizeDistribution) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .enumerate()
        .map(|(n, (x, y))| (n + 1) as f64 * (x - y).abs())
        .sum()
}

/// Integrates both initial data and checks `D(t) ≤ D(0) exp(C t)` with
/// `C = 4 A (sup M_{1+δ} + M1(0))`; identical data must stay within 1e-12.
pub fn continuous_dependence(
    kernel: &CoagulationKernel,
    init_a: &SizeDistribution,
    init_b: &SizeDistribution,
    solver: &SolverConfig,
) -> ExperimentReport {
    let mut report = ExperimentReport::new("continuous-dependence").with_config(serde_json::json!({
        "kernel": kernel.name,
        "solver": echo(solver),
    }));
    report.threshold("max_ratio", 1.0).threshold("identical_tolerance", 1e-12);
    let Some(delta) = kernel.power_delta else {
        report.check("hypothesis", false, "kernel must declare a power bound delta");
        return report;
    };
    if init_a.truncation() != init_b.truncation() {
        report.check("hypothesis", false, "initial data have different truncations");
        return report;
    }
    let pair = [init_a, init_b];
    let runs = parallel_map(&pair, |init| integrate(init, kernel, solver));
    let mut trajs = Vec::new();
    for (label, r) in ["a", "b"].iter().zip(runs) {
        match r {
            Ok(t) => trajs.push(t),
            Err(e) => {
                failed_run(&mut report, label, &e);
                return report;
            }
        }
    }
    let (ta, tb) = (&trajs[0], &trajs[1]);
    let order = 1.0 + delta;
    let sup_moment = ta
        .samples
        .iter()
        .chain(&tb.samples)
        .map(|s| moment(s, order).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let m1_0 = init_a.mass().max(init_b.mass());
    let rate = 4.0 * kernel.growth_constant * (sup_moment + m1_0);
    let distances: Vec<f64> = ta.samples.iter().zip(&tb.samples).map(|(a, b)| weighted_distance(a, b)).collect();
    let d0 = distances[0];
    report
        .metric("gronwall_rate", rate)
        .metric("sup_moment_1_plus_delta", sup_moment)
        .metric("initial_distance", d0)
        .metric("final_distance", *distances.last().expect("nonempty"))
        .metric("max_distance", distances.iter().copied().fold(0.0, f64::max));
    if d0 == 0.0 {
        let worst = distances.iter().copied().fold(0.0, f64::max);
        report.check("uniqueness", worst <= 1e-12, format!("max D(t) = {worst:e} with D(0) = 0"));
        return report;
    }
    let mut max_ratio = 0.0_f64;
    for (s, d) in ta.samples.iter().zip(&distances) {
        max_ratio = max_ratio.max(d / (d0 * (rate * s.time()).exp()));
    }
    let amplification = distances.iter().copied().fold(0.0, f64::max) / d0;
    report.metric("max_ratio", max_ratio).metric("amplification", amplification);
    report.check("gronwall_envelope", max_ratio <= 1.0, format!("max D(t)/(D(0)e^(Ct)) = {max_ratio:e}"));
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependenceParams {
    #[serde(default = "DependenceParams::default_t_end")]
    pub t_end: f64,
    #[serde(default = "DependenceParams::default_epsilon")]
    pub epsilon: f64,
    /// Perturbation direction, zero-padded; default is a unit dimer.
    #[serde(default = "DependenceParams::default_direction")]
    pub direction: Vec<f64>,
    /// Allowed relative deviation of `D_{ε/2}(T) / D_ε(T)` from 1/2.
    #[serde(default = "DependenceParams::default_linear_tolerance")]
    pub linear_tolerance: f64,
}

impl DependenceParams {
    fn default_t_end() -> f64 {
        2.0
    }
    fn default_epsilon() -> f64 {
        1e-6
    }
    fn default_direction() -> Vec<f64> {
        vec![0.0, 1.0]
    }
    fn default_linear_tolerance() -> f64 {
        0.1
    }
}

impl Default for DependenceParams {
    fn default() -> Self {
        Self {
            t_end: Self::default_t_end(),
            epsilon: Self::default_epsilon(),
            direction: Self::default_direction(),
            linear_tolerance: Self::default_linear_tolerance(),
        }
    }
}

/// Envelope check at ε, uniqueness on identical data, and linear response
/// when ε is halved.
pub fn dependence_study(
    kernel: &CoagulationKernel,
    base: &SizeDistribution,
    params: &DependenceParams,
    solver: &SolverConfig,
) -> ExperimentReport {
    let config = with_horizon(solver, params.t_end);
    let mut report = ExperimentReport::new("dependence").with_config(serde_json::json!({
        "kernel": kernel.name,
        "initial": base.values(),
        "params": echo(params),
        "solver": echo(&config),
    }));
    report.threshold("linear_tolerance", params.linear_tolerance);
    let perturbed = |eps: f64| {
        let values: Vec<f64> = base
            .values()
            .iter()
            .enumerate()
            .map(|(n, v)| v + eps * params.direction.get(n).copied().unwrap_or(0.0))
            .collect();
        SizeDistribution::new(values, 0.0)
    };
    let (full, half) = match (perturbed(params.epsilon), perturbed(0.5 * params.epsilon)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            report.check("perturbation", false, e.to_string());
            return report;
        }
    };
    let cases = [(base, base), (base, &full), (base, &half)];
    let subs = parallel_map(&cases, |(a, b)| continuous_dependence(kernel, a, b, &config));
    report.absorb("identical", &subs[0]);
    report.absorb("eps", &subs[1]);
    report.absorb("half_eps", &subs[2]);
    if let (Some(df), Some(dh)) = (subs[1].metrics.get("final_distance"), subs[2].metrics.get("final_distance")) {
        let ratio = dh / df;
        report.metric("half_to_full_ratio", ratio);
        report.check(
            "linear_response",
            (ratio - 0.5).abs() <= params.linear_tolerance * 0.5,
            format!("D(eps/2)/D(eps) = {ratio}"),
        );
    }
    report
}

// ---------------------------------------------------------------------------
// Asymptotic decay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayParams {
    #[serde(default = "DecayParams::default_t_end")]
    pub t_end: f64,
    #[serde(default = "DecayParams::default_envelope_slack")]
    pub envelope_slack: f64,
    #[serde(default = "DecayParams::default_tol_conv")]
    pub tol_conv: f64,
    #[serde(default = "DecayParams::default_tol_limit")]
    pub tol_limit: f64,
    /// Sizes `1..=components` checked for convergence and the zero limit.
    #[serde(default = "DecayParams::default_components")]
    pub components: usize,
}

impl DecayParams {
    fn default_t_end() -> f64 {
        100.0
    }
    fn default_envelope_slack() -> f64 {
        0.01
    }
    fn default_tol_conv() -> f64 {
        1e-8
    }
    fn default_tol_limit() -> f64 {
        1e-4
    }
    fn default_components() -> usize {
        5
    }
}

impl Default for DecayParams {
    fn default() -> Self {
        Self {
            t_end: Self::default_t_end(),
            envelope_slack: Self::default_envelope_slack(),
            tol_conv: Self::default_tol_conv(),
            tol_limit: Self::default_tol_limit(),
            components: Self::default_components(),
        }
    }
}

/// Riccati comparison value `M0(0) / (1 + (ζ/2) M0(0) t)`.
pub fn riccati_envelope(m0_initial: f64, zeta: f64, t: f64) -> f64 {
    m0_initial / (1.0 + 0.5 * zeta * m0_initial * t)
}

/// Long-time behaviour for kernels bounded below by ζ > 0:
/// (a) M0 non-increasing, (b) Riccati envelope, (c) convergence of the first
/// components between `0.9 T` and `T`, (d) those components below `tol_limit`.
pub fn asymptotic_decay(
    kernel: &CoagulationKernel,
    init: &SizeDistribution,
    params: &DecayParams,
    solver: &SolverConfig,
) -> (ExperimentReport, Option<Trajectory>) {
    let mut config = with_horizon(solver, params.t_end);
    let mut times = config.samples();
    let t_conv = 0.9 * params.t_end;
    if !times.contains(&t_conv) {
        times.push(t_conv);
        times.sort_by(f64::total_cmp);
        config.sample_times = times;
    }
    let mut report = ExperimentReport::new("decay").with_config(serde_json::json!({
        "kernel": kernel.name,
        "initial": init.values(),
        "params": echo(params),
        "solver": echo(&config),
    }));
    report
        .threshold("envelope_slack", params.envelope_slack)
        .threshold("tol_conv", params.tol_conv)
        .threshold("tol_limit", params.tol_limit);
    let zeta = match kernel.lower_bound_zeta {
        Some(z) if z > 0.0 => z,
        _ => {
            report.check("hypothesis", false, "kernel must declare a positive lower bound zeta");
            return (report, None);
        }
    };
    let admissible = kernel.check_admissibility(kernel.check_size_for(init.truncation()));
    report.check(
        "zeta_validated",
        admissible.checks.iter().all(|c| c.name != "lower_bound" || c.passed),
        format!("gamma >= {zeta} on the admissibility grid"),
    );
    let traj = match integrate(init, kernel, &config) {
        Ok(t) => t,
        Err(e) => {
            failed_run(&mut report, "decay", &e);
            return (report, None);
        }
    };
    let m0_0 = traj.first().number();
    let slack_abs = 1e-9 * m0_0;
    let max_rise = traj
        .samples
        .windows(2)
        .map(|w| w[1].number() - w[0].number())
        .fold(f64::NEG_INFINITY, f64::max);
    report.metric("max_number_increase", max_rise);
    report.check("number_nonincreasing", max_rise <= slack_abs, format!("max rise {max_rise:e}"));

    let mut max_env_ratio = 0.0_f64;
    for s in &traj.samples {
        let env = riccati_envelope(m0_0, zeta, s.time());
        if env > 0.0 {
            max_env_ratio = max_env_ratio.max(s.number() / env);
        }
    }
    let m0_end = traj.last().number();
    report
        .metric("zeta", zeta)
        .metric("M0_final", m0_end)
        .metric("envelope_final", riccati_envelope(m0_0, zeta, params.t_end))
        .metric("max_envelope_ratio", max_env_ratio);
    report.check(
        "riccati_envelope",
        max_env_ratio <= 1.0 + params.envelope_slack,
        format!("max M0(t)/envelope(t) = {max_env_ratio}"),
    );

    let at_conv = traj
        .samples
        .iter()
        .find(|s| s.time() == t_conv)
        .expect("0.9 T was added to the sample grid");
    let n = params.components.min(init.truncation());
    let mut max_change = 0.0_f64;
    let mut max_value = 0.0_f64;
    for i in 1..=n {
        let (late, end) = (at_conv.get(i), traj.last().get(i));
        report.metric(format!("xi_{i}(T)"), end);
        max_change = max_change.max((end - late).abs());
        max_value = max_value.max(end.abs());
    }
    report.metric("max_component_change", max_change).metric("max_component_value", max_value);
    report.check(
        "components_converge",
        max_change <= params.tol_conv,
        format!("max |xi_i(T) - xi_i(0.9T)| = {max_change:e}, i <= {n}"),
    );
    report.check(
        "components_vanish",
        max_value <= params.tol_limit,
        format!("max xi_i(T) = {max_value:e}, i <= {n}"),
    );
    (report, Some(traj))
}

// ---------------------------------------------------------------------------
// Identity audit
// ---------------------------------------------------------------------------

/// Cumulative composite Simpson integral on a possibly non-uniform grid,
/// evaluated at every node. Pairs of intervals use the three-point rule; a
/// trailing single interval integrates the quadratic through its last three
/// nodes over that interval only.
pub fn cumulative_simpson(t: &[f64], f: &[f64]) -> Vec<f64> {
    assert_eq!(t.len(), f.len());
    let n = t.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * (t[1] - t[0]) * (f[0] + f[1]);
        return out;
    }
    // Integral of the quadratic through (t0,f0),(t1,f1),(t2,f2) over [t0, t0 + ...].
    let partial = |i: usize, a: f64, b: f64| -> f64 {
        let (x0, x1, x2) = (t[i], t[i + 1], t[i + 2]);
        let (y0, y1, y2) = (f[i], f[i + 1], f[i + 2]);
        // Newton form: y0 + d1 (x − x0) + d2 (x − x0)(x − x1)
        let d1 = (y1 - y0) / (x1 - x0);
        let d2 = ((y2 - y1) / (x2 - x1) - d1) / (x2 - x0);
        let prim = |x: f64| {
            let u = x - x0;
            y0 * u + 0.5 * d1 * u * u + d2 * (u * u * u / 3.0 - 0.5 * (x1 - x0) * u * u)
        };
        prim(b) - prim(a)
    };
    let mut i = 0;
    while i + 2 < n {
        out[i + 1] = out[i] + partial(i, t[i], t[i + 1]);
        out[i + 2] = out[i] + partial(i, t[i], t[i + 2]);
        i += 2;
    }
    if i + 1 < n {
        out[i + 1] = out[i] + partial(i - 1, t[i], t[i + 1]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityParams {
    #[serde(default = "IdentityParams::default_t_end")]
    pub t_end: f64,
    #[serde(default = "IdentityParams::default_q_list")]
    pub q_list: Vec<usize>,
    #[serde(default = "IdentityParams::default_samples")]
    pub samples: usize,
    #[serde(default = "IdentityParams::default_residual_factor")]
    pub residual_factor: f64,
    #[serde(default = "IdentityParams::default_adjoint_tolerance")]
    pub adjoint_tolerance: f64,
}

impl IdentityParams {
    fn default_t_end() -> f64 {
        5.0
    }
    fn default_q_list() -> Vec<usize> {
        vec![8, 16, 31]
    }
    fn default_samples() -> usize {
        2000
    }
    fn default_residual_factor() -> f64 {
        10.0
    }
    fn default_adjoint_tolerance() -> f64 {
        1e-12
    }
}

impl Default for IdentityParams {
    fn default() -> Self {
        Self {
            t_end: Self::default_t_end(),
            q_list: Self::default_q_list(),
            samples: Self::default_samples(),
            residual_factor: Self::default_residual_factor(),
            adjoint_tolerance: Self::default_adjoint_tolerance(),
        }
    }
}

/// Test sequences 1, i, i² and the alternating (−1)^i i.
pub fn phi_catalog(len: usize) -> Vec<TestSequence> {
    vec![
        TestSequence::constant(len, 1.0),
        TestSequence::power(len, 1.0),
        TestSequence::power(len, 2.0),
        TestSequence::alternating(len, 1.0),
    ]
}

/// Cancellation-aware comparison of the weak form against `Σ ψ_i rhs_i`:
/// returns `|weak − direct| / Σ |ψ_i| (birth_i + death_i)` (0 when both vanish).
pub fn adjoint_residual(
    psi: &TestSequence,
    state: &SizeDistribution,
    kernel: &CoagulationKernel,
) -> Result<f64, crate::system::SystemError> {
    let k = state.truncation();
    let mut rhs = Rhs::new(kernel, k)?;
    let mut deriv = vec![0.0; k];
    rhs.eval(state.values(), &mut deriv)?;
    let gross = rhs.gross_flux(state.values())?;
    let direct = crate::sum::kahan_sum(psi.values().iter().zip(&deriv).map(|(p, d)| p * d));
    let weak = weak_form_rate(psi, state, kernel)?;
    let scale: f64 = psi.values().iter().zip(&gross).map(|(p, g)| p.abs() * g).sum();
    let diff = (weak - direct).abs();
    Ok(if diff == 0.0 { 0.0 } else { diff / scale })
}

/// Worst [`adjoint_residual`] over `states` seeded random distributions per
/// kernel, with truncations in `2..=max_k` and random exponential decay.
pub fn adjoint_sweep(kernels: &[CoagulationKernel], states: usize, max_k: usize, seed: u64, tolerance: f64) -> ExperimentReport {
    let mut report = ExperimentReport::new("adjoint-sweep").with_config(serde_json::json!({
        "kernels": kernels.iter().map(|k| k.name.clone()).collect::<Vec<_>>(),
        "states": states,
        "max_k": max_k,
        "seed": seed,
    }));
    report.threshold("adjoint", tolerance);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for kernel in kernels {
        let cap = kernel.max_size().map_or(max_k, |m| m.min(max_k)).max(2);
        for _ in 0..states {
            let k = rng.gen_range(2..=cap);
            let decay: f64 = rng.gen_range(0.05..1.0);
            let values: Vec<f64> = (1..=k).map(|i| rng.gen::<f64>() * (-decay * i as f64).exp()).collect();
            let state = SizeDistribution::new(values, 0.0).expect("finite nonnegative");
            for psi in phi_catalog(k) {
                match adjoint_residual(&psi, &state, kernel) {
                    Ok(r) => worst = worst.max(r),
                    Err(e) => {
                        report.check("adjoint", false, e.to_string());
                        return report;
                    }
                }
            }
        }
    }
    report.metric("states_per_kernel", states as f64).metric("max_adjoint_residual", worst);
    report.check("adjoint", worst <= tolerance, format!("max relative adjoint residual {worst:e}"));
    report
}

/// Audits the finite-q identity along `traj`: for every Φ and q,
/// `Σ_{i≤q} Φ_i ξ_i(t) − Σ_{i≤q} Φ_i ξ_i(0)` must match the Simpson integral
/// of the identity rate to `residual_factor · rel_tol` relative to
/// `max_t |Σ_{i≤q} Φ_i ξ_i(t)|`. `q = k` uses the weak form. The weak form is
/// also checked pointwise against the right-hand side at every sample.
pub fn identity_audit(
    traj: &Trajectory,
    kernel: &CoagulationKernel,
    phis: &[TestSequence],
    q_list: &[usize],
    rel_tol: f64,
    params: &IdentityParams,
) -> ExperimentReport {
    let threshold = params.residual_factor * rel_tol;
    let mut report = ExperimentReport::new("identity").with_config(serde_json::json!({
        "kernel": kernel.name,
        "truncation": traj.truncation,
        "phi": phis.iter().map(|p| p.name.clone()).collect::<Vec<_>>(),
        "q_list": q_list,
        "params": echo(params),
    }));
    report
        .threshold("residual", threshold)
        .threshold("adjoint", params.adjoint_tolerance);
    let k = traj.truncation;
    let times = traj.times();
    let mut worst = 0.0_f64;
    let mut first_fail = None;
    for phi in phis {
        for &q in q_list {
            if q == 0 || q > k || phi.len() < q.min(k) {
                report.check(format!("q={q}"), false, format!("q must lie in 1..={k}"));
                continue;
            }
            let rates: Result<Vec<f64>, _> = traj
                .samples
                .iter()
                .map(|s| {
                    if q < k {
                        finite_identity_rate(phi, s, kernel, q)
                    } else {
                        let psi = TestSequence::new(phi.name.clone(), phi.values()[..k].to_vec());
                        weak_form_rate(&psi, s, kernel)
                    }
                })
                .collect();
            let rates = match rates {
                Ok(r) => r,
                Err(e) => {
                    report.check(format!("{}:q={q}", phi.name), false, e.to_string());
                    continue;
                }
            };
            let integral = cumulative_simpson(&times, &rates);
            let values: Vec<f64> = traj.samples.iter().map(|s| partial_functional(phi, s, q)).collect();
            let scale = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let mut residual = 0.0_f64;
            for (v, int) in values.iter().zip(&integral) {
                let diff = (v - values[0] - int).abs();
                if diff > 0.0 {
                    residual = residual.max(diff / scale);
                }
            }
            report.metric(format!("residual[{},q={q}]", phi.name), residual);
            if residual > threshold && first_fail.is_none() {
                first_fail = Some(format!("{} q={q}: {residual:e}", phi.name));
            }
            worst = worst.max(residual);
            if q == k && phi.name == "i^1" {
                report.metric("integrated_mass_rate", -integral.last().copied().unwrap_or(0.0));
                report.metric("mass_defect", mass_defect(traj));
            }
        }
    }
    report.metric("max_residual", worst);
    report.check(
        "integrated_identity",
        first_fail.is_none(),
        first_fail.unwrap_or_else(|| format!("max residual {worst:e}")),
    );

    let psis = phi_catalog(k);
    let mut adjoint_worst = 0.0_f64;
    for s in &traj.samples {
        for psi in &psis {
            match adjoint_residual(psi, s, kernel) {
                Ok(r) => adjoint_worst = adjoint_worst.max(r),
                Err(e) => {
                    report.check("adjoint", false, e.to_string());
                    return report;
                }
            }
        }
    }
    report.metric("max_adjoint_residual", adjoint_worst);
    report.check(
        "adjoint",
        adjoint_worst <= params.adjoint_tolerance,
        format!("max relative adjoint residual {adjoint_worst:e}"),
    );
    report
}

// ---------------------------------------------------------------------------
// Time rescaling (constant kernel)
// ---------------------------------------------------------------------------

/// For γ ≡ c: `integrate(α ξ)(t) = α integrate(ξ)(α t)`; compared on the
/// configured sample grid to `10 · rel_tol` relative to the largest component.
pub fn time_rescaling(
    kernel: &CoagulationKernel,
    init: &SizeDistribution,
    alpha: f64,
    solver: &SolverConfig,
) -> ExperimentReport {
    let threshold = 10.0 * solver.rel_tol;
    let mut report = ExperimentReport::new(format!("time-rescaling(alpha={alpha})")).with_config(serde_json::json!({
        "kernel": kernel.name,
        "alpha": alpha,
        "solver": echo(solver),
    }));
    report.threshold("relative_error", threshold);
    if !matches!(kernel.rule, KernelRule::Constant { .. }) {
        report.check("hypothesis", false, "time rescaling holds only for size-independent kernels");
        return report;
    }
    let scaled_init = match init.scaled(alpha) {
        Ok(s) => s,
        Err(e) => {
            report.check("alpha", false, e.to_string());
            return report;
        }
    };
    let times = solver.samples();
    let stretched = solver
        .clone()
        .with_sample_times(times.iter().map(|t| alpha * t).collect());
    let mut stretched = stretched;
    stretched.t_end = alpha * solver.t_end;
    if let Some(h) = stretched.max_step.as_mut() {
        *h *= alpha;
    }
    *stretched.sample_times.last_mut().expect("nonempty") = stretched.t_end;
    let jobs = [(&scaled_init, solver), (init, &stretched)];
    let runs = parallel_map(&jobs, |(x, c)| integrate(x, kernel, c));
    let (a, b) = match (&runs[0], &runs[1]) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            failed_run(&mut report, "rescaling", e);
            return report;
        }
    };
    let mut worst = 0.0_f64;
    let mut scale = 0.0_f64;
    for (sa, sb) in a.samples.iter().zip(&b.samples) {
        for (x, y) in sa.values().iter().zip(sb.values()) {
            worst = worst.max((x - alpha * y).abs());
            scale = scale.max(x.abs());
        }
    }
    let relative = if scale > 0.0 { worst / scale } else { worst };
    report.metric("max_abs_error", worst).metric("relative_error", relative);
    report.check("rescaling", relative <= threshold, format!("max |diff| / max |xi| = {relative:e}"));
    report
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsParams {
    #[serde(default = "WeightsParams::default_max_size")]
    pub max_size: usize,
    #[serde(default = "WeightsParams::default_tail_budget")]
    pub tail_budget: f64,
    /// Horizon of the moment-propagation run.
    #[serde(default = "WeightsParams::default_t_end")]
    pub t_end: f64,
}

impl WeightsParams {
    fn default_max_size() -> usize {
        500
    }
    fn default_tail_budget() -> f64 {
        1.0
    }
    fn default_t_end() -> f64 {
        5.0
    }
}

impl Default for WeightsParams {
    fn default() -> Self {
        Self {
            max_size: Self::default_max_size(),
            tail_budget: Self::default_tail_budget(),
            t_end: Self::default_t_end(),
        }
    }
}

/// Weight-side checks for given initial data: the inequality and G1
/// invariants for x, x^1.5, x² and the constructed weight; the constructed
/// weight's moment bound; and moment propagation along a run for x² and the
/// constructed weight.
pub fn weights_study(
    kernel: &CoagulationKernel,
    init: &SizeDistribution,
    params: &WeightsParams,
    solver: &SolverConfig,
) -> (ExperimentReport, Option<ConvexWeight>) {
    let config = with_horizon(solver, params.t_end);
    let mut report = ExperimentReport::new("weights").with_config(serde_json::json!({
        "kernel": kernel.name,
        "initial": init.values(),
        "params": echo(params),
        "solver": echo(&config),
    }));
    let dlvp = match construct_dlvp(init.values(), params.tail_budget) {
        Ok(w) => w,
        Err(e) => {
            report.check("construct_dlvp", false, e.to_string());
            return (report, None);
        }
    };
    if let Some(w) = &dlvp.warning {
        report.note(w.clone());
    }
    let mut weights = ConvexWeight::catalog();
    weights.push(dlvp.clone());
    for w in &weights {
        report.absorb(&format!("ineq:{}", w.name), &check_inequality_15(w, params.max_size));
        report.absorb(&format!("g1:{}", w.name), &w.check_invariants(1e3, 400));
    }
    let bound = dlvp_moment_bound(init.values(), params.tail_budget);
    let initial_g = g_moment(init, &dlvp);
    report.metric("dlvp_initial_moment", initial_g).metric("dlvp_bound", bound);
    report.check(
        "dlvp_bound",
        initial_g <= bound,
        format!("sum G(i) xi_i = {initial_g} <= {bound}"),
    );
    match integrate(init, kernel, &config) {
        Ok(traj) => {
            let square = ConvexWeight::power(2.0).expect("in range");
            report.absorb("propagation:x^2", &check_moment_propagation(&traj, &square, kernel));
            report.absorb("propagation:dlvp", &check_moment_propagation(&traj, &dlvp, kernel));
        }
        Err(e) => failed_run(&mut report, "propagation", &e),
    }
    (report, Some(dlvp))
}

// ---------------------------------------------------------------------------
// Experiment selection
// ---------------------------------------------------------------------------

/// Experiment block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum ExperimentSpec {
    Truncation(TruncationParams),
    Dependence(DependenceParams),
    Decay(DecayParams),
    Identity(IdentityParams),
    Admissibility {
        #[serde(default)]
        max_size: Option<usize>,
    },
    Weights(WeightsParams),
}

impl ExperimentSpec {
    pub const NAMES: [&'static str; 6] = ["truncation", "dependence", "decay", "identity", "admissibility", "weights"];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Truncation(_) => "truncation",
            Self::Dependence(_) => "dependence",
            Self::Decay(_) => "decay",
            Self::Identity(_) => "identity",
            Self::Admissibility { .. } => "admissibility",
            Self::Weights(_) => "weights",
        }
    }
}
