//! Acceptance suite: one check per criterion, each printing a single
//! `PASS`/`FAIL` line with the measured quantity. Runs without the libtest
//! harness so the verdicts are always visible; exits non-zero if any fails.

use std::time::{Duration, Instant};

use coagkin::diagnostics::{check_moment_propagation, check_monotonicity, g_moment};
use coagkin::experiments::{
    adjoint_sweep, asymptotic_decay, dependence_study, identity_audit, time_rescaling,
    truncation_convergence, DecayParams, DependenceParams, IdentityParams, TruncationParams,
};
use coagkin::weights::{check_inequality_15, construct_dlvp};
use coagkin::{integrate, CoagulationKernel, ConvexWeight, InitialRule, SizeDistribution, SolverConfig, TestSequence};

fn verdict(id: u32, name: &str, passed: bool, detail: impl std::fmt::Display) -> bool {
    println!("{} [{id:>2}] {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    passed
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() <= limit_s
}

fn monomer(k: usize) -> SizeDistribution {
    InitialRule::Monomer.build(k, 1.0).unwrap()
}

fn criterion_01_positivity_and_mass_monotonicity() -> bool {
    let kernels = [
        CoagulationKernel::constant(1.0),
        CoagulationKernel::additive(1.0),
        CoagulationKernel::power_sum(1.0, 0.5),
    ];
    let init = monomer(64);
    let m1 = init.mass();
    let config = SolverConfig::new(10.0).with_tolerances(1e-8, 1e-10);
    let mut ok = true;
    let mut details = Vec::new();
    for kernel in &kernels {
        let start = Instant::now();
        let traj = integrate(&init, kernel, &config).unwrap();
        let elapsed = start.elapsed();
        let negative = traj.samples.iter().flat_map(|s| s.values()).any(|v| *v < 0.0);
        let clamped = traj.step_stats.clamped_mass + traj.step_stats.sample_clamped_mass;
        let mono = check_monotonicity(&traj);
        let rise = mono.metrics["max_mass_increase"];
        let pass = !negative && clamped <= 1e-9 * m1 && rise <= 1e-9 * m1 && within(elapsed, 10.0);
        ok &= pass;
        details.push(format!(
            "{}: clamped={clamped:.2e} max_M1_rise={rise:.2e} {:.2}s",
            kernel.name,
            elapsed.as_secs_f64()
        ));
    }
    verdict(1, "positivity + mass non-increasing", ok, details.join("; "))
}

fn criterion_02_oracle_equivalence() -> bool {
    let kernel = CoagulationKernel::constant(1.0);
    let init = monomer(8);
    let start = Instant::now();
    let adaptive = integrate(&init, &kernel, &SolverConfig::new(1.0).with_uniform_samples(20)).unwrap();
    let oracle = integrate(&init, &kernel, &SolverConfig::fixed_step(1.0, 1e-4).with_uniform_samples(20)).unwrap();
    let elapsed = start.elapsed();
    let err = adaptive
        .samples
        .iter()
        .zip(&oracle.samples)
        .flat_map(|(a, b)| a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    verdict(
        2,
        "adaptive vs RK4 oracle",
        err <= 1e-6 && within(elapsed, 5.0),
        format!("max abs error {err:.3e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn criterion_03_convergence_order() -> bool {
    let kernel = CoagulationKernel::constant(1.0);
    let init = monomer(8);
    let run = |h: f64| {
        integrate(&init, &kernel, &SolverConfig::fixed_step(1.0, h).with_uniform_samples(1))
            .unwrap()
            .last()
            .values()
            .to_vec()
    };
    let h = 0.025;
    let (coarse, fine, reference) = (run(h), run(h / 2.0), run(h / 4.0));
    let err = |a: &[f64]| a.iter().zip(&reference).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let ratio = err(&coarse) / err(&fine);
    verdict(
        3,
        "fixed-step convergence order",
        (14.0..=18.0).contains(&ratio),
        format!("error ratio {ratio:.3} (h = {h} -> {})", h / 2.0),
    )
}

fn criterion_04_mass_conservation_in_the_limit() -> bool {
    let start = Instant::now();
    let (report, runs) = truncation_convergence(
        &CoagulationKernel::constant(1.0),
        &InitialRule::Monomer,
        1.0,
        &TruncationParams {
            k_list: vec![16, 32, 64, 128],
            t_end: 5.0,
            defect_threshold: 1e-6,
        },
        &SolverConfig::new(5.0),
    );
    let elapsed = start.elapsed();
    let strictly = runs.windows(2).all(|w| w[1].defect < w[0].defect);
    let last = runs.last().map_or(f64::NAN, |r| r.defect);
    let defects: Vec<String> = runs.iter().map(|r| format!("{}:{:.2e}", r.k, r.defect)).collect();
    verdict(
        4,
        "truncation mass defect",
        report.passed() && strictly && last <= 1e-6 && within(elapsed, 60.0),
        format!("defects [{}], {:.2}s", defects.join(" "), elapsed.as_secs_f64()),
    )
}

fn criterion_05_identity_audit() -> bool {
    let kernels = [
        CoagulationKernel::constant(1.0),
        CoagulationKernel::additive(1.0),
        CoagulationKernel::power_sum(1.0, 0.5),
    ];
    let sweep = adjoint_sweep(&kernels, 1000, 64, 20240601, 1e-12);
    let worst_adjoint = sweep.metrics["max_adjoint_residual"];

    let kernel = CoagulationKernel::constant(1.0);
    let rel_tol = 1e-8;
    let params = IdentityParams::default();
    let config = SolverConfig::new(5.0)
        .with_tolerances(rel_tol, 1e-10)
        .with_uniform_samples(params.samples);
    let traj = integrate(&monomer(32), &kernel, &config).unwrap();
    let phis = vec![
        TestSequence::constant(32, 1.0),
        TestSequence::power(32, 1.0),
        TestSequence::power(32, 2.0),
    ];
    let report = identity_audit(&traj, &kernel, &phis, &[8, 16, 31], rel_tol, &params);
    let residual = report.metrics["max_residual"];
    verdict(
        5,
        "adjoint consistency + integrated identity",
        sweep.passed() && residual <= 10.0 * rel_tol && report.passed(),
        format!("adjoint {worst_adjoint:.2e} (3000 states), identity residual {residual:.2e}"),
    )
}

fn criterion_06_inequality_exhaustive() -> bool {
    let geometric: Vec<f64> = (1..=1000).map(|i| 0.5_f64.powi(i)).collect();
    let mut weights = ConvexWeight::catalog();
    weights.push(construct_dlvp(&geometric, 1.0).unwrap());
    let mut violations = 0.0;
    let mut parts = Vec::new();
    for w in &weights {
        let r = check_inequality_15(w, 500);
        violations += r.metrics["violations"];
        parts.push(format!("{}: {} violations", w.name, r.metrics["violations"]));
    }
    let square = ConvexWeight::power(2.0).unwrap();
    let eq = |i: f64, j: f64| {
        let g = |x: f64| square.eval(x).unwrap();
        (i + j) * (g(i + j) - g(i) - g(j)) == 2.0 * (i * g(j) + j * g(i))
    };
    let anchors = eq(1.0, 1.0) && eq(2.0, 3.0);
    verdict(
        6,
        "inequality over 1..=500",
        violations == 0.0 && anchors,
        format!("{}; x^2 equality at (1,1),(2,3): {anchors}", parts.join(", ")),
    )
}

fn criterion_07_moment_propagation() -> bool {
    let square = ConvexWeight::power(2.0).unwrap();
    let config = SolverConfig::new(5.0);
    let mut ok = true;
    let mut parts = Vec::new();
    for kernel in [CoagulationKernel::constant(1.0), CoagulationKernel::additive(1.0)] {
        let traj = integrate(&monomer(32), &kernel, &config).unwrap();
        let r = check_moment_propagation(&traj, &square, &kernel);
        ok &= r.passed();
        parts.push(format!("{}: max ratio {:.4}", kernel.name, r.metrics["max_ratio"]));
    }
    verdict(7, "G = x^2 moment propagation", ok, parts.join("; "))
}

fn criterion_08_dlvp_construction() -> bool {
    let b = 1.0;
    let geometric: Vec<f64> = (1..=1000).map(|i| 0.5_f64.powi(i)).collect();
    let w = construct_dlvp(&geometric, b).unwrap();
    let inv = w.check_invariants(1e3, 400);
    let state = SizeDistribution::new(geometric.clone(), 0.0).unwrap();
    let brute: f64 = geometric
        .iter()
        .enumerate()
        .map(|(n, x)| w.eval((n + 1) as f64).unwrap() * x)
        .sum();
    let series: f64 = (0..200).map(|m| (m as f64 + 1.0) * 0.5_f64.powi(m)).sum();
    let bound = 2.0 * b * series;
    verdict(
        8,
        "dlVP weight for 2^-i data",
        inv.passed() && brute <= bound && (brute - g_moment(&state, &w)).abs() <= 1e-12 * brute,
        format!(
            "invariants {}, sum G(i) xi_i = {brute:.6} <= {bound:.6}",
            if inv.passed() { "ok" } else { "failed" }
        ),
    )
}

fn criterion_09_continuous_dependence_and_uniqueness() -> bool {
    let report = dependence_study(
        &CoagulationKernel::constant(1.0),
        &monomer(32),
        &DependenceParams::default(),
        &SolverConfig::new(2.0),
    );
    let m = &report.metrics;
    verdict(
        9,
        "continuous dependence + uniqueness",
        report.passed(),
        format!(
            "envelope ratio {:.3e}, identical max D {:.1e}, D(eps/2)/D(eps) {:.4}",
            m["eps.max_ratio"], m["identical.max_distance"], m["half_to_full_ratio"]
        ),
    )
}

fn criterion_10_asymptotic_decay() -> bool {
    let kernel = CoagulationKernel::constant(1.0);
    let start = Instant::now();
    let (report, _) = asymptotic_decay(
        &kernel,
        &monomer(128),
        &DecayParams::default(),
        &SolverConfig::new(100.0).with_uniform_samples(400),
    );
    let elapsed = start.elapsed();
    let m = &report.metrics;
    let pass = ["number_nonincreasing", "riccati_envelope", "components_vanish"]
        .iter()
        .all(|name| report.checks.iter().any(|c| c.name == *name && c.passed));
    verdict(
        10,
        "long-time decay",
        pass && within(elapsed, 120.0),
        format!(
            "M0(100) = {:.5}, envelope ratio {:.4}, max xi_i(100) (i<=5) = {:.3e}, {:.2}s",
            m["M0_final"],
            m["max_envelope_ratio"],
            m["max_component_value"],
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_11_time_rescaling() -> bool {
    let kernel = CoagulationKernel::constant(1.0);
    let config = SolverConfig::new(2.0).with_uniform_samples(40);
    let mut ok = true;
    let mut parts = Vec::new();
    for alpha in [0.5, 2.0] {
        let r = time_rescaling(&kernel, &monomer(32), alpha, &config);
        ok &= r.passed();
        parts.push(format!("alpha={alpha}: {:.2e}", r.metrics["relative_error"]));
    }
    verdict(11, "constant-kernel time rescaling", ok, parts.join("; "))
}

fn main() {
    let criteria: [fn() -> bool; 11] = [
        criterion_01_positivity_and_mass_monotonicity,
        criterion_02_oracle_equivalence,
        criterion_03_convergence_order,
        criterion_04_mass_conservation_in_the_limit,
        criterion_05_identity_audit,
        criterion_06_inequality_exhaustive,
        criterion_07_moment_propagation,
        criterion_08_dlvp_construction,
        criterion_09_continuous_dependence_and_uniqueness,
        criterion_10_asymptotic_decay,
        criterion_11_time_rescaling,
    ];
    let failed = criteria.iter().filter(|c| !c()).count();
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
