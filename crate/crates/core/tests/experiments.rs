use coagkin::diagnostics::mass_defect;
use coagkin::experiments::{
    asymptotic_decay, continuous_dependence, identity_audit, time_rescaling, truncation_convergence, DecayParams,
    IdentityParams, TruncationParams,
};
use coagkin::output::{parse_trajectory_csv, trajectory_csv};
use coagkin::{integrate, CoagulationKernel, InitialRule, SizeDistribution, SolverConfig, TestSequence};

#[test]
fn additive_kernel_defect_decreases_with_truncation() {
    let (report, runs) = truncation_convergence(
        &CoagulationKernel::additive(1.0),
        &InitialRule::Monomer,
        1.0,
        &TruncationParams {
            k_list: vec![32, 64, 128],
            t_end: 1.0,
            defect_threshold: 1e-6,
        },
        &SolverConfig::new(1.0),
    );
    assert!(report.passed(), "{:?}", report.first_failure());
    assert!(runs.windows(2).all(|w| w[1].defect < w[0].defect));
}

#[test]
fn additive_kernel_obeys_the_tighter_envelope() {
    let kernel = CoagulationKernel::additive(1.0);
    assert_eq!(kernel.lower_bound_zeta, Some(2.0));
    let params = DecayParams {
        t_end: 20.0,
        tol_conv: 1.0,
        tol_limit: 1.0,
        ..Default::default()
    };
    let (report, _) = asymptotic_decay(
        &kernel,
        &InitialRule::Monomer.build(128, 1.0).unwrap(),
        &params,
        &SolverConfig::new(20.0),
    );
    assert!(report.passed(), "{:?}", report.first_failure());
    assert!(report.metrics["max_envelope_ratio"] <= 1.0);
}

#[test]
fn mass_identity_reproduces_the_defect() {
    let kernel = CoagulationKernel::constant(1.0);
    let traj = integrate(
        &InitialRule::Monomer.build(16, 1.0).unwrap(),
        &kernel,
        &SolverConfig::new(5.0).with_uniform_samples(1000),
    )
    .unwrap();
    let r = identity_audit(
        &traj,
        &kernel,
        &[TestSequence::power(16, 1.0)],
        &[16],
        1e-8,
        &IdentityParams::default(),
    );
    assert!(r.passed(), "{:?}", r.first_failure());
    let integrated = r.metrics["integrated_mass_rate"];
    let defect = mass_defect(&traj);
    assert!(defect > 1e-4);
    assert!((integrated - defect).abs() <= 1e-7 * defect, "{integrated} vs {defect}");
}

#[test]
fn number_identity_below_the_boundary() {
    let kernel = CoagulationKernel::constant(1.0);
    let traj = integrate(
        &InitialRule::Monomer.build(16, 1.0).unwrap(),
        &kernel,
        &SolverConfig::new(2.0).with_uniform_samples(1000),
    )
    .unwrap();
    let r = identity_audit(
        &traj,
        &kernel,
        &[TestSequence::constant(16, 1.0)],
        &[15],
        1e-8,
        &IdentityParams::default(),
    );
    assert!(r.passed(), "{:?}", r.first_failure());
}

#[test]
fn dependence_envelope_for_additive_kernel() {
    let kernel = CoagulationKernel::additive(1.0);
    let a = InitialRule::Monomer.build(32, 1.0).unwrap();
    let mut v = a.values().to_vec();
    v[2] += 1e-4;
    let b = SizeDistribution::new(v, 0.0).unwrap();
    let r = continuous_dependence(&kernel, &a, &b, &SolverConfig::new(1.0));
    assert!(r.passed(), "{:?}", r.first_failure());
}

#[test]
fn time_rescaling_is_rejected_for_size_dependent_kernels() {
    let r = time_rescaling(
        &CoagulationKernel::additive(1.0),
        &InitialRule::Monomer.build(8, 1.0).unwrap(),
        2.0,
        &SolverConfig::new(1.0),
    );
    assert_eq!(r.first_failure().unwrap().name, "hypothesis");
}

#[test]
fn trajectory_csv_round_trips_exactly() {
    let traj = integrate(
        &InitialRule::Geometric { ratio: 0.5 }.build(12, 1.0).unwrap(),
        &CoagulationKernel::power_sum(1.0, 0.5),
        &SolverConfig::new(3.0).with_uniform_samples(30),
    )
    .unwrap();
    let (times, rows) = parse_trajectory_csv(&trajectory_csv(&traj)).unwrap();
    assert_eq!(times, traj.times());
    for (row, s) in rows.iter().zip(&traj.samples) {
        assert_eq!(row.as_slice(), s.values());
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let params = TruncationParams {
        k_list: vec![8, 16, 32],
        t_end: 2.0,
        defect_threshold: 1.0,
    };
    let run = || {
        truncation_convergence(
            &CoagulationKernel::constant(1.0),
            &InitialRule::Monomer,
            1.0,
            &params,
            &SolverConfig::new(2.0),
        )
        .1
        .into_iter()
        .map(|r| (r.defect, r.final_state))
        .collect::<Vec<_>>()
    };
    let parallel = run();
    std::env::set_var("COAGKIN_THREADS", "1");
    let serial = run();
    std::env::remove_var("COAGKIN_THREADS");
    assert_eq!(parallel, serial);
}
