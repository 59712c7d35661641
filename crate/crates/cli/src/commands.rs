use std::path::{Path, PathBuf};

use coagkin::diagnostics::{check_monotonicity, mass_defect};
use coagkin::experiments::{
    adjoint_sweep, asymptotic_decay, dependence_study, identity_audit, phi_catalog, truncation_convergence,
    weights_study, with_horizon, ExperimentSpec,
};
use coagkin::output::{diagnostics_csv, moments_plot, svg_plot, trajectory_csv, write_atomic, write_json, AxisScale, Series};
use coagkin::{integrate, CoagulationKernel, ExperimentReport, IntegrationError, Status, Trajectory};

use crate::config::{ConfigError, Loaded};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_VERIFY: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_INTERRUPTED: u8 = 130;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("kernel is not admissible: {0}")]
    Admissibility(String),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Admissibility(_) => EXIT_CONFIG,
            CliError::Output { .. } => EXIT_NUMERIC,
        }
    }
}

struct Writer<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn new(dir: &'a Path) -> Self {
        Self { dir, written: Vec::new() }
    }

    fn text(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Err(source) = write_atomic(&path, contents.as_bytes()) {
            return Err(CliError::Output { path, source });
        }
        self.written.push(path);
        Ok(())
    }

    fn trajectory(&mut self, prefix: &str, traj: &Trajectory) -> Result<(), CliError> {
        self.text(&format!("{prefix}trajectory.csv"), &trajectory_csv(traj))?;
        self.text(&format!("{prefix}diagnostics.csv"), &diagnostics_csv(&traj.diagnostics, &traj.outflow))?;
        self.text(&format!("{prefix}moments.svg"), &moments_plot(traj))
    }

    /// Writes `report` (plus the full run configuration) as the last artifact.
    fn report(&mut self, name: &str, mut report: ExperimentReport, loaded: &Loaded) -> Result<ExperimentReport, CliError> {
        let path = self.dir.join(name);
        report.artifacts.append(&mut self.written);
        report.artifacts.push(path.clone());
        let echo = std::mem::take(&mut report.config_echo);
        report.config_echo = serde_json::json!({
            "run": serde_json::to_value(&loaded.config).unwrap_or_default(),
            "experiment": echo,
        });
        write_json(&path, &report).map_err(|source| CliError::Output { path, source })?;
        Ok(report)
    }
}

fn require_admissible(kernel: &CoagulationKernel, k: usize) -> Result<(), CliError> {
    let report = kernel.check_admissibility(kernel.check_size_for(k));
    match report.first_failure() {
        Some(c) => Err(CliError::Admissibility(format!("{}: {}", c.name, c.detail))),
        None => Ok(()),
    }
}

/// Exit code for a finished report: pass, interrupted, numeric failure of an
/// underlying run, or verification failure.
fn verdict(report: &ExperimentReport) -> u8 {
    match report.status {
        Status::Pass => EXIT_OK,
        Status::Interrupted => EXIT_INTERRUPTED,
        Status::Fail => {
            let numeric = report
                .checks
                .iter()
                .any(|c| !c.passed && c.name.contains("integrate:") && !c.detail.starts_with("trajectory invariant"));
            if numeric {
                EXIT_NUMERIC
            } else {
                EXIT_VERIFY
            }
        }
    }
}

pub fn simulate(loaded: &Loaded) -> Result<u8, CliError> {
    let cfg = &loaded.config;
    require_admissible(&loaded.kernel, cfg.truncation_k)?;
    let init = loaded.initial()?;
    let mut out = Writer::new(loaded.output_dir());
    let mut report = ExperimentReport::new("simulate");
    report.threshold("mass_slack", 1e-9 * init.mass());
    let traj = match integrate(&init, &loaded.kernel, &cfg.solver) {
        Ok(t) => t,
        Err(IntegrationError::InvariantViolation { detail, trajectory }) => {
            out.trajectory("", &trajectory)?;
            report.check("invariants", false, detail);
            out.report("summary.json", report, loaded)?;
            return Ok(EXIT_VERIFY);
        }
        Err(e) => {
            let code = match &e {
                IntegrationError::Interrupted { .. } => {
                    report.mark_interrupted();
                    EXIT_INTERRUPTED
                }
                IntegrationError::Config(_) => EXIT_CONFIG,
                _ => EXIT_NUMERIC,
            };
            report.check("integrate", false, e.to_string());
            out.report("summary.json", report, loaded)?;
            return Ok(code);
        }
    };
    out.trajectory("", &traj)?;
    let s = &traj.step_stats;
    report
        .metric("M0_final", traj.last().number())
        .metric("M1_initial", traj.first().mass())
        .metric("M1_final", traj.last().mass())
        .metric("mass_defect", mass_defect(&traj))
        .metric("accepted_steps", s.accepted as f64)
        .metric("rejected_steps", s.rejected as f64)
        .metric("rhs_evaluations", s.rhs_evaluations as f64)
        .metric("clamped_mass", s.clamped_mass + s.sample_clamped_mass);
    report.absorb("monotonicity", &check_monotonicity(&traj));
    let report = out.report("summary.json", report, loaded)?;
    Ok(verdict(&report))
}

pub fn verify(loaded: &Loaded) -> Result<u8, CliError> {
    let spec = loaded.experiment()?;
    let cfg = &loaded.config;
    let kernel = &loaded.kernel;
    if !matches!(spec, ExperimentSpec::Admissibility { .. }) {
        require_admissible(kernel, cfg.truncation_k)?;
    }
    let init = loaded.initial()?;
    let mut out = Writer::new(loaded.output_dir());
    let report = match &spec {
        ExperimentSpec::Truncation(p) => {
            let (report, runs) =
                truncation_convergence(kernel, &loaded.rule, cfg.initial.mass_scale, p, &cfg.solver);
            if !runs.is_empty() {
                let series = Series {
                    label: "mass defect".into(),
                    points: runs.iter().map(|r| (r.k as f64, r.defect)).collect(),
                };
                out.text(
                    "defect_vs_k.svg",
                    &svg_plot("mass defect vs truncation", "k", "defect", &[series], AxisScale::Log, AxisScale::Log),
                )?;
            }
            report
        }
        ExperimentSpec::Dependence(p) => dependence_study(kernel, &init, p, &cfg.solver),
        ExperimentSpec::Decay(p) => {
            let (report, traj) = asymptotic_decay(kernel, &init, p, &cfg.solver);
            if let Some(t) = traj {
                out.trajectory("decay_", &t)?;
            }
            report
        }
        ExperimentSpec::Identity(p) => {
            let solver = with_horizon(&cfg.solver, p.t_end).with_uniform_samples(p.samples);
            match integrate(&init, kernel, &solver) {
                Ok(traj) => {
                    out.trajectory("identity_", &traj)?;
                    let mut report = identity_audit(&traj, kernel, &phi_catalog(cfg.truncation_k), &p.q_list, solver.rel_tol, p);
                    let sweep = adjoint_sweep(
                        std::slice::from_ref(kernel),
                        200,
                        cfg.truncation_k,
                        cfg.seed,
                        p.adjoint_tolerance,
                    );
                    report.absorb("random_states", &sweep);
                    report
                }
                Err(e) => {
                    let mut report = ExperimentReport::new("identity");
                    if matches!(e, IntegrationError::Interrupted { .. }) {
                        report.mark_interrupted();
                    }
                    report.check("integrate:identity", false, e.to_string());
                    report
                }
            }
        }
        ExperimentSpec::Admissibility { max_size } => {
            let size = max_size.unwrap_or_else(|| kernel.check_size_for(cfg.truncation_k));
            kernel.check_admissibility(size)
        }
        ExperimentSpec::Weights(p) => {
            let (report, weight) = weights_study(kernel, &init, p, &cfg.solver);
            if let Some(json) = weight.as_ref().and_then(|w| w.knot_json()) {
                out.text("dlvp_weight.json", &format!("{json:#}\n"))?;
            }
            report
        }
    };
    let report = out.report(&format!("{}_report.json", spec.name()), report, loaded)?;
    Ok(verdict(&report))
}
