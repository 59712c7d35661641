//! Moments, tail indicators, and per-trajectory bound checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::Trajectory;
use crate::kernel::CoagulationKernel;
use crate::report::ExperimentReport;
use crate::sum::kahan_sum;
use crate::system::{Rhs, SizeDistribution, SystemError};
use crate::weights::ConvexWeight;

/// Largest moment order accepted by [`moment`].
pub const MAX_MOMENT_ORDER: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("moment order must lie in [0, {MAX_MOMENT_ORDER}], got {0}")]
    OrderOutOfRange(f64),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Per-sample diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub moment_0: f64,
    pub moment_1: f64,
    /// `(m, Σ i^m ξ_i)` for each requested order.
    pub moments: Vec<(f64, f64)>,
    /// `(weight name, Σ G(i) ξ_i)`.
    pub g_moments: Vec<(String, f64)>,
    /// `Σ_{i > k/2} i ξ_i / M1`, zero for a massless state.
    pub tail_mass_fraction: f64,
    /// `max_i |dξ_i/dt|`.
    pub rhs_sup: f64,
}

impl DiagnosticsRecord {
    pub fn compute(
        state: &SizeDistribution,
        kernel: &CoagulationKernel,
        orders: &[f64],
        weights: &[&ConvexWeight],
    ) -> Result<Self, DiagnosticsError> {
        if let Some(&m) = orders.iter().find(|m| !(0.0..=MAX_MOMENT_ORDER).contains(*m)) {
            return Err(DiagnosticsError::OrderOutOfRange(m));
        }
        let mut rhs = Rhs::new(kernel, state.truncation())?;
        let mut deriv = vec![0.0; state.truncation()];
        rhs.eval(state.values(), &mut deriv)?;
        Ok(Self::from_parts(state, &deriv, orders, weights))
    }

    pub(crate) fn from_parts(
        state: &SizeDistribution,
        deriv: &[f64],
        orders: &[f64],
        weights: &[&ConvexWeight],
    ) -> Self {
        let m1 = state.mass();
        Self {
            time: state.time(),
            moment_0: state.number(),
            moment_1: m1,
            moments: orders.iter().map(|&m| (m, raw_moment(state, m))).collect(),
            g_moments: weights.iter().map(|w| (w.name.clone(), g_moment(state, w))).collect(),
            tail_mass_fraction: tail_mass_fraction(state),
            rhs_sup: deriv.iter().fold(0.0, |a, d| a.max(d.abs())),
        }
    }

    /// Value of the moment of order `m` if it was recorded.
    pub fn moment_of_order(&self, m: f64) -> Option<f64> {
        match m {
            _ if m == 0.0 => Some(self.moment_0),
            _ if m == 1.0 => Some(self.moment_1),
            _ => self.moments.iter().find(|(o, _)| *o == m).map(|(_, v)| *v),
        }
    }
}

fn raw_moment(state: &SizeDistribution, m: f64) -> f64 {
    if m == 0.0 {
        return state.number();
    }
    if m == 1.0 {
        return state.mass();
    }
    kahan_sum(
        state
            .values()
            .iter()
            .enumerate()
            .map(|(n, &x)| ((n + 1) as f64).powf(m) * x),
    )
}

/// `M_m = Σ i^m ξ_i`, compensated, for `0 ≤ m ≤ 4`.
pub fn moment(state: &SizeDistribution, m: f64) -> Result<f64, DiagnosticsError> {
    if !(0.0..=MAX_MOMENT_ORDER).contains(&m) {
        return Err(DiagnosticsError::OrderOutOfRange(m));
    }
    Ok(raw_moment(state, m))
}

/// `Σ G(i) ξ_i`, compensated.
pub fn g_moment(state: &SizeDistribution, weight: &ConvexWeight) -> f64 {
    kahan_sum(
        state
            .values()
            .iter()
            .enumerate()
            .map(|(n, &x)| weight.value((n + 1) as f64) * x),
    )
}

pub fn tail_mass_fraction(state: &SizeDistribution) -> f64 {
    let m1 = state.mass();
    if m1 == 0.0 {
        return 0.0;
    }
    let half = state.truncation() / 2;
    let tail = kahan_sum(
        state
            .values()
            .iter()
            .enumerate()
            .skip(half)
            .map(|(n, &x)| (n + 1) as f64 * x),
    );
    tail / m1
}

/// Mass lost through the truncation boundary over the run, `M1(0) − M1(T)`,
/// evaluated as the time integral of the boundary outflow rate.
pub fn mass_defect(traj: &Trajectory) -> f64 {
    traj.outflow.last().copied().unwrap_or(0.0)
}

/// `M1(0) − M1(T)` computed by direct subtraction of the sampled masses.
pub fn mass_drop(traj: &Trajectory) -> f64 {
    traj.first().mass() - traj.last().mass()
}

/// Verifies `M_G(t) ≤ M_G(0) exp(C t)` with `C = 4 A M1(0)` at every sample.
pub fn check_moment_propagation(
    traj: &Trajectory,
    weight: &ConvexWeight,
    kernel: &CoagulationKernel,
) -> ExperimentReport {
    let mut report = ExperimentReport::new(format!("moment-propagation:{}", weight.name));
    let m1_0 = traj.first().mass();
    let rate = 4.0 * kernel.growth_constant * m1_0;
    report.metric("gronwall_rate", rate).threshold("max_ratio", 1.0);
    let g0 = g_moment(traj.first(), weight);
    let mut max_ratio = 0.0_f64;
    let mut observed_rate = f64::NEG_INFINITY;
    let mut appeared = None;
    for s in &traj.samples {
        let g = g_moment(s, weight);
        if g0 == 0.0 {
            if g > 0.0 {
                appeared.get_or_insert(s.time());
            }
            continue;
        }
        max_ratio = max_ratio.max(g / (g0 * (rate * s.time()).exp()));
        if s.time() > 0.0 && g > 0.0 {
            observed_rate = observed_rate.max((g / g0).ln() / s.time());
        }
    }
    report.metric("initial_g_moment", g0).metric("max_ratio", max_ratio);
    if observed_rate.is_finite() {
        report.metric("observed_rate", observed_rate);
    }
    if let Some(t) = appeared {
        report.check("propagation", false, format!("M_G(0) = 0 but M_G({t}) > 0"));
    } else {
        report.check(
            "propagation",
            max_ratio <= 1.0,
            format!("max M_G(t) / (M_G(0) e^(Ct)) = {max_ratio}"),
        );
    }
    report
}

/// Mass and number monotonicity along the trajectory, plus the sign of the defect.
pub fn check_monotonicity(traj: &Trajectory) -> ExperimentReport {
    let mut report = ExperimentReport::new("monotonicity");
    let slack = traj.mass_slack();
    report.threshold("mass_slack", slack);
    let n0 = traj.first().number();
    let number_slack = 1e-9 * n0;
    report.threshold("number_slack", number_slack);
    let mut max_mass_rise = f64::NEG_INFINITY;
    let mut max_number_rise = f64::NEG_INFINITY;
    for w in traj.samples.windows(2) {
        max_mass_rise = max_mass_rise.max(w[1].mass() - w[0].mass());
        max_number_rise = max_number_rise.max(w[1].number() - w[0].number());
    }
    report
        .metric("max_mass_increase", max_mass_rise)
        .metric("max_number_increase", max_number_rise);
    report.check("mass_nonincreasing", max_mass_rise <= slack, format!("max rise {max_mass_rise:e}"));
    report.check(
        "number_nonincreasing",
        max_number_rise <= number_slack,
        format!("max rise {max_number_rise:e}"),
    );
    let drop = mass_drop(traj);
    report.metric("mass_drop", drop).metric("mass_defect", mass_defect(traj));
    report.check("defect_nonnegative", drop >= -slack, format!("M1(0) - M1(T) = {drop:e}"));
    report
}

/// If the tail fraction stays below `tail_limit` at every sample, the defect
/// must be at most `defect_limit · M1(0)`.
pub fn check_tail_controls_defect(traj: &Trajectory, tail_limit: f64, defect_limit: f64) -> ExperimentReport {
    let mut report = ExperimentReport::new("tail-controls-defect");
    report.threshold("tail_limit", tail_limit).threshold("defect_limit", defect_limit);
    let max_tail = traj
        .samples
        .iter()
        .map(tail_mass_fraction)
        .fold(0.0, f64::max);
    let m1 = traj.first().mass();
    let defect = mass_defect(traj);
    let relative = if m1 > 0.0 { defect / m1 } else { 0.0 };
    report.metric("max_tail_fraction", max_tail).metric("relative_defect", relative);
    if max_tail < tail_limit {
        report.check("defect_bounded", relative <= defect_limit, format!("defect/M1 = {relative:e}"));
    } else {
        report.note("tail fraction exceeded the limit; proxy not applicable");
    }
    report
}
