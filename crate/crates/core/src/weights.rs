//! Convex weights of class G1 (nonnegative, convex, `G(0) = 0`, `G'(0) ≥ 0`,
//! concave `G'`) and G1,∞ (additionally `G(x)/x → ∞`).
//!
//! Two kinds are supported: powers `x^p` with `p ∈ [1, 2]`, and piecewise
//! weights whose derivative is piecewise linear through a list of knots. The
//! piecewise kind is what [`construct_dlvp`] returns: a de la Vallée-Poussin
//! type weight adapted to given initial data so that `Σ G(i) ξ_i` stays finite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::ExperimentReport;
use crate::sum::kahan_sum;

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("weights are defined on [0, ∞), got x = {0}")]
    NegativeArgument(f64),
    #[error("power exponent must lie in [1, 2], got {0}")]
    ExponentOutOfRange(f64),
    #[error("invalid piecewise weight: {0}")]
    InvalidKnots(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightClass {
    G1,
    G1Infinity,
}

/// Knot representation of a piecewise weight: `G'` is linear between
/// consecutive `(knots[m], derivative_values[m])` and continues with the last
/// slope beyond the final knot. `knots[0]` must be 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseDerivative {
    pub knots: Vec<f64>,
    pub derivative_values: Vec<f64>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl PiecewiseDerivative {
    pub fn new(knots: Vec<f64>, derivative_values: Vec<f64>) -> Result<Self, WeightError> {
        let bad = |m: &str| Err(WeightError::InvalidKnots(m.to_string()));
        if knots.len() < 2 || knots.len() != derivative_values.len() {
            return bad("need at least two knots and one derivative value per knot");
        }
        if knots[0] != 0.0 {
            return bad("first knot must be 0");
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("knots must be strictly ascending");
        }
        if derivative_values[0] < 0.0 || derivative_values.windows(2).any(|w| w[1] < w[0]) {
            return bad("derivative values must be nonnegative and nondecreasing");
        }
        let mut cumulative = Vec::with_capacity(knots.len());
        let mut g = 0.0;
        cumulative.push(0.0);
        for m in 1..knots.len() {
            g += 0.5 * (knots[m] - knots[m - 1]) * (derivative_values[m] + derivative_values[m - 1]);
            cumulative.push(g);
        }
        Ok(Self {
            knots,
            derivative_values,
            cumulative,
        })
    }

    fn segment(&self, x: f64) -> usize {
        let last = self.knots.len() - 2;
        self.knots.partition_point(|&k| k <= x).saturating_sub(1).min(last)
    }

    fn slope(&self, m: usize) -> f64 {
        (self.derivative_values[m + 1] - self.derivative_values[m]) / (self.knots[m + 1] - self.knots[m])
    }

    fn value(&self, x: f64) -> f64 {
        let m = self.segment(x);
        let dx = x - self.knots[m];
        self.cumulative[m] + dx * (self.derivative_values[m] + 0.5 * self.slope(m) * dx)
    }

    fn derivative(&self, x: f64) -> f64 {
        let m = self.segment(x);
        self.derivative_values[m] + self.slope(m) * (x - self.knots[m])
    }

    /// Slopes of `G'` on each segment.
    pub fn segment_slopes(&self) -> Vec<f64> {
        (0..self.knots.len() - 1).map(|m| self.slope(m)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightKind {
    Power { p: f64 },
    Piecewise(PiecewiseDerivative),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexWeight {
    pub name: String,
    pub kind: WeightKind,
    pub class: WeightClass,
    /// Set when the constructor had to fall back to a degenerate weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl ConvexWeight {
    /// `x^p` with `p ∈ [1, 2]`; class G1,∞ when `p > 1`.
    pub fn power(p: f64) -> Result<Self, WeightError> {
        if !(1.0..=2.0).contains(&p) {
            return Err(WeightError::ExponentOutOfRange(p));
        }
        Ok(Self {
            name: format!("x^{p}"),
            kind: WeightKind::Power { p },
            class: if p > 1.0 { WeightClass::G1Infinity } else { WeightClass::G1 },
            warning: None,
        })
    }

    pub fn identity() -> Self {
        Self::power(1.0).expect("p = 1 is in range")
    }

    pub fn piecewise(name: impl Into<String>, derivative: PiecewiseDerivative, class: WeightClass) -> Self {
        Self {
            name: name.into(),
            kind: WeightKind::Piecewise(derivative),
            class,
            warning: None,
        }
    }

    /// Rebuilds a piecewise weight from its serialized knot block.
    pub fn from_knot_json(name: impl Into<String>, json: &str, class: WeightClass) -> Result<Self, WeightError> {
        let raw: PiecewiseDerivative =
            serde_json::from_str(json).map_err(|e| WeightError::InvalidKnots(e.to_string()))?;
        let d = PiecewiseDerivative::new(raw.knots, raw.derivative_values)?;
        Ok(Self::piecewise(name, d, class))
    }

    /// `{knots: [...], derivative_values: [...]}` for piecewise weights.
    pub fn knot_json(&self) -> Option<serde_json::Value> {
        match &self.kind {
            WeightKind::Piecewise(d) => Some(serde_json::json!({
                "knots": d.knots,
                "derivative_values": d.derivative_values,
            })),
            WeightKind::Power { .. } => None,
        }
    }

    /// Built-in powers x, x^1.5, x².
    pub fn catalog() -> Vec<ConvexWeight> {
        [1.0, 1.5, 2.0].iter().map(|&p| Self::power(p).expect("in range")).collect()
    }

    pub fn eval(&self, x: f64) -> Result<f64, WeightError> {
        if !(x >= 0.0) {
            return Err(WeightError::NegativeArgument(x));
        }
        Ok(self.value(x))
    }

    pub fn eval_derivative(&self, x: f64) -> Result<f64, WeightError> {
        if !(x >= 0.0) {
            return Err(WeightError::NegativeArgument(x));
        }
        Ok(self.derivative(x))
    }

    /// Unchecked `G(x)` for `x ≥ 0`.
    pub(crate) fn value(&self, x: f64) -> f64 {
        match &self.kind {
            WeightKind::Power { p } if *p == 1.0 => x,
            WeightKind::Power { p } if *p == 2.0 => x * x,
            WeightKind::Power { p } => x.powf(*p),
            WeightKind::Piecewise(d) => d.value(x),
        }
    }

    pub(crate) fn derivative(&self, x: f64) -> f64 {
        match &self.kind {
            WeightKind::Power { p } if *p == 1.0 => 1.0,
            WeightKind::Power { p } => p * x.powf(p - 1.0),
            WeightKind::Piecewise(d) => d.derivative(x),
        }
    }

    /// Samples the G1 conditions on a uniform grid of `n + 1` points in
    /// `[0, x_max]`: `G(0) = 0`, `G'(0) ≥ 0`, midpoint convexity of `G`,
    /// midpoint concavity of `G'`, monotone `G'`; and for G1,∞ piecewise
    /// weights, `G(n_m)/n_m` strictly increasing along the knots and above 10
    /// beyond some knot.
    pub fn check_invariants(&self, x_max: f64, n: usize) -> ExperimentReport {
        let mut report = ExperimentReport::new(format!("weight-invariants:{}", self.name));
        report.metric("x_max", x_max).metric("grid_points", (n + 1) as f64);
        report.threshold("relative_tolerance", 1e-12);
        let xs: Vec<f64> = (0..=n).map(|a| x_max * a as f64 / n as f64).collect();
        let g: Vec<f64> = xs.iter().map(|&x| self.value(x)).collect();
        let dg: Vec<f64> = xs.iter().map(|&x| self.derivative(x)).collect();
        report.check("g_at_zero", self.value(0.0) == 0.0, format!("G(0) = {}", self.value(0.0)));
        report.check("derivative_at_zero", dg[0] >= 0.0, format!("G'(0) = {}", dg[0]));
        report.check(
            "nonnegative",
            g.iter().all(|v| *v >= 0.0),
            "G >= 0 on grid".to_string(),
        );
        let monotone = dg.windows(2).position(|w| w[1] < w[0] - 1e-12 * w[0].abs());
        report.check(
            "derivative_nondecreasing",
            monotone.is_none(),
            monotone.map_or("ok".into(), |a| format!("G' decreases after x = {}", xs[a])),
        );
        let mut convex_fail = None;
        let mut concave_fail = None;
        for a in 0..=n {
            for b in (a + 2..=n).step_by(2) {
                let mid = (a + b) / 2;
                let (gx, gy, gm) = (g[a], g[b], g[mid]);
                if gm > 0.5 * (gx + gy) + 1e-12 * (gx + gy).abs() {
                    convex_fail.get_or_insert((xs[a], xs[b]));
                }
                let (dx, dy, dm) = (dg[a], dg[b], dg[mid]);
                if dm < 0.5 * (dx + dy) - 1e-12 * (dx + dy).abs() {
                    concave_fail.get_or_insert((xs[a], xs[b]));
                }
            }
        }
        report.check(
            "convex",
            convex_fail.is_none(),
            convex_fail.map_or("ok".into(), |(x, y)| format!("midpoint convexity fails on ({x}, {y})")),
        );
        report.check(
            "derivative_concave",
            concave_fail.is_none(),
            concave_fail.map_or("ok".into(), |(x, y)| format!("G' midpoint concavity fails on ({x}, {y})")),
        );
        if let (WeightClass::G1Infinity, WeightKind::Piecewise(d)) = (self.class, &self.kind) {
            let ratios: Vec<f64> = d.knots[1..].iter().map(|&x| self.value(x) / x).collect();
            let increasing = ratios.windows(2).all(|w| w[1] > w[0]);
            let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
            report.metric("max_knot_ratio", max_ratio);
            report.check("knot_ratio_increasing", increasing, "G(n_m)/n_m strictly increasing");
            report.check("superlinear", max_ratio > 10.0, format!("max G(n_m)/n_m = {max_ratio}"));
        }
        report
    }
}

/// Exhaustive check of `(i+j)(G(i+j) − G(i) − G(j)) ≤ 2(i G(j) + j G(i))` for
/// `1 ≤ i, j ≤ max_size`. Reports the largest ratio LHS/RHS and the number of
/// exact equalities.
pub fn check_inequality_15(weight: &ConvexWeight, max_size: usize) -> ExperimentReport {
    let mut report = ExperimentReport::new(format!("inequality:{}", weight.name));
    report.threshold("relative_tolerance", 1e-12);
    report.metric("max_size", max_size as f64);
    if max_size < 2 {
        report.check("max_size", false, format!("max_size must be >= 2, got {max_size}"));
        return report;
    }
    let g: Vec<f64> = (0..=2 * max_size).map(|n| weight.value(n as f64)).collect();
    let mut violations = 0usize;
    let mut first = None;
    let mut max_ratio = f64::NEG_INFINITY;
    let mut min_slack = f64::INFINITY;
    let mut equalities = 0usize;
    for i in 1..=max_size {
        for j in 1..=max_size {
            let (fi, fj) = (i as f64, j as f64);
            let lhs = (fi + fj) * (g[i + j] - g[i] - g[j]);
            let rhs = 2.0 * (fi * g[j] + fj * g[i]);
            if lhs == rhs {
                equalities += 1;
            }
            if rhs > 0.0 {
                max_ratio = max_ratio.max(lhs / rhs);
            }
            min_slack = min_slack.min(rhs - lhs);
            if lhs > rhs + 1e-12 * rhs.abs() {
                violations += 1;
                first.get_or_insert((i, j, lhs, rhs));
            }
        }
    }
    report
        .metric("violations", violations as f64)
        .metric("max_ratio", max_ratio)
        .metric("min_slack", min_slack)
        .metric("equalities", equalities as f64);
    report.check(
        "inequality",
        violations == 0,
        first.map_or("ok".into(), |(i, j, l, r)| format!("({i},{j}): {l} > {r}")),
    );
    report
}

/// Tail masses `T(n) = Σ_{i≥n} i ξ_i` for `n = 1..=N+1` (index `n`, `T[0]` unused).
fn tail_masses(initial: &[f64]) -> Vec<f64> {
    let n = initial.len();
    let mut tails = vec![0.0; n + 2];
    let mut acc = 0.0;
    for i in (1..=n).rev() {
        acc += i as f64 * initial[i - 1];
        tails[i] = acc;
    }
    tails[0] = acc;
    tails
}

/// Upper bound `M (1 + Σ_{m≥1} (m+1) min(1, b 2^{−m}))` on `Σ G(i) ξ_i` for the
/// weight returned by [`construct_dlvp`], where `M = Σ i ξ_i` and `b` is the
/// tail budget. For `b = 1` this is `M Σ_{m≥0} (m+1) 2^{−m} = 4M`.
pub fn dlvp_moment_bound(initial: &[f64], tail_budget: f64) -> f64 {
    let mass = kahan_sum(initial.iter().enumerate().map(|(n, x)| (n + 1) as f64 * x));
    let mut factor = 1.0;
    let mut m = 1;
    loop {
        let term = (m + 1) as f64 * (tail_budget * 0.5f64.powi(m)).min(1.0);
        factor += term;
        if term < 1e-18 * factor {
            break;
        }
        m += 1;
    }
    mass * factor
}

/// Builds a G1,∞ weight adapted to `initial` (ξ_1, ξ_2, …).
///
/// Knots `0 = n_0 < n_1 < …` are integers with tail mass
/// `Σ_{i≥n_m} i ξ_i ≤ tail_budget · M1 · 2^{−m}` and nondecreasing gaps;
/// `G'(n_m) = m`, linear in between, so `G' ≤ m + 1` on `[n_m, n_{m+1})` and
/// `G'` is concave. Knots continue past the support with a constant gap
/// until `G(n_m)/n_m > 10`.
///
/// Zero-mass data yields the identity weight with a warning.
pub fn construct_dlvp(initial: &[f64], tail_budget: f64) -> Result<ConvexWeight, WeightError> {
    if !(tail_budget > 0.0 && tail_budget.is_finite()) {
        return Err(WeightError::InvalidKnots(format!("tail_budget must be positive, got {tail_budget}")));
    }
    if initial.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(WeightError::InvalidKnots("initial data must be finite and nonnegative".into()));
    }
    let tails = tail_masses(initial);
    let mass = tails[0];
    if mass == 0.0 {
        let mut w = ConvexWeight::identity();
        w.name = "dlvp(identity)".into();
        w.warning = Some("initial data has zero mass; no superlinear weight is needed".into());
        return Ok(w);
    }
    let support = initial.iter().rposition(|x| *x > 0.0).map_or(0, |p| p + 1);
    let tail = |n: usize| if n <= support { tails[n] } else { 0.0 };

    let mut knots = vec![0usize];
    let mut values = vec![0.0];
    let mut gap = 0usize;
    let mut g_at_knot = 0.0;
    for m in 1usize.. {
        let prev = *knots.last().expect("nonempty");
        let threshold = tail_budget * mass * 0.5f64.powi(m.min(2000) as i32);
        // smallest n >= prev + max(gap, 1) with T(n) <= threshold
        let mut n = prev + gap.max(1);
        while n <= support && tail(n) > threshold {
            n += 1;
        }
        gap = n - prev;
        g_at_knot += 0.5 * gap as f64 * ((m - 1) as f64 + m as f64);
        knots.push(n);
        values.push(m as f64);
        if n > support && g_at_knot / n as f64 > 10.0 {
            break;
        }
    }
    let derivative = PiecewiseDerivative::new(knots.into_iter().map(|n| n as f64).collect(), values)?;
    Ok(ConvexWeight::piecewise(
        format!("dlvp(b={tail_budget})"),
        derivative,
        WeightClass::G1Infinity,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_eval_examples() {
        let sq = ConvexWeight::power(2.0).unwrap();
        assert_eq!(sq.eval(3.0), Ok(9.0));
        let id = ConvexWeight::identity();
        for x in [0.0, 0.3, 7.0, 1e6] {
            assert_eq!(id.eval(x), Ok(x));
        }
        for w in ConvexWeight::catalog() {
            assert_eq!(w.eval(0.0), Ok(0.0));
        }
        assert_eq!(sq.eval(-1.0), Err(WeightError::NegativeArgument(-1.0)));
        assert!(ConvexWeight::power(2.5).is_err());
    }

    #[test]
    fn inequality_examples() {
        let id = ConvexWeight::identity();
        let r = check_inequality_15(&id, 30);
        assert!(r.passed());
        assert_eq!(r.metrics["max_ratio"], 0.0);
        let sq = ConvexWeight::power(2.0).unwrap();
        let r = check_inequality_15(&sq, 30);
        assert!(r.passed());
        assert_eq!(r.metrics["max_ratio"], 1.0);
        // x² saturates: (i+j)·2ij = 2(i j² + j i²)
        assert_eq!(r.metrics["equalities"], 900.0);
    }

    #[test]
    fn superquadratic_power_violates_the_inequality() {
        let cube = ConvexWeight {
            name: "x^3".into(),
            kind: WeightKind::Power { p: 3.0 },
            class: WeightClass::G1Infinity,
            warning: None,
        };
        let r = check_inequality_15(&cube, 5);
        assert!(!r.passed());
    }

    #[test]
    fn piecewise_matches_closed_form() {
        // G' = x on [0,1], then 1 + (x−1)/2 up to 3
        let d = PiecewiseDerivative::new(vec![0.0, 1.0, 3.0], vec![0.0, 1.0, 2.0]).unwrap();
        let w = ConvexWeight::piecewise("pw", d, WeightClass::G1);
        assert_eq!(w.eval(1.0), Ok(0.5));
        assert_eq!(w.eval(3.0), Ok(0.5 + 3.0));
        assert_eq!(w.eval_derivative(2.0), Ok(1.5));
        // extrapolates with the last slope
        assert_eq!(w.eval_derivative(5.0), Ok(3.0));
        assert_eq!(w.eval(5.0), Ok(3.5 + 2.0 * 2.0 + 0.5 * 0.5 * 4.0));
    }

    #[test]
    fn invalid_knots_are_rejected() {
        assert!(PiecewiseDerivative::new(vec![1.0, 2.0], vec![0.0, 1.0]).is_err());
        assert!(PiecewiseDerivative::new(vec![0.0, 2.0, 1.0], vec![0.0, 1.0, 2.0]).is_err());
        assert!(PiecewiseDerivative::new(vec![0.0, 1.0], vec![1.0, 0.5]).is_err());
    }

    #[test]
    fn zero_data_gives_identity_with_warning() {
        let w = construct_dlvp(&[0.0; 10], 1.0).unwrap();
        assert_eq!(w.class, WeightClass::G1);
        assert!(w.warning.is_some());
        assert_eq!(w.eval(4.0), Ok(4.0));
    }

    #[test]
    fn finite_support_construction() {
        let data = [0.5, 0.2, 0.0, 0.1];
        let w = construct_dlvp(&data, 1.0).unwrap();
        assert_eq!(w.class, WeightClass::G1Infinity);
        let r = w.check_invariants(50.0, 200);
        assert!(r.passed(), "{:?}", r.first_failure());
        let sum: f64 = data.iter().enumerate().map(|(n, x)| w.value((n + 1) as f64) * x).sum();
        assert!(sum.is_finite());
        assert!(sum <= dlvp_moment_bound(&data, 1.0));
    }

    #[test]
    fn knot_gaps_are_nondecreasing_and_json_round_trips() {
        let data: Vec<f64> = (1..=200).map(|i| 1.0 / (i as f64).powi(4)).collect();
        let w = construct_dlvp(&data, 1.0).unwrap();
        let WeightKind::Piecewise(d) = &w.kind else { panic!() };
        let gaps: Vec<f64> = d.knots.windows(2).map(|p| p[1] - p[0]).collect();
        assert!(gaps.windows(2).all(|g| g[1] >= g[0]));
        let slopes = d.segment_slopes();
        assert!(slopes.windows(2).all(|s| s[1] <= s[0]));
        let json = w.knot_json().unwrap().to_string();
        let back = ConvexWeight::from_knot_json(w.name.clone(), &json, w.class).unwrap();
        assert_eq!(back, w);
    }
}
