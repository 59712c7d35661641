//! Coagulation kernels γ(i, j), the built-in catalog, and admissibility checks.
//!
//! A kernel carries user-declared constants: the growth constant `A` of
//! `γ(i,j) ≤ A (i + j)`, an optional power `δ` for `γ(i,j) ≤ A (i^δ + j^δ)`
//! and an optional positive lower bound `ζ ≤ γ(i,j)`. The constants are never
//! inferred; [`CoagulationKernel::check_admissibility`] validates them on a
//! finite grid.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::ExperimentReport;

/// Relative slack allowed on the growth bounds for floating-point rules.
pub const GROWTH_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("cluster sizes are positive integers, got ({i}, {j})")]
    ZeroSize { i: usize, j: usize },
    #[error("size ({i}, {j}) is outside the tabulated range 1..={max}")]
    OutOfTable { i: usize, j: usize, max: usize },
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("kernel table {path}: line {line}: {msg}")]
    Table { path: String, line: usize, msg: String },
}

/// Symmetric rate table stored as a dense lower triangle (`i ≥ j`).
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricTable {
    max_size: usize,
    lower: Vec<f64>,
}

impl SymmetricTable {
    /// Tabulates `rule` on `1..=max_size`, reading only `i ≥ j`.
    pub fn from_fn(max_size: usize, rule: impl Fn(usize, usize) -> f64) -> Self {
        let mut lower = Vec::with_capacity(max_size * (max_size + 1) / 2);
        for i in 1..=max_size {
            for j in 1..=i {
                lower.push(rule(i, j));
            }
        }
        Self { max_size, lower }
    }

    /// Parses rows `i,j,gamma` with `i ≥ j`. An optional header line is
    /// skipped; every lower-triangle entry up to the largest `i` must appear.
    pub fn from_csv_str(text: &str, origin: &str) -> Result<Self, KernelError> {
        let err = |line: usize, msg: String| KernelError::Table {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut rows = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(err(line_no, format!("expected 3 fields, found {}", fields.len())));
            }
            let i = fields[0].parse::<usize>();
            let j = fields[1].parse::<usize>();
            let (i, j) = match (i, j) {
                (Ok(i), Ok(j)) => (i, j),
                _ if rows.is_empty() && n == 0 => continue, // header
                _ => return Err(err(line_no, "sizes must be positive integers".into())),
            };
            let gamma: f64 = fields[2]
                .parse()
                .map_err(|_| err(line_no, format!("bad rate {:?}", fields[2])))?;
            if i == 0 || j == 0 {
                return Err(err(line_no, "sizes must be positive integers".into()));
            }
            if j > i {
                return Err(err(line_no, format!("rows must satisfy i >= j, got ({i}, {j})")));
            }
            if !gamma.is_finite() {
                return Err(err(line_no, "rate must be finite".into()));
            }
            rows.push((line_no, i, j, gamma));
        }
        let max_size = rows.iter().map(|r| r.1).max().unwrap_or(0);
        if max_size == 0 {
            return Err(err(0, "table is empty".into()));
        }
        let mut lower = vec![f64::NAN; max_size * (max_size + 1) / 2];
        for &(line_no, i, j, gamma) in &rows {
            let slot = &mut lower[Self::index(i, j)];
            if !slot.is_nan() {
                return Err(err(line_no, format!("duplicate entry ({i}, {j})")));
            }
            *slot = gamma;
        }
        if let Some(pos) = lower.iter().position(|v| v.is_nan()) {
            let (i, j) = Self::position(pos);
            return Err(err(0, format!("missing entry ({i}, {j})")));
        }
        Ok(Self { max_size, lower })
    }

    pub fn load_csv(path: &Path) -> Result<Self, KernelError> {
        let text = std::fs::read_to_string(path).map_err(|e| KernelError::Table {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        Self::from_csv_str(&text, &path.display().to_string())
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    #[inline]
    fn index(i: usize, j: usize) -> usize {
        i * (i - 1) / 2 + (j - 1)
    }

    fn position(mut idx: usize) -> (usize, usize) {
        let mut i = 1;
        while idx >= i {
            idx -= i;
            i += 1;
        }
        (i, idx + 1)
    }

    /// Mirrored read; symmetry is structural.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        self.lower[Self::index(hi, lo)]
    }
}

/// How γ(i, j) is computed.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelRule {
    /// γ = c
    Constant { c: f64 },
    /// γ = a (i + j)
    Additive { a: f64 },
    /// γ = a (i^p + j^p)
    PowerSum { a: f64, exponent: f64 },
    Table(SymmetricTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoagulationKernel {
    pub name: String,
    pub rule: KernelRule,
    pub growth_constant: f64,
    pub power_delta: Option<f64>,
    pub lower_bound_zeta: Option<f64>,
}

/// Sum-separable form `γ(i,j) = offset + g(i) + g(j)` tabulated on `1..=k`.
/// `g[0]` is unused padding so `g[i]` is the value at size `i`.
#[derive(Debug, Clone)]
pub(crate) struct SeparableParts {
    pub offset: f64,
    pub g: Vec<f64>,
}

impl CoagulationKernel {
    pub fn new(name: impl Into<String>, rule: KernelRule, growth_constant: f64) -> Self {
        Self {
            name: name.into(),
            rule,
            growth_constant,
            power_delta: None,
            lower_bound_zeta: None,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.power_delta = Some(delta);
        self
    }

    pub fn with_zeta(mut self, zeta: f64) -> Self {
        self.lower_bound_zeta = Some(zeta);
        self
    }

    /// γ ≡ c, declared with A = c, δ = 0, ζ = c.
    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant({c})"), KernelRule::Constant { c }, c)
            .with_delta(0.0)
            .with_zeta(c)
    }

    /// γ = a (i + j) with A = a, δ = 1, ζ = 2a.
    pub fn additive(a: f64) -> Self {
        Self::new(format!("additive({a})"), KernelRule::Additive { a }, a)
            .with_delta(1.0)
            .with_zeta(2.0 * a)
    }

    /// γ = a (i^p + j^p), p ∈ [0, 1], with A = a, δ = p, ζ = 2a.
    pub fn power_sum(a: f64, exponent: f64) -> Self {
        Self::new(
            format!("power({a},{exponent})"),
            KernelRule::PowerSum { a, exponent },
            a,
        )
        .with_delta(exponent)
        .with_zeta(2.0 * a)
    }

    pub fn table(name: impl Into<String>, table: SymmetricTable, growth_constant: f64) -> Self {
        Self::new(name, KernelRule::Table(table), growth_constant)
    }

    /// γ(i, j) with a domain check on the sizes.
    pub fn evaluate(&self, i: usize, j: usize) -> Result<f64, KernelError> {
        if i == 0 || j == 0 {
            return Err(KernelError::ZeroSize { i, j });
        }
        if let KernelRule::Table(t) = &self.rule {
            if i > t.max_size || j > t.max_size {
                return Err(KernelError::OutOfTable { i, j, max: t.max_size });
            }
        }
        Ok(self.rate(i, j))
    }

    /// Unchecked evaluation for hot loops; callers guarantee `1 ≤ i, j ≤ max_size()`.
    #[inline]
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        match &self.rule {
            KernelRule::Constant { c } => *c,
            KernelRule::Additive { a } => a * (i as f64 + j as f64),
            KernelRule::PowerSum { a, exponent } => {
                a * ((i as f64).powf(*exponent) + (j as f64).powf(*exponent))
            }
            KernelRule::Table(t) => t.get(i, j),
        }
    }

    /// Largest size the rule is defined for, `None` when unbounded.
    pub fn max_size(&self) -> Option<usize> {
        match &self.rule {
            KernelRule::Table(t) => Some(t.max_size),
            _ => None,
        }
    }

    pub(crate) fn separable_parts(&self, k: usize) -> Option<SeparableParts> {
        let (offset, g): (f64, Vec<f64>) = match &self.rule {
            KernelRule::Constant { c } => (*c, vec![0.0; k + 1]),
            KernelRule::Additive { a } => (0.0, (0..=k).map(|i| a * i as f64).collect()),
            KernelRule::PowerSum { a, exponent } => (
                0.0,
                (0..=k).map(|i| a * (i as f64).powf(*exponent)).collect(),
            ),
            KernelRule::Table(_) => return None,
        };
        Some(SeparableParts { offset, g })
    }

    /// Exhaustively checks nonnegativity, symmetry, the growth bound and the
    /// optional δ / ζ bounds on `1 ≤ i, j ≤ max_size`, scanning row by row.
    pub fn check_admissibility(&self, max_size: usize) -> ExperimentReport {
        let mut report = ExperimentReport::new(format!("admissibility:{}", self.name));
        report
            .metric("max_size", max_size as f64)
            .threshold("growth_constant_A", self.growth_constant)
            .threshold("growth_relative_slack", GROWTH_SLACK);
        if let Some(d) = self.power_delta {
            report.threshold("power_delta", d);
        }
        if let Some(z) = self.lower_bound_zeta {
            report.threshold("lower_bound_zeta", z);
        }
        report.config_echo = self.spec_echo();

        if max_size < 2 {
            report.check("max_size", false, format!("max_size must be >= 2, got {max_size}"));
            return report;
        }
        let a = self.growth_constant;
        if !(a > 0.0 && a.is_finite()) {
            report.check("growth_constant", false, format!("A must be positive, got {a}"));
            return report;
        }
        if let Some(d) = self.power_delta {
            if !(0.0..=1.0).contains(&d) {
                report.check("power_delta", false, format!("delta must lie in [0,1], got {d}"));
                return report;
            }
        }
        if let Some(z) = self.lower_bound_zeta {
            if !(z > 0.0) {
                report.check("lower_bound_zeta", false, format!("zeta must be positive, got {z}"));
                return report;
            }
        }

        let mut first: [Option<String>; 5] = Default::default();
        let mut max_growth_ratio = 0.0_f64;
        let mut max_delta_ratio = 0.0_f64;
        let mut min_rate = f64::INFINITY;
        'scan: for i in 1..=max_size {
            for j in 1..=max_size {
                let g = match self.evaluate(i, j) {
                    Ok(g) => g,
                    Err(e) => {
                        first[0].get_or_insert_with(|| e.to_string());
                        break 'scan;
                    }
                };
                min_rate = min_rate.min(g);
                if !(g >= 0.0) {
                    first[0].get_or_insert_with(|| format!("({i},{j}): gamma={g} < 0"));
                }
                if j < i && g != self.rate(j, i) {
                    first[1].get_or_insert_with(|| {
                        format!("({i},{j}): gamma={g} != gamma({j},{i})={}", self.rate(j, i))
                    });
                }
                let bound = a * (i + j) as f64;
                max_growth_ratio = max_growth_ratio.max(g / bound);
                if g > bound * (1.0 + GROWTH_SLACK) {
                    first[2].get_or_insert_with(|| format!("({i},{j}): gamma={g} > A(i+j)={bound}"));
                }
                if let Some(d) = self.power_delta {
                    let bound = a * ((i as f64).powf(d) + (j as f64).powf(d));
                    max_delta_ratio = max_delta_ratio.max(g / bound);
                    if g > bound * (1.0 + GROWTH_SLACK) {
                        first[3].get_or_insert_with(|| {
                            format!("({i},{j}): gamma={g} > A(i^d+j^d)={bound}")
                        });
                    }
                }
                if let Some(z) = self.lower_bound_zeta {
                    if g < z {
                        first[4].get_or_insert_with(|| format!("({i},{j}): gamma={g} < zeta={z}"));
                    }
                }
            }
        }
        report.metric("max_growth_ratio", max_growth_ratio);
        report.metric("min_rate", min_rate);
        if self.power_delta.is_some() {
            report.metric("max_delta_ratio", max_delta_ratio);
        }
        let names = ["nonnegative", "symmetric", "growth", "delta_growth", "lower_bound"];
        for (idx, name) in names.iter().enumerate() {
            let applicable = match idx {
                3 => self.power_delta.is_some(),
                4 => self.lower_bound_zeta.is_some(),
                _ => true,
            };
            if applicable {
                let detail = first[idx].clone().unwrap_or_else(|| "ok".into());
                report.check(*name, first[idx].is_none(), detail);
            }
        }
        report
    }

    /// Default grid bound for admissibility checks: four times the largest truncation used.
    pub fn default_check_size(max_truncation: usize) -> usize {
        4 * max_truncation.max(1)
    }

    /// [`Self::default_check_size`], capped at the table range for tabulated kernels.
    pub fn check_size_for(&self, max_truncation: usize) -> usize {
        let size = Self::default_check_size(max_truncation);
        self.max_size().map_or(size, |m| size.min(m))
    }

    fn spec_echo(&self) -> serde_json::Value {
        serde_json::to_value(KernelSpec::from_kernel(self)).unwrap_or(serde_json::Value::Null)
    }

    /// Built-in kernels with their declared constants.
    pub fn catalog() -> Vec<CoagulationKernel> {
        vec![
            Self::constant(1.0),
            Self::additive(1.0),
            Self::power_sum(1.0, 0.5),
            Self::table(
                "table(1+1/(ij))",
                SymmetricTable::from_fn(512, |i, j| 1.0 + 1.0 / (i * j) as f64),
                1.0,
            )
            .with_delta(0.0)
            .with_zeta(1.0),
        ]
    }
}

impl fmt::Display for CoagulationKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (A={}", self.name, self.growth_constant)?;
        if let Some(d) = self.power_delta {
            write!(f, ", delta={d}")?;
        }
        if let Some(z) = self.lower_bound_zeta {
            write!(f, ", zeta={z}")?;
        }
        write!(f, ")")
    }
}

/// Kernel block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(rename = "type")]
    pub kind: KernelType,
    #[serde(default)]
    pub params: KernelParams,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub growth_constant: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelType {
    Constant,
    Additive,
    Power,
    Table,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    /// CSV of `i,j,gamma` rows, relative paths resolved against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl KernelSpec {
    /// Builds the kernel; relative table paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<CoagulationKernel, KernelError> {
        let positive = |v: Option<f64>, field: &str, default: f64| -> Result<f64, KernelError> {
            let v = v.unwrap_or(default);
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(KernelError::InvalidParameter(format!("params.{field} must be positive, got {v}")))
            }
        };
        let mut kernel = match self.kind {
            KernelType::Constant => CoagulationKernel::constant(positive(self.params.c, "c", 1.0)?),
            KernelType::Additive => CoagulationKernel::additive(positive(self.params.a, "a", 1.0)?),
            KernelType::Power => {
                let a = positive(self.params.a, "a", 1.0)?;
                let p = self.params.exponent.unwrap_or(0.5);
                if !(0.0..=1.0).contains(&p) {
                    return Err(KernelError::InvalidParameter(format!(
                        "params.exponent must lie in [0,1], got {p}"
                    )));
                }
                CoagulationKernel::power_sum(a, p)
            }
            KernelType::Table => {
                let rel = self.params.path.as_deref().ok_or_else(|| {
                    KernelError::InvalidParameter("params.path is required for table kernels".into())
                })?;
                let path = base_dir.join(rel);
                let table = SymmetricTable::load_csv(&path)?;
                let a = self.growth_constant.ok_or_else(|| {
                    KernelError::InvalidParameter("A must be declared for table kernels".into())
                })?;
                CoagulationKernel::table("table", table, a)
            }
        };
        if let Some(a) = self.growth_constant {
            kernel.growth_constant = a;
        }
        if self.delta.is_some() || self.kind == KernelType::Table {
            kernel.power_delta = self.delta;
        }
        if self.zeta.is_some() || self.kind == KernelType::Table {
            kernel.lower_bound_zeta = self.zeta;
        }
        if let Some(name) = &self.name {
            kernel.name = name.clone();
        }
        Ok(kernel)
    }

    /// Inverse of [`KernelSpec::build`] for the analytic rules; table kernels
    /// echo without a path.
    pub fn from_kernel(kernel: &CoagulationKernel) -> Self {
        let (kind, params) = match &kernel.rule {
            KernelRule::Constant { c } => (
                KernelType::Constant,
                KernelParams { c: Some(*c), ..Default::default() },
            ),
            KernelRule::Additive { a } => (
                KernelType::Additive,
                KernelParams { a: Some(*a), ..Default::default() },
            ),
            KernelRule::PowerSum { a, exponent } => (
                KernelType::Power,
                KernelParams {
                    a: Some(*a),
                    exponent: Some(*exponent),
                    ..Default::default()
                },
            ),
            KernelRule::Table(_) => (KernelType::Table, KernelParams::default()),
        };
        Self {
            name: Some(kernel.name.clone()),
            kind,
            params,
            growth_constant: Some(kernel.growth_constant),
            delta: kernel.power_delta,
            zeta: kernel.lower_bound_zeta,
        }
    }
}
