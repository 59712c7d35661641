//! Structured outcome of one verification experiment.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Interrupted,
}

/// Result of a check or experiment.
///
/// `status` is `Pass` iff every recorded [`Check`] passed. Thresholds are
/// stored next to the metrics they gate so a report is self-describing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub status: Status,
    pub metrics: BTreeMap<String, f64>,
    pub thresholds: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<PathBuf>,
    pub config_echo: serde_json::Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// One named pass/fail predicate with the observed value that decided it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl ExperimentReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: Status::Pass,
            metrics: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            checks: Vec::new(),
            artifacts: Vec::new(),
            config_echo: serde_json::Value::Null,
            notes: Vec::new(),
        }
    }

    pub fn metric(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.metrics.insert(key.into(), value);
        self
    }

    pub fn threshold(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.thresholds.insert(key.into(), value);
        self
    }

    pub fn note(&mut self, note: impl Into<String>) -> &mut Self {
        self.notes.push(note.into());
        self
    }

    /// Records a check; a failing check flips the report to `Fail`.
    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> bool {
        if !passed && self.status == Status::Pass {
            self.status = Status::Fail;
        }
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
        passed
    }

    pub fn with_config(mut self, echo: serde_json::Value) -> Self {
        self.config_echo = echo;
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn mark_interrupted(&mut self) {
        self.status = Status::Interrupted;
    }

    /// First failing check, if any.
    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    /// Folds a sub-report into this one, prefixing its keys.
    pub fn absorb(&mut self, prefix: &str, other: &ExperimentReport) {
        for (k, v) in &other.metrics {
            self.metrics.insert(format!("{prefix}.{k}"), *v);
        }
        for (k, v) in &other.thresholds {
            self.thresholds.insert(format!("{prefix}.{k}"), *v);
        }
        for c in &other.checks {
            self.check(format!("{prefix}.{}", c.name), c.passed, c.detail.clone());
        }
        if other.status == Status::Interrupted {
            self.status = Status::Interrupted;
        }
        self.artifacts.extend(other.artifacts.iter().cloned());
        self.notes.extend(other.notes.iter().map(|n| format!("{prefix}: {n}")));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failing_check_flips_status() {
        let mut r = ExperimentReport::new("x");
        assert!(r.passed());
        r.check("a", true, "");
        assert!(r.passed());
        r.check("b", false, "boom");
        assert_eq!(r.status, Status::Fail);
        assert_eq!(r.first_failure().unwrap().name, "b");
        r.check("c", true, "");
        assert_eq!(r.status, Status::Fail);
    }

    #[test]
    fn serializes_with_lowercase_status() {
        let mut r = ExperimentReport::new("x");
        r.metric("m", 1.5).threshold("m_max", 2.0);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["status"], "pass");
        assert_eq!(json["thresholds"]["m_max"], 2.0);
    }
}
