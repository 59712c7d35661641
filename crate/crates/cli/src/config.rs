//! Run configuration: parsing, validation and path resolution.

use std::fs;
use std::path::{Path, PathBuf};

use coagkin::experiments::ExperimentSpec;
use coagkin::kernel::KernelSpec;
use coagkin::{CoagulationKernel, InitialRule, SizeDistribution, SolverConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("{field}: {msg}")]
    Field { field: String, msg: String },
}

fn field(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// `monomer`, `geometric` or `file`.
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "one")]
    pub mass_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelSpec,
    pub initial: InitialSpec,
    pub truncation_k: usize,
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<serde_json::Value>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

/// A parsed configuration with every relative path made absolute against the
/// config file's directory.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub kernel: CoagulationKernel,
    pub rule: InitialRule,
}

impl Loaded {
    pub fn initial(&self) -> Result<SizeDistribution, ConfigError> {
        self.rule
            .build(self.config.truncation_k, self.config.initial.mass_scale)
            .map_err(|e| field("initial", e.to_string()))
    }

    pub fn output_dir(&self) -> &Path {
        &self.config.output_dir
    }

    /// The experiment block, with unknown names reported against the valid list.
    pub fn experiment(&self) -> Result<ExperimentSpec, ConfigError> {
        let block = self
            .config
            .experiment
            .as_ref()
            .ok_or_else(|| field("experiment", "verify needs an experiment block"))?;
        let name = block
            .get("name")
            .and_then(|n| n.as_str())
            .ok_or_else(|| field("experiment.name", "missing"))?;
        if !ExperimentSpec::NAMES.contains(&name) {
            return Err(field(
                "experiment.name",
                format!("unknown experiment '{name}'; valid names: {}", ExperimentSpec::NAMES.join(", ")),
            ));
        }
        let spec: ExperimentSpec =
            serde_json::from_value(block.clone()).map_err(|e| field("experiment", e.to_string()))?;
        validate_experiment(&spec, self.config.truncation_k)?;
        Ok(spec)
    }
}

fn validate_experiment(spec: &ExperimentSpec, k: usize) -> Result<(), ConfigError> {
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(field(name, format!("must be positive, got {v}")))
        }
    };
    match spec {
        ExperimentSpec::Truncation(p) => {
            if p.k_list.len() < 3 {
                return Err(field(
                    "experiment.k_list",
                    format!("needs at least 3 entries, got {:?}", p.k_list),
                ));
            }
            if p.k_list.iter().any(|&k| k < 2) || p.k_list.windows(2).any(|w| w[1] <= w[0]) {
                return Err(field(
                    "experiment.k_list",
                    format!("entries must be ascending and >= 2, got {:?}", p.k_list),
                ));
            }
            positive("experiment.t_end", p.t_end)
        }
        ExperimentSpec::Dependence(p) => {
            positive("experiment.t_end", p.t_end)?;
            positive("experiment.epsilon", p.epsilon)
        }
        ExperimentSpec::Decay(p) => positive("experiment.t_end", p.t_end),
        ExperimentSpec::Identity(p) => {
            positive("experiment.t_end", p.t_end)?;
            if let Some(q) = p.q_list.iter().find(|&&q| q == 0 || q > k) {
                return Err(field("experiment.q_list", format!("q = {q} must lie in 1..={k}")));
            }
            if p.samples < 2 {
                return Err(field("experiment.samples", "needs at least 2 samples"));
            }
            Ok(())
        }
        ExperimentSpec::Admissibility { max_size } => match max_size {
            Some(m) if *m < 1 => Err(field("experiment.max_size", "must be >= 1")),
            _ => Ok(()),
        },
        ExperimentSpec::Weights(p) => {
            positive("experiment.t_end", p.t_end)?;
            positive("experiment.tail_budget", p.tail_budget)
        }
    }
}

/// Reads initial values from a file: one number per line, or `i,value` rows
/// (the last column is used). Blank lines, `#` comments and a non-numeric
/// header line are skipped.
pub fn read_initial_file(path: &Path) -> Result<Vec<f64>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut values = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let last = line.rsplit([',', ' ', '\t']).next().unwrap_or(line).trim();
        match last.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if values.is_empty() && n == 0 => continue,
            Err(_) => {
                return Err(field(
                    "initial.path",
                    format!("{}: line {}: '{last}' is not a number", path.display(), n + 1),
                ))
            }
        }
    }
    Ok(values)
}

pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config: RunConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let base = base.canonicalize().unwrap_or(base);
    resolve(&mut config, &base)?;
    from_config(config)
}

fn resolve(config: &mut RunConfig, base: &Path) -> Result<(), ConfigError> {
    if let Some(p) = config.kernel.params.path.as_mut() {
        let full = base.join(&*p);
        if !full.is_file() {
            return Err(field("kernel.params.path", format!("{} does not exist", full.display())));
        }
        *p = full.to_string_lossy().into_owned();
    }
    if let Some(p) = config.initial.path.as_mut() {
        let full = base.join(&*p);
        if !full.is_file() {
            return Err(field("initial.path", format!("{} does not exist", full.display())));
        }
        *p = full;
    }
    config.output_dir = base.join(&config.output_dir);
    Ok(())
}

/// Validates an already-resolved configuration and builds kernel and initial rule.
pub fn from_config(config: RunConfig) -> Result<Loaded, ConfigError> {
    if config.truncation_k < 2 {
        return Err(field("truncation_k", format!("must be >= 2, got {}", config.truncation_k)));
    }
    let scale = config.initial.mass_scale;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(field("initial.mass_scale", format!("must be positive, got {scale}")));
    }
    config.solver.validate().map_err(|e| field("solver", e.to_string()))?;
    let rule = match config.initial.kind.as_str() {
        "monomer" => InitialRule::Monomer,
        "geometric" => {
            let r = config
                .initial
                .ratio
                .ok_or_else(|| field("initial.ratio", "required for geometric data"))?;
            if !(r > 0.0 && r < 1.0) {
                return Err(field("initial.ratio", format!("must lie in (0, 1), got {r}")));
            }
            InitialRule::Geometric { ratio: r }
        }
        "file" => {
            let p = config
                .initial
                .path
                .as_ref()
                .ok_or_else(|| field("initial.path", "required for file data"))?;
            InitialRule::Explicit {
                values: read_initial_file(p)?,
            }
        }
        other => {
            return Err(field(
                "initial.type",
                format!("unknown type '{other}'; expected monomer, geometric or file"),
            ))
        }
    };
    let kernel = config
        .kernel
        .build(Path::new("/"))
        .map_err(|e| field("kernel", e.to_string()))?;
    if let Some(max) = kernel.max_size() {
        if max < config.truncation_k {
            return Err(field(
                "kernel.params.path",
                format!("table covers sizes up to {max} but truncation_k = {}", config.truncation_k),
            ));
        }
    }
    let loaded = Loaded { config, kernel, rule };
    loaded.initial()?;
    Ok(loaded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> serde_json::Value {
        serde_json::json!({
            "kernel": {"type": "constant", "params": {"c": 1.0}},
            "initial": {"type": "monomer"},
            "truncation_k": 8,
            "solver": {"t_end": 1.0},
            "output_dir": "out"
        })
    }

    fn parse(v: serde_json::Value) -> Result<Loaded, ConfigError> {
        let mut c: RunConfig = serde_json::from_value(v).unwrap();
        c.output_dir = PathBuf::from("/tmp/x");
        from_config(c)
    }

    #[test]
    fn minimal_config_loads() {
        let l = parse(base()).unwrap();
        assert_eq!(l.initial().unwrap().values()[0], 1.0);
        assert_eq!(l.config.seed, 0);
    }

    #[test]
    fn truncation_one_names_the_field() {
        let mut v = base();
        v["truncation_k"] = 1.into();
        let e = parse(v).unwrap_err().to_string();
        assert!(e.starts_with("truncation_k"), "{e}");
    }

    #[test]
    fn geometric_needs_a_ratio() {
        let mut v = base();
        v["initial"] = serde_json::json!({"type": "geometric"});
        assert!(parse(v).unwrap_err().to_string().contains("initial.ratio"));
    }

    #[test]
    fn unknown_experiment_lists_valid_names() {
        let mut v = base();
        v["experiment"] = serde_json::json!({"name": "bogus"});
        let e = parse(v).unwrap().experiment().unwrap_err().to_string();
        assert!(e.contains("truncation, dependence, decay, identity, admissibility, weights"), "{e}");
    }

    #[test]
    fn short_k_list_is_a_config_error() {
        let mut v = base();
        v["experiment"] = serde_json::json!({"name": "truncation", "k_list": [4]});
        let e = parse(v).unwrap().experiment().unwrap_err().to_string();
        assert!(e.contains("at least 3"), "{e}");
    }

    #[test]
    fn initial_file_accepts_columns_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("init.csv");
        fs::write(&p, "i,xi\n1,0.5\n2,0.25\n# note\n\n3,0.125\n").unwrap();
        assert_eq!(read_initial_file(&p).unwrap(), vec![0.5, 0.25, 0.125]);
        fs::write(&p, "0.5\nabc\n").unwrap();
        assert!(read_initial_file(&p).is_err());
    }
}
