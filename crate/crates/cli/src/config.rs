//! Experiment configuration: a TOML file, overridden by `KDEY_*` environment
//! variables, overridden by command-line flags.

use std::path::{Path, PathBuf};

use kdey_core::protocol::Loss;
use kdey_core::{ClassWeighting, Hyperparameters, MethodKind, MethodSettings};
use serde::{Deserialize, Serialize};

use crate::dataset::SyntheticSpec;
use crate::error::{io_err, CliError, Result};

/// Prefix of environment overrides. Nested keys are joined with `__`, so
/// `KDEY_PROTOCOL__TEST_BAGS=50` sets `protocol.test_bags`.
pub const ENV_PREFIX: &str = "KDEY_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: Loss,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Worker threads; more than one enables parallel bag evaluation.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    pub data: DataSource,
    #[serde(default)]
    pub protocol: ProtocolSection,
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub settings: MethodSettings,
    /// Widen the bandwidth grid by 50% when its largest value wins.
    #[serde(default)]
    pub extend_bandwidth: bool,
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    /// Share of the training data held out for model selection.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

fn default_label_column() -> String {
    "label".into()
}

fn default_validation_fraction() -> f64 {
    0.4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub validation_bags: usize,
    pub validation_bag_size: usize,
    pub test_bags: usize,
    pub test_bag_size: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            validation_bags: 100,
            validation_bag_size: 250,
            test_bags: 200,
            test_bag_size: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    pub name: MethodKind,
    #[serde(default)]
    pub grid: GridSpec,
}

/// Values explored for each hyperparameter. Bandwidth and bins only apply
/// to methods that use them; an empty list means the library default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub c: Vec<f64>,
    pub class_weight: Vec<ClassWeighting>,
    pub bandwidth: Vec<f64>,
    pub bins: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            c: vec![1.0],
            class_weight: vec![ClassWeighting::None],
            bandwidth: Vec::new(),
            bins: Vec::new(),
        }
    }
}

impl GridSpec {
    /// Cartesian product in (C, weighting, bandwidth, bins) order.
    pub fn points(&self, kind: MethodKind) -> Vec<Hyperparameters> {
        let or_default = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
        let bandwidths: Vec<Option<f64>> = if kind.uses_bandwidth() {
            or_default(&self.bandwidth, Hyperparameters::DEFAULT_BANDWIDTH)
                .into_iter()
                .map(Some)
                .collect()
        } else {
            vec![None]
        };
        let bins: Vec<Option<usize>> = if kind.uses_bins() {
            if self.bins.is_empty() {
                vec![Some(Hyperparameters::DEFAULT_BINS)]
            } else {
                self.bins.iter().copied().map(Some).collect()
            }
        } else {
            vec![None]
        };
        let cs = or_default(&self.c, 1.0);
        let weights = if self.class_weight.is_empty() {
            vec![ClassWeighting::None]
        } else {
            self.class_weight.clone()
        };
        let mut out = Vec::new();
        for &c in &cs {
            for &class_weight in &weights {
                for &bandwidth in &bandwidths {
                    for &b in &bins {
                        out.push(Hyperparameters {
                            c,
                            class_weight,
                            bandwidth,
                            bins: b,
                        });
                    }
                }
            }
        }
        out
    }
}

impl ExperimentConfig {
    /// Parses TOML text and applies environment overrides.
    pub fn parse(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        apply_env_overrides(&mut table, env)?;
        let config: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        Ok(config)
    }

    /// Reads a config file, resolving relative data paths against its
    /// directory, with overrides from the process environment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut config = Self::parse(&text, std::env::vars())?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.data.train, &mut config.data.test].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.methods.is_empty() {
            return bad("the method list is empty");
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1");
        }
        let p = &self.protocol;
        if p.validation_bags == 0 || p.validation_bag_size == 0 || p.test_bags == 0 || p.test_bag_size == 0 {
            return bad("bag counts and sizes must be at least 1");
        }
        let f = self.data.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            return bad("validation_fraction must be in (0, 1)");
        }
        match (&self.data.synthetic, &self.data.train, &self.data.test) {
            (Some(spec), None, None) => spec.validate()?,
            (None, Some(_), Some(_)) => {}
            _ => return bad("data needs either a synthetic spec or both train and test files"),
        }
        if self.settings.folds < 2 {
            return bad("settings.folds must be at least 2");
        }
        if self.settings.mc_trials == 0 {
            return bad("settings.mc_trials must be at least 1");
        }
        for m in &self.methods {
            let g = &m.grid;
            if g.c.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                return bad("grid values of c must be positive");
            }
            if g.bandwidth.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
                return bad("grid values of bandwidth must be positive");
            }
            if g.bins.iter().any(|b| *b < 2) {
                return bad("grid values of bins must be at least 2");
            }
        }
        Ok(())
    }
}

fn env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `KDEY_A__B=value` as `a.b = value`. Values are read as TOML
/// literals when they parse, otherwise as strings.
pub fn apply_env_overrides(table: &mut toml::Table, env: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut vars: Vec<(String, String)> = env
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(CliError::Config(format!("malformed override `{key}`")));
        }
        let mut node = &mut *table;
        for part in &path[..path.len() - 1] {
            let entry = node
                .entry(part.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("`{key}` overrides a non-table value")))?;
        }
        node.insert(path[path.len() - 1].clone(), env_value(&raw));
    }
    Ok(())
}
