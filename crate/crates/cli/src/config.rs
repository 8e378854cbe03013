use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stagefair::dataset::SelectionSpec;
use stagefair::fairmodel::TrainOptions;
use stagefair::propensity::FitOptions;
use stagefair::synthgen::{SemiSyntheticParams, SyntheticParams};
use stagefair::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightChoice {
    #[default]
    Estimated,
    True,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropensityConfig {
    pub weights: WeightChoice,
    pub clip_floor: f64,
    pub positivity_threshold: f64,
    pub fit: FitOptions,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            weights: WeightChoice::Estimated,
            clip_floor: 0.01,
            positivity_threshold: 0.01,
            fit: FitOptions::default(),
        }
    }
}

/// Input and output locations. Relative entries resolve against `out_dir`
/// when the file does not exist relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub panel: Option<PathBuf>,
    pub population: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Fraction of rows kept for training; the rest become the test population.
    pub train_fraction: f64,
    /// Cap on the training rows simulated through the logging process.
    pub n_train: Option<usize>,
    /// Stage count when the schema has no explicit stage assignment.
    pub n_stages: usize,
    pub semisynthetic: SemiSyntheticParams,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            n_train: Some(200),
            n_stages: 2,
            semisynthetic: SemiSyntheticParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Size of the synthetic test population written by `generate`.
    pub n_test: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_test: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParetoConfig {
    pub eta: Vec<f64>,
    pub trials: usize,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for ParetoConfig {
    fn default() -> Self {
        Self {
            eta: (0..6).map(|k| linspace(0.01, 0.06, 6, k)).collect(),
            trials: 10,
            n_train: 200,
            n_test: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleCheckConfig {
    pub instances: usize,
    pub size: usize,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        Self { instances: 20, size: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n: usize,
    pub budget_secs: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n: 100,
            budget_secs: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub spec: SelectionSpec,
    pub synthetic: SyntheticParams,
    pub propensity: PropensityConfig,
    pub train: TrainOptions,
    pub data: DataConfig,
    pub ingest: IngestConfig,
    pub evaluate: EvalConfig,
    pub pareto: ParetoConfig,
    pub oracle_check: OracleCheckConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            seed: 0,
            spec: SelectionSpec::new(vec![0.7, 0.35], 0.2, 1.0),
            synthetic: SyntheticParams::default(),
            propensity: PropensityConfig::default(),
            train: TrainOptions {
                time_limit_secs: Some(300.0),
                ..TrainOptions::default()
            },
            data: DataConfig::default(),
            ingest: IngestConfig::default(),
            evaluate: EvalConfig::default(),
            pareto: ParetoConfig::default(),
            oracle_check: OracleCheckConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// `k`-th of `n` evenly spaced points on `[a, b]`, hitting both ends exactly.
pub fn linspace(a: f64, b: f64, n: usize, k: usize) -> f64 {
    if n <= 1 {
        return a;
    }
    let f = k as f64 / (n - 1) as f64;
    a * (1.0 - f) + b * f
}

/// Parses `a:b:k` into `k` evenly spaced points.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::InvalidArgument(format!("grid `{text}` must look like start:stop:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    Ok((0..n).map(|k| linspace(a, b, n, k)).collect())
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Sets `dotted.key` in a TOML table, creating intermediate tables.
fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| config_error(format!("empty key in `{key}`")))?;
    let mut table = root;
    for p in parts {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_error(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Parses an override value as a TOML literal, falling back to a string.
fn parse_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(text.to_string())),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

/// Recursively overlays `top` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Loads the config file (if any) over the defaults, applies `key=value`
/// overrides in order and validates the result.
pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut table = toml::Table::try_from(RunConfig::default()).map_err(|e| config_error(e.to_string()))?;
    let file = match path {
        Some(p) => {
            if !p.is_file() {
                return Err(config_error(format!("config file {} does not exist", p.display())));
            }
            let text = std::fs::read_to_string(p)?;
            text.parse::<toml::Table>()
                .map_err(|e| config_error(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    merge(&mut table, file);
    for (k, v) in overrides {
        set_path(&mut table, k, parse_value(v))?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| config_error(e.to_string()))?;
    cfg.spec.validate()?;
    cfg.synthetic.validate()?;
    if cfg.spec.n_stages() != 2 {
        log::warn!("spec lists {} stages; the synthetic generators are two-stage", cfg.spec.n_stages());
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_are_exact() {
        let g = parse_grid("0.01:0.06:6").unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[5], 0.06);
        assert!(parse_grid("0.1:0.2").is_err());
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = load(None, &[("spec.eta".into(), "0.3".into()), ("out_dir".into(), "x/y".into())]).unwrap();
        assert_eq!(cfg.spec.eta, 0.3);
        assert_eq!(cfg.out_dir, PathBuf::from("x/y"));
        let err = load(None, &[("spec.nonsense".into(), "1".into())]).unwrap_err();
        assert_eq!(err.class(), stagefair::ErrorClass::Config);
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, RunConfig::default());
    }
}
