//! Flat `key = value` run configuration.
//!
//! Typed parsing with exhaustive unknown-key rejection: a config that names a
//! key this tool does not understand fails immediately rather than silently
//! running with defaults. Lines starting with `#` and blank lines are
//! ignored.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use afm_core::ModelConfig;
use anyhow::{bail, Context, Result};

/// Model parameters plus optional grid, replication, output, and metric
/// selection overrides for the `rates` command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub n_values: Option<Vec<usize>>,
    pub t_values: Option<Vec<usize>>,
    pub t_fixed: Option<usize>,
    pub replications: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub demean: bool,
    pub metrics: Option<Vec<String>>,
}

const MODEL_KEYS: &[&str] = &[
    "r",
    "n_max",
    "loading_half_widths",
    "idio_rho",
    "idio_sigma",
    "seed",
];
const OPTIONAL_KEYS: &[&str] = &[
    "n_values",
    "t_values",
    "t_fixed",
    "replications",
    "out_dir",
    "demean",
    "metrics",
];

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    parse_run_config(&text).with_context(|| format!("in config file {}", path.display()))
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut entries: HashMap<String, String> = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected 'key = value', got '{line}'", lineno + 1);
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !MODEL_KEYS.contains(&key.as_str()) && !OPTIONAL_KEYS.contains(&key.as_str()) {
            bail!(
                "line {}: unknown key '{key}' (valid keys: {}, {})",
                lineno + 1,
                MODEL_KEYS.join(", "),
                OPTIONAL_KEYS.join(", ")
            );
        }
        if entries.insert(key.clone(), value).is_some() {
            bail!("line {}: duplicate key '{key}'", lineno + 1);
        }
    }

    let require = |key: &str| -> Result<&String> {
        entries
            .get(key)
            .with_context(|| format!("missing required key '{key}'"))
    };
    let parse_usize = |key: &str, v: &str| -> Result<usize> {
        v.parse()
            .with_context(|| format!("key '{key}': invalid integer '{v}'"))
    };
    let parse_f64 = |key: &str, v: &str| -> Result<f64> {
        v.parse()
            .with_context(|| format!("key '{key}': invalid number '{v}'"))
    };
    let parse_usize_list = |key: &str, v: &str| -> Result<Vec<usize>> {
        v.split(',')
            .map(|s| parse_usize(key, s.trim()))
            .collect::<Result<Vec<_>>>()
    };

    let model = ModelConfig {
        r: parse_usize("r", require("r")?)?,
        n_max: parse_usize("n_max", require("n_max")?)?,
        loading_half_widths: require("loading_half_widths")?
            .split(',')
            .map(|s| parse_f64("loading_half_widths", s.trim()))
            .collect::<Result<Vec<_>>>()?,
        idio_rho: parse_f64("idio_rho", require("idio_rho")?)?,
        idio_sigma: parse_f64("idio_sigma", require("idio_sigma")?)?,
        seed: require("seed")?
            .parse()
            .with_context(|| format!("key 'seed': invalid integer '{}'", entries["seed"]))?,
    };
    model.validate()?;

    let n_values = entries
        .get("n_values")
        .map(|v| parse_usize_list("n_values", v))
        .transpose()?;
    let t_values = entries
        .get("t_values")
        .map(|v| parse_usize_list("t_values", v))
        .transpose()?;
    let t_fixed = entries
        .get("t_fixed")
        .map(|v| parse_usize("t_fixed", v))
        .transpose()?;
    let replications = entries
        .get("replications")
        .map(|v| parse_usize("replications", v))
        .transpose()?;
    let out_dir = entries.get("out_dir").map(PathBuf::from);
    let demean = match entries.get("demean").map(String::as_str) {
        None => false,
        Some("true") => true,
        Some("false") => false,
        Some(other) => bail!("key 'demean': expected true or false, got '{other}'"),
    };
    let metrics = entries.get("metrics").map(|v| {
        v.split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
    });
    if let Some(selected) = &metrics {
        let registry = afm_core::diagnostics::metric_registry();
        for name in selected {
            if !registry.iter().any(|p| name.starts_with(p)) {
                bail!(
                    "key 'metrics': '{name}' matches no registered metric (prefixes: {})",
                    registry.join(", ")
                );
            }
        }
    }

    Ok(RunConfig {
        model,
        n_values,
        t_values,
        t_fixed,
        replications,
        out_dir,
        demean,
        metrics,
    })
}
