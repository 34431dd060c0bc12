//! TOML experiment files.
//!
//! System keys mirror [`SystemConfig`] field names. A key with a `_db`
//! suffix gives the same quantity in decibels (dBm for powers and noise,
//! since the crate works in milliwatts). A few shorthands set several
//! fields at once: `kappa` (all four distortion coefficients), `sigma2`
//! (both noise variances), `p_max` (both budgets) and `antennas` (all four
//! array sizes). Shorthands are applied before the specific keys.
//!
//! ```toml
//! trials = 20
//! master_seed = 7
//! methods = ["aware", "unaware", "hd"]
//!
//! [system]
//! antennas = 2
//! d = 1
//! kappa_db = -20
//!
//! [sweep]
//! param = "kappa"
//! values = [-50, -40, -30, -20, -10]
//!
//! [pdd]
//! max_outer = 40
//! ```

use std::path::Path;

use serde::Deserialize;
use toml::{Table, Value};

use super::{ExperimentSpec, Method, Sweep};
use crate::error::{Error, Result};
use crate::pdd::PddConfig;
use crate::system::{db_to_linear, SystemConfig};

const SHORTHANDS: [(&str, &[&str]); 4] = [
    ("kappa", &["kappa_s", "kappa_r", "beta_r", "beta_d"]),
    ("sigma2", &["sigma2_nr", "sigma2_nd"]),
    ("p_max", &["p_s_max", "p_r_max"]),
    ("antennas", &["n_s", "n_r", "m_r", "m_d"]),
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    trials: Option<usize>,
    master_seed: Option<u64>,
    methods: Option<Vec<Method>>,
    system: Option<Table>,
    sweep: Option<Sweep>,
    pdd: Option<PddConfig>,
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("`{key}` must be a number"))),
    }
}

/// Resolves `_db` suffixes into the linear value under the plain name.
fn linear_entry(key: &str, value: &Value) -> Result<(String, Value)> {
    match key.strip_suffix("_db") {
        Some(stem) => Ok((stem.to_string(), Value::Float(db_to_linear(as_f64(key, value)?)))),
        None => Ok((key.to_string(), value.clone())),
    }
}

/// Applies the keys of a `[system]` table on top of `base`.
pub fn system_from_table(base: &SystemConfig, table: &Table) -> Result<SystemConfig> {
    let mut merged = Table::try_from(base).map_err(config_error)?;
    let entries = table
        .iter()
        .map(|(k, v)| linear_entry(k, v))
        .collect::<Result<Vec<_>>>()?;
    let (shorthand, specific): (Vec<_>, Vec<_>) = entries
        .into_iter()
        .partition(|(k, _)| SHORTHANDS.iter().any(|(s, _)| s == k));
    for (key, value) in shorthand {
        let (_, fields) = SHORTHANDS.iter().find(|(s, _)| *s == key).expect("partitioned");
        for field in fields.iter() {
            merged.insert(field.to_string(), value.clone());
        }
    }
    for (key, value) in specific {
        if !merged.contains_key(&key) {
            return Err(Error::Config(format!("unknown system key `{key}`")));
        }
        merged.insert(key, value);
    }
    let cfg: SystemConfig = Value::Table(merged).try_into().map_err(config_error)?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentSpec {
    /// Parses an experiment file, filling absent entries from `defaults`.
    pub fn from_toml_str(text: &str, defaults: ExperimentSpec) -> Result<Self> {
        let file: ExperimentFile = toml::from_str(text).map_err(config_error)?;
        let base = match &file.system {
            Some(table) => system_from_table(&defaults.base, table)?,
            None => defaults.base,
        };
        let spec = ExperimentSpec {
            base,
            sweep: file.sweep.or(defaults.sweep),
            methods: file.methods.unwrap_or(defaults.methods),
            trials: file.trials.unwrap_or(defaults.trials),
            master_seed: file.master_seed.unwrap_or(defaults.master_seed),
            pdd: file.pdd.unwrap_or(defaults.pdd),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path, defaults: ExperimentSpec) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?, defaults)
    }
}
