//! Monte Carlo experiments: sweeps over one system parameter, comparison of
//! design methods on shared channel draws, and CSV output.

mod config;
pub mod report;

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{apply_rxopt, design_dr, design_hd, design_unaware, DrGrade};
use crate::covariance::{evaluate, DesignVariables};
use crate::error::{Error, Result};
use crate::pdd::{run_algorithm1, run_rate_maximization, ConvergenceTrace, PddConfig};
use crate::system::{db_to_linear, dbm_to_mw, default_config, draw_channels, ChannelSet, RandomStream, SystemConfig};

pub use config::system_from_table;

/// Design methods that can be compared in one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Impairment-aware MSE minimization.
    Aware,
    Unaware,
    DrHigh,
    DrMed,
    DrLow,
    /// Impairment-aware half-duplex relaying at equal throughput.
    Hd,
    UnawareRxopt,
    DrHighRxopt,
    DrMedRxopt,
    DrLowRxopt,
    /// Impairment-aware rate maximization.
    RateAware,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Aware,
        Method::Unaware,
        Method::DrHigh,
        Method::DrMed,
        Method::DrLow,
        Method::Hd,
        Method::UnawareRxopt,
        Method::DrHighRxopt,
        Method::DrMedRxopt,
        Method::DrLowRxopt,
        Method::RateAware,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Aware => "aware",
            Method::Unaware => "unaware",
            Method::DrHigh => "dr_high",
            Method::DrMed => "dr_med",
            Method::DrLow => "dr_low",
            Method::Hd => "hd",
            Method::UnawareRxopt => "unaware_rxopt",
            Method::DrHighRxopt => "dr_high_rxopt",
            Method::DrMedRxopt => "dr_med_rxopt",
            Method::DrLowRxopt => "dr_low_rxopt",
            Method::RateAware => "rate_aware",
        }
    }

    /// The method whose design this one post-processes with an MMSE receiver.
    pub fn rxopt_base(self) -> Option<Method> {
        match self {
            Method::UnawareRxopt => Some(Method::Unaware),
            Method::DrHighRxopt => Some(Method::DrHigh),
            Method::DrMedRxopt => Some(Method::DrMed),
            Method::DrLowRxopt => Some(Method::DrLow),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// The swept system parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepParam {
    /// All four distortion coefficients, in dB.
    #[serde(rename = "kappa")]
    Kappa,
    /// Both noise variances, in dBm.
    #[serde(rename = "sigma_n2")]
    SigmaN2,
    /// Training symbols.
    #[serde(rename = "T")]
    TrainingLen,
    /// Every array size; the stream count is kept.
    #[serde(rename = "dims")]
    Dims,
    /// Self-interference channel strength, in dB.
    #[serde(rename = "rho_rr")]
    RhoRr,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Kappa => "kappa",
            SweepParam::SigmaN2 => "sigma_n2",
            SweepParam::TrainingLen => "T",
            SweepParam::Dims => "dims",
            SweepParam::RhoRr => "rho_rr",
        }
    }

    /// `base` with this parameter set to `value` (in the parameter's sweep unit).
    pub fn apply(self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let cfg = match self {
            SweepParam::Kappa => base.clone().with_distortion(db_to_linear(value)),
            SweepParam::SigmaN2 => base.clone().with_noise(dbm_to_mw(value)),
            SweepParam::TrainingLen => SystemConfig {
                training_len: value,
                ..base.clone()
            },
            SweepParam::Dims => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::Config(format!("array size {value} is not a positive integer")));
                }
                base.clone().with_dims(value as usize, base.d)
            }
            SweepParam::RhoRr => SystemConfig {
                rho_rr: db_to_linear(value),
                ..base.clone()
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

/// Everything needed to reproduce a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub base: SystemConfig,
    /// `None` evaluates the base configuration only; its records carry the
    /// parameter name `none` and value 0.
    pub sweep: Option<Sweep>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub master_seed: u64,
    pub pdd: PddConfig,
}

/// One configuration of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub param: Option<SweepParam>,
    pub value: f64,
    pub cfg: SystemConfig,
}

impl ExperimentSpec {
    /// 2×2 antennas, one stream, 20 trials.
    pub fn desk_scale() -> Self {
        Self {
            base: default_config().with_dims(2, 1),
            sweep: None,
            methods: vec![Method::Aware, Method::Unaware, Method::Hd],
            trials: 20,
            master_seed: 1,
            pdd: PddConfig::default(),
        }
    }

    /// The reference 4×4 setup with two streams and 100 trials.
    pub fn full_scale() -> Self {
        Self {
            base: default_config(),
            trials: 100,
            ..Self::desk_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.pdd.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("at least one trial is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep has no values".into()));
            }
        }
        self.points().map(|_| ())
    }

    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        match &self.sweep {
            None => Ok(vec![SweepPoint {
                param: None,
                value: 0.0,
                cfg: self.base.clone(),
            }]),
            Some(sweep) => sweep
                .values
                .iter()
                .map(|&value| {
                    Ok(SweepPoint {
                        param: Some(sweep.param),
                        value,
                        cfg: sweep.param.apply(&self.base, value)?,
                    })
                })
                .collect(),
        }
    }
}

/// A design together with its true performance.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub design: DesignVariables,
    /// Sum MSE per `d` streams under the true model.
    pub mse: f64,
    /// Achievable rate in bit/s under the true model.
    pub rate: f64,
    pub trace: ConvergenceTrace,
}

fn evaluated(cfg: &SystemConfig, ch: &ChannelSet, design: DesignVariables, trace: ConvergenceTrace) -> Result<MethodOutcome> {
    let eval = evaluate(cfg, ch, &design)?;
    Ok(MethodOutcome {
        design,
        mse: eval.mse,
        rate: eval.rate,
        trace,
    })
}

/// Designs with `method` and evaluates the result under the true model.
pub fn run_method(method: Method, cfg: &SystemConfig, ch: &ChannelSet, pdd: &PddConfig) -> Result<MethodOutcome> {
    let dr = |grade| {
        let (design, trace) = design_dr(cfg, ch, grade, pdd)?;
        evaluated(cfg, ch, design, trace)
    };
    match method {
        Method::Aware => {
            let (design, trace) = run_algorithm1(cfg, ch, pdd)?;
            evaluated(cfg, ch, design, trace)
        }
        Method::Unaware => {
            let (design, trace) = design_unaware(cfg, ch, pdd)?;
            evaluated(cfg, ch, design, trace)
        }
        Method::DrHigh => dr(DrGrade::High),
        Method::DrMed => dr(DrGrade::Med),
        Method::DrLow => dr(DrGrade::Low),
        Method::Hd => {
            let hd = design_hd(cfg, ch, pdd)?;
            Ok(MethodOutcome {
                design: hd.design,
                mse: hd.mse,
                rate: hd.rate,
                trace: hd.trace,
            })
        }
        Method::RateAware => {
            let out = run_rate_maximization(cfg, ch, pdd)?;
            let design = out.designs.into_iter().next().expect("one user");
            evaluated(cfg, ch, design, out.trace)
        }
        rx => {
            let base = run_method(rx.rxopt_base().expect("rxopt variant"), cfg, ch, pdd)?;
            rxopt_outcome(cfg, ch, &base)
        }
    }
}

fn rxopt_outcome(cfg: &SystemConfig, ch: &ChannelSet, base: &MethodOutcome) -> Result<MethodOutcome> {
    evaluated(cfg, ch, apply_rxopt(cfg, ch, &base.design)?, base.trace.clone())
}

/// One row of `records.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub trial: usize,
    pub sweep_param: String,
    pub sweep_value: f64,
    pub method: String,
    /// `ok`, or the failure tag of the error that ended this design.
    pub status: String,
    pub mse: f64,
    pub rate: f64,
    pub outer_iters: usize,
    pub total_inner_iters: usize,
    pub final_zeta: f64,
    pub wall_ms: f64,
}

impl ExperimentRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

fn record(trial: usize, point: &SweepPoint, method: Method, result: &Result<MethodOutcome>, wall_ms: f64) -> ExperimentRecord {
    let (status, mse, rate, trace) = match result {
        Ok(o) => ("ok", o.mse, o.rate, Some(&o.trace)),
        Err(Error::NoConvergence { trace }) => ("no_convergence", f64::NAN, f64::NAN, Some(trace.as_ref())),
        Err(e) => (e.status_tag(), f64::NAN, f64::NAN, None),
    };
    ExperimentRecord {
        trial,
        sweep_param: point.param.map_or("none", SweepParam::name).to_string(),
        sweep_value: point.value,
        method: method.name().to_string(),
        status: status.to_string(),
        mse,
        rate,
        outer_iters: trace.map_or(0, ConvergenceTrace::outer_iterations),
        total_inner_iters: trace.map_or(0, ConvergenceTrace::total_inner_iterations),
        final_zeta: trace.map_or(f64::NAN, ConvergenceTrace::final_zeta),
        wall_ms,
    }
}

/// Runs every method of one trial on one channel draw. Receiver-optimized
/// variants reuse the design of their base method when it is also selected.
fn run_trial(spec: &ExperimentSpec, point: &SweepPoint, trial: usize) -> Vec<ExperimentRecord> {
    let mut rng = RandomStream::for_trial(spec.master_seed, trial as u64);
    let ch = match draw_channels(&point.cfg, &mut rng) {
        Ok(ch) => ch,
        Err(e) => {
            let err = Err(e);
            return spec.methods.iter().map(|&m| record(trial, point, m, &err, 0.0)).collect();
        }
    };
    let mut done: HashMap<Method, (Result<MethodOutcome>, f64)> = HashMap::new();
    let mut out = Vec::with_capacity(spec.methods.len());
    for &method in &spec.methods {
        let start = Instant::now();
        let (result, base_ms) = match method.rxopt_base().and_then(|b| done.get(&b)) {
            Some((Ok(base), ms)) => (rxopt_outcome(&point.cfg, &ch, base), *ms),
            _ => (run_method(method, &point.cfg, &ch, &spec.pdd), 0.0),
        };
        let wall_ms = base_ms + start.elapsed().as_secs_f64() * 1e3;
        out.push(record(trial, point, method, &result, wall_ms));
        done.insert(method, (result, wall_ms));
    }
    out
}

/// Runs all trials at all sweep points. Trials run in parallel; the output is
/// ordered by sweep point, then trial, then method, independently of scheduling.
/// Trial `k` draws its channels from the same stream at every sweep point.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<ExperimentRecord>> {
    spec.validate()?;
    let points = spec.points()?;
    let jobs: Vec<(&SweepPoint, usize)> = points
        .iter()
        .flat_map(|p| (0..spec.trials).map(move |t| (p, t)))
        .collect();
    let rows: Vec<Vec<ExperimentRecord>> = jobs
        .into_par_iter()
        .map(|(point, trial)| {
            let rows = run_trial(spec, point, trial);
            log::debug!("trial {trial} at {} = {} done", point.param.map_or("none", SweepParam::name), point.value);
            rows
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_records(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    write_rows(path, records)
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One row of `summary.csv`: statistics of the successful trials of one
/// method at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_param: String,
    pub sweep_value: f64,
    pub method: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mse_median: f64,
    pub mse_q1: f64,
    pub mse_q3: f64,
    pub rate_median: f64,
}

/// Summaries in order of first appearance of each (sweep value, method).
pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, u64, String)> = Vec::new();
    let mut groups: HashMap<(String, u64, String), Vec<&ExperimentRecord>> = HashMap::new();
    for r in records {
        let key = (r.sweep_param.clone(), r.sweep_value.to_bits(), r.method.clone());
        if !groups.contains_key(&key) {
            keys.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    keys.into_iter()
        .map(|key| {
            let rows = &groups[&key];
            let sorted = |f: fn(&ExperimentRecord) -> f64| {
                let mut v: Vec<f64> = rows.iter().filter(|r| r.is_ok()).map(|r| f(r)).collect();
                v.sort_by(f64::total_cmp);
                v
            };
            let mse = sorted(|r| r.mse);
            let rate = sorted(|r| r.rate);
            SummaryRow {
                sweep_param: key.0.clone(),
                sweep_value: f64::from_bits(key.1),
                method: key.2.clone(),
                n_ok: mse.len(),
                n_failed: rows.len() - mse.len(),
                mse_median: quantile(&mse, 0.5),
                mse_q1: quantile(&mse, 0.25),
                mse_q3: quantile(&mse, 0.75),
                rate_median: quantile(&rate, 0.5),
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Runs the sweep and writes `records.csv` and `summary.csv` into `out_dir`.
pub fn run_and_write(spec: &ExperimentSpec, out_dir: &Path) -> Result<Vec<ExperimentRecord>> {
    std::fs::create_dir_all(out_dir)?;
    let records = run_sweep(spec)?;
    write_records(&out_dir.join("records.csv"), &records)?;
    write_summary(&out_dir.join("summary.csv"), &summarize(&records))?;
    Ok(records)
}

#[cfg(test)]
mod tests;
