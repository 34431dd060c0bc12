//! Comparison designs.
//!
//! Each baseline designs under its own (simplified) model and returns only
//! `(F, G, C)`; evaluation always goes through [`crate::covariance`] with
//! the true configuration and channels.

use serde::{Deserialize, Serialize};

use crate::covariance::{enforce_power, evaluate, mmse_receiver, DesignVariables};
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::pdd::{run, run_algorithm1, ConvergenceTrace, ExtraConstraints, PddConfig, Problem};
use crate::system::{ChannelSet, Link, SystemConfig};

/// Design that ignores every impairment: ideal hardware, exact CSI and a
/// perfectly cancelled self-interference channel. The result is scaled into
/// the true power budgets.
pub fn design_unaware(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    pdd: &PddConfig,
) -> Result<(DesignVariables, ConvergenceTrace)> {
    let (design, trace) = run_algorithm1(&cfg.ideal_hardware(), &ch.without_csi_error(), pdd)?;
    Ok((enforce_power(cfg, ch, &design)?, trace))
}

/// Dynamic-range grades of the threshold-based designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrGrade {
    High,
    Med,
    Low,
}

impl DrGrade {
    pub const ALL: [DrGrade; 3] = [DrGrade::High, DrGrade::Med, DrGrade::Low];

    /// `(P_th, σ_si²)`: the cap on received self-interference power and the
    /// residual self-interference noise, both relative to the relay noise.
    pub fn thresholds(self, sigma2: f64) -> (f64, f64) {
        match self {
            DrGrade::High => (1e2 * sigma2, sigma2 / 10.0),
            DrGrade::Med => (1e4 * sigma2, sigma2),
            DrGrade::Low => (1e6 * sigma2, 10.0 * sigma2),
        }
    }
}

/// Configuration, channels and constraints a dynamic-range design optimizes against.
pub fn dr_model(cfg: &SystemConfig, ch: &ChannelSet, grade: DrGrade) -> (SystemConfig, ChannelSet, ExtraConstraints) {
    let (p_th, sigma2_si) = grade.thresholds(cfg.sigma2_nr);
    let mut model = cfg.ideal_hardware();
    model.sigma2_nr += sigma2_si;
    let extra = ExtraConstraints {
        papr: None,
        si_power_cap: Some(p_th),
    };
    (model, ch.without_csi_error(), extra)
}

/// Impairment-unaware design that caps the received self-interference power
/// and treats the residual as extra relay noise.
pub fn design_dr(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    grade: DrGrade,
    pdd: &PddConfig,
) -> Result<(DesignVariables, ConvergenceTrace)> {
    let (model, model_ch, extra) = dr_model(cfg, ch, grade);
    let users = std::slice::from_ref(&model_ch);
    let problem = Problem {
        extra,
        ..Problem::mse(&model, users)
    };
    let out = run(&problem, pdd)?;
    let design = out.designs.into_iter().next().expect("one user");
    Ok((enforce_power(cfg, ch, &design)?, out.trace))
}

/// Replaces the equalizer by the MMSE receiver under the true model.
pub fn apply_rxopt(cfg: &SystemConfig, ch: &ChannelSet, design: &DesignVariables) -> Result<DesignVariables> {
    Ok(DesignVariables {
        equalizer: mmse_receiver(cfg, ch, &design.precoder, &design.relay_gain)?,
        ..design.clone()
    })
}

/// A half-duplex design together with the model it is evaluated in.
#[derive(Debug, Clone)]
pub struct HdDesign {
    pub design: DesignVariables,
    /// Configuration with `2d` streams.
    pub cfg: SystemConfig,
    /// Channels without the links that only couple across time slots.
    pub channels: ChannelSet,
    /// MSE per `d` streams, comparable to the full-duplex MSE.
    pub mse: f64,
    /// Achievable rate averaged over both slots.
    pub rate: f64,
    pub trace: ConvergenceTrace,
}

fn silent(link: &Link) -> Link {
    let (m, n) = link.est.shape();
    Link::exact(CMat::zeros(m, n))
}

/// The half-duplex model. Source-relay and relay-destination transmissions
/// use orthogonal slots, so there is neither self-interference nor direct
/// source interference while the destination listens. To match the
/// full-duplex throughput every transmission carries `2d` streams.
pub fn hd_model(cfg: &SystemConfig, ch: &ChannelSet) -> Result<(SystemConfig, ChannelSet)> {
    let streams = 2 * cfg.d;
    if streams > cfg.n_s.min(cfg.n_r).min(cfg.m_r).min(cfg.m_d) {
        return Err(Error::Config(format!(
            "half-duplex comparison needs {streams} streams, more than the antenna counts allow"
        )));
    }
    let hd_cfg = SystemConfig {
        d: streams,
        ..cfg.clone()
    };
    let hd_ch = ChannelSet {
        sd: silent(&ch.sd),
        rr: silent(&ch.rr),
        ..ch.clone()
    };
    Ok((hd_cfg, hd_ch))
}

/// Impairment-aware half-duplex design and its MSE per `d` streams.
pub fn design_hd(cfg: &SystemConfig, ch: &ChannelSet, pdd: &PddConfig) -> Result<HdDesign> {
    let (hd_cfg, hd_ch) = hd_model(cfg, ch)?;
    let (design, trace) = run_algorithm1(&hd_cfg, &hd_ch, pdd)?;
    let design = enforce_power(&hd_cfg, &hd_ch, &design)?;
    let eval = evaluate(&hd_cfg, &hd_ch, &design)?;
    Ok(HdDesign {
        mse: eval.mse / 2.0,
        rate: eval.rate / 2.0,
        trace,
        design,
        cfg: hd_cfg,
        channels: hd_ch,
    })
}
