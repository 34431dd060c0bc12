//! Per-node signal units for the optimizer.
//!
//! Measuring the source signal, the relay input, the relay output and the
//! destination input each in its own unit leaves the MSE unchanged but moves
//! every lifted variable to order one. Without this the constraint residuals
//! live on scales that differ by orders of magnitude (with milliwatt units
//! and −30 dB links the equalizer is around 30 while the desired signal at
//! the destination is around 0.03), and the violation threshold would
//! tolerate relative errors of ten percent in the small quantities.
//!
//! With node units `a` (source), `b` (relay input), `c` (relay output) and
//! `e` (destinations) the design maps as `F = a F'`, `G = (c/b) G'`,
//! `C = C'/e`.

use crate::covariance::DesignVariables;
use crate::linalg::{cr, CMat};
use crate::system::{ChannelSet, Link, SystemConfig};

use super::ExtraConstraints;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub source: f64,
    pub relay_in: f64,
    pub relay_out: f64,
    pub dest: f64,
}

fn gram_trace(h: &CMat) -> f64 {
    h.norm_squared()
}

impl Scaling {
    pub fn identity() -> Self {
        Self {
            source: 1.0,
            relay_in: 1.0,
            relay_out: 1.0,
            dest: 1.0,
        }
    }

    /// Units equal to the per-antenna signal level each node sees when both
    /// transmitters spread their full budget evenly over their antennas.
    pub fn for_problem(cfg: &SystemConfig, users: &[ChannelSet]) -> Self {
        let sh = &users[0];
        let per_src = cfg.p_s_max / cfg.n_s as f64;
        let per_relay = cfg.p_r_max / cfg.n_r as f64;
        let relay_in = (gram_trace(&sh.sr.est) * per_src / cfg.m_r as f64 + cfg.sigma2_nr).sqrt();
        let dest_power: f64 = users
            .iter()
            .map(|ch| (gram_trace(&ch.rd.est) * per_relay + gram_trace(&ch.sd.est) * per_src) / cfg.m_d as f64)
            .sum::<f64>()
            / users.len() as f64;
        Self {
            source: cfg.p_s_max.sqrt(),
            relay_in,
            relay_out: cfg.p_r_max.sqrt(),
            dest: (dest_power + cfg.sigma2_nd).sqrt(),
        }
    }

    /// The configuration expressed in node units.
    pub fn config(&self, cfg: &SystemConfig) -> SystemConfig {
        SystemConfig {
            p_s_max: cfg.p_s_max / self.source.powi(2),
            p_r_max: cfg.p_r_max / self.relay_out.powi(2),
            sigma2_nr: cfg.sigma2_nr / self.relay_in.powi(2),
            sigma2_nd: cfg.sigma2_nd / self.dest.powi(2),
            ..cfg.clone()
        }
    }

    fn link(l: &Link, gain: f64) -> Link {
        Link {
            true_h: &l.true_h * cr(gain),
            est: &l.est * cr(gain),
            c_rx: &l.c_rx * cr(gain * gain),
            c_tx: l.c_tx.clone(),
        }
    }

    /// Channels expressed in node units.
    pub fn channels(&self, ch: &ChannelSet) -> ChannelSet {
        ChannelSet {
            sr: Self::link(&ch.sr, self.source / self.relay_in),
            rd: Self::link(&ch.rd, self.relay_out / self.dest),
            sd: Self::link(&ch.sd, self.source / self.dest),
            rr: Self::link(&ch.rr, self.relay_out / self.relay_in),
        }
    }

    /// Constraint budgets expressed in node units.
    pub fn extra(&self, extra: &ExtraConstraints) -> ExtraConstraints {
        ExtraConstraints {
            papr: extra.papr.map(|p| super::PaprBudget {
                p_tx: p.p_tx / self.relay_out.powi(2),
                p_rx: p.p_rx / self.relay_in.powi(2),
                ..p
            }),
            si_power_cap: extra.si_power_cap.map(|c| c / self.relay_in.powi(2)),
        }
    }

    /// Converts a design from node units back to physical units.
    pub fn to_physical(&self, d: &DesignVariables) -> DesignVariables {
        DesignVariables {
            precoder: &d.precoder * cr(self.source),
            relay_gain: &d.relay_gain * cr(self.relay_out / self.relay_in),
            equalizer: &d.equalizer * cr(1.0 / self.dest),
        }
    }

    /// Converts a physical design into node units.
    pub fn from_physical(&self, d: &DesignVariables) -> DesignVariables {
        DesignVariables {
            precoder: &d.precoder * cr(1.0 / self.source),
            relay_gain: &d.relay_gain * cr(self.relay_in / self.relay_out),
            equalizer: &d.equalizer * cr(self.dest),
        }
    }

    /// Relay output factor `J` (with `J J^H = M_out`) in physical units.
    pub fn relay_out_to_physical(&self, j: &CMat) -> CMat {
        j * cr(self.relay_out)
    }

    /// Precoder in physical units.
    pub fn precoder_to_physical(&self, f: &CMat) -> CMat {
        f * cr(self.source)
    }
}
