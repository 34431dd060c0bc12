//! Symbol-by-symbol simulation of the relay chain.
//!
//! Every symbol runs through the signal model:
//!
//! ```text
//! x      = F s + e_tx,s
//! r_in   = H_sr x + H_rr r_out + n_r + e_rx,r
//! r̃_in   = r_in − H̃_rr m_out
//! m_out  = G r̃_in(t−1),        r_out = m_out + e_tx,r
//! y      = H_rd r_out + H_sd x + n_d + e_rx,d
//! ŝ      = C^H y
//! ```
//!
//! The relay forwards with a one-symbol delay, so `ŝ(t)` estimates
//! `s(t−1)`. Sample covariances over the window after burn-in are the
//! empirical counterparts of the closed forms in [`crate::covariance`].

use num_complex::Complex64;

use crate::covariance::{min0, solve_mout, through_link, DesignVariables};
use crate::error::{Error, Result};
use crate::linalg::{cr, herm_sqrt, identity, CMat, CVec};
use crate::system::{ChannelSet, Link, RandomStream, SystemConfig};

/// Shortest horizon accepted by [`simulate_chain`].
pub const MIN_SYMBOLS: usize = 1000;

/// Running relay output power above this multiple of the budget is treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// How the true channels behave over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CsiMode {
    /// A fresh CSI error is drawn every symbol, so sample averages also
    /// average over the error law (the closed forms are such averages).
    #[default]
    Resample,
    /// The true channels of the channel set are held for the whole horizon.
    Fixed,
}

/// How distortion variances are set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceMode {
    /// From the closed-form covariance of the undistorted signal.
    #[default]
    Model,
    /// From the running sample average of the undistorted signal power.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub n_sym: usize,
    pub csi: CsiMode,
    pub variance: VarianceMode,
    /// Fraction of leading symbols excluded from the statistics.
    pub burn_in: f64,
    /// Keep the full time series.
    pub record: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            n_sym: 100_000,
            csi: CsiMode::Resample,
            variance: VarianceMode::Model,
            burn_in: 0.1,
            record: false,
        }
    }
}

/// Time series of one simulation, one entry per symbol.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainSample {
    pub x: Vec<CVec>,
    pub r_in: Vec<CVec>,
    pub r_in_cancelled: Vec<CVec>,
    pub m_out: Vec<CVec>,
    pub r_out: Vec<CVec>,
    pub y: Vec<CVec>,
}

/// Normalized sample correlations of one distortion stream. Each value is
/// the largest magnitude over entries; under the model all three are of
/// order `1/√n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionCheck {
    /// Correlation between distortion entries and entries of the signal it distorts.
    pub cross: f64,
    /// Correlation between different entries of the distortion.
    pub off_diagonal: f64,
    /// Correlation of each entry with its previous symbol.
    pub lag1: f64,
}

impl DistortionCheck {
    pub fn max(&self) -> f64 {
        self.cross.max(self.off_diagonal).max(self.lag1)
    }
}

/// Checks for the four distortion streams; `None` when a stream is switched off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionReport {
    pub source_tx: Option<DistortionCheck>,
    pub relay_rx: Option<DistortionCheck>,
    pub relay_tx: Option<DistortionCheck>,
    pub dest_rx: Option<DistortionCheck>,
}

impl DistortionReport {
    pub fn all(&self) -> impl Iterator<Item = DistortionCheck> {
        [self.source_tx, self.relay_rx, self.relay_tx, self.dest_rx].into_iter().flatten()
    }
}

/// Sample statistics over the window after burn-in.
#[derive(Debug, Clone)]
pub struct ChainStats {
    /// Number of symbols in the averaging window.
    pub n_used: usize,
    /// `Ê{r_out r_out^H}`.
    pub relay_tx_cov: CMat,
    /// `Ê{r̃_in r̃_in^H}`.
    pub relay_input_cov: CMat,
    /// `Ê{y y^H}`.
    pub dest_cov: CMat,
    /// `Ê{(s − ŝ)(s − ŝ)^H}` with `ŝ` aligned to the relay delay.
    pub mse_matrix: CMat,
    pub distortion: DistortionReport,
    pub sample: Option<ChainSample>,
}

/// Accumulates the statistics of one distortion stream against its signal.
struct StreamMonitor {
    cross: CMat,
    dist_cov: CMat,
    signal_pow: Vec<f64>,
    lag: Vec<Complex64>,
    prev: Option<CVec>,
}

impl StreamMonitor {
    fn new(n: usize) -> Self {
        Self {
            cross: CMat::zeros(n, n),
            dist_cov: CMat::zeros(n, n),
            signal_pow: vec![0.0; n],
            lag: vec![cr(0.0); n],
            prev: None,
        }
    }

    fn push(&mut self, e: &CVec, u: &CVec) {
        self.cross += e * u.adjoint();
        self.dist_cov += e * e.adjoint();
        for (p, z) in self.signal_pow.iter_mut().zip(u.iter()) {
            *p += z.norm_sqr();
        }
        if let Some(prev) = &self.prev {
            for (l, (a, b)) in self.lag.iter_mut().zip(e.iter().zip(prev.iter())) {
                *l += a * b.conj();
            }
        }
        self.prev = Some(e.clone());
    }

    fn finish(&self) -> Option<DistortionCheck> {
        let n = self.dist_cov.nrows();
        let dist_pow: Vec<f64> = (0..n).map(|i| self.dist_cov[(i, i)].re).collect();
        if dist_pow.iter().all(|&p| p <= 0.0) {
            return None;
        }
        let ratio = |z: Complex64, a: f64, b: f64| if a > 0.0 && b > 0.0 { z.norm() / (a * b).sqrt() } else { 0.0 };
        let mut check = DistortionCheck {
            cross: 0.0,
            off_diagonal: 0.0,
            lag1: 0.0,
        };
        for i in 0..n {
            check.lag1 = check.lag1.max(ratio(self.lag[i], dist_pow[i], dist_pow[i]));
            for j in 0..n {
                check.cross = check.cross.max(ratio(self.cross[(i, j)], dist_pow[i], self.signal_pow[j]));
                if i != j {
                    check.off_diagonal = check.off_diagonal.max(ratio(self.dist_cov[(i, j)], dist_pow[i], dist_pow[j]));
                }
            }
        }
        Some(check)
    }
}

fn draw_vec(rng: &mut RandomStream, variances: &[f64]) -> CVec {
    CVec::from_iterator(variances.len(), variances.iter().map(|&v| rng.complex_normal(v.max(0.0))))
}

fn diag_re(x: &CMat) -> Vec<f64> {
    (0..x.nrows()).map(|i| x[(i, i)].re).collect()
}

fn scaled(v: &[f64], k: f64) -> Vec<f64> {
    v.iter().map(|x| x * k).collect()
}

/// Running per-entry power average used by [`VarianceMode::Empirical`].
struct RunningPower {
    sum: Vec<f64>,
    count: f64,
}

impl RunningPower {
    fn new(n: usize) -> Self {
        Self { sum: vec![0.0; n], count: 0.0 }
    }

    fn update(&mut self, u: &CVec) -> Vec<f64> {
        self.count += 1.0;
        for (s, z) in self.sum.iter_mut().zip(u.iter()) {
            *s += z.norm_sqr();
        }
        self.sum.iter().map(|s| s / self.count).collect()
    }
}

/// Channel realizations used for one symbol.
struct ChannelDraw {
    roots: Option<[(CMat, CMat); 4]>,
}

impl ChannelDraw {
    fn new(ch: &ChannelSet, mode: CsiMode) -> Result<Self> {
        let roots = match mode {
            CsiMode::Fixed => None,
            CsiMode::Resample => {
                let r = |l: &Link| -> Result<(CMat, CMat)> { Ok((herm_sqrt(&l.c_rx)?, herm_sqrt(&l.c_tx)?)) };
                Some([r(&ch.sr)?, r(&ch.rd)?, r(&ch.sd)?, r(&ch.rr)?])
            }
        };
        Ok(Self { roots })
    }

    /// True channels `[sr, rd, sd, rr]` for the next symbol.
    fn next(&self, ch: &ChannelSet, rng: &mut RandomStream) -> [CMat; 4] {
        let links = [&ch.sr, &ch.rd, &ch.sd, &ch.rr];
        match &self.roots {
            None => links.map(|l| l.true_h.clone()),
            Some(roots) => {
                let mut out = links.map(|l| l.est.clone());
                for (k, (l, (rx, tx))) in links.iter().zip(roots).enumerate() {
                    let (m, n) = l.est.shape();
                    out[k] += rx * rng.cn_matrix(m, n, 1.0) * tx;
                }
                out
            }
        }
    }
}

/// Simulates the chain for `opts.n_sym` symbols.
pub fn simulate_chain(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    design: &DesignVariables,
    opts: &SimulationOptions,
    rng: &mut RandomStream,
) -> Result<ChainStats> {
    cfg.validate()?;
    ch.check_dims(cfg)?;
    design.check_dims(cfg)?;
    if opts.n_sym < MIN_SYMBOLS {
        return Err(Error::Domain(format!("at least {MIN_SYMBOLS} symbols are required")));
    }
    if !(0.0..1.0).contains(&opts.burn_in) {
        return Err(Error::Domain("burn-in fraction must lie in [0, 1)".into()));
    }
    let (f, g, c) = (&design.precoder, &design.relay_gain, &design.equalizer);
    let m_out = solve_mout(cfg, ch, f, g)?;

    // Closed-form distortion variances.
    let qs = f * f.adjoint();
    let received_relay = min0(cfg, ch, f)? + through_link(&ch.rr, &m_out);
    let undistorted_dest =
        through_link(&ch.sd, &qs) + through_link(&ch.rd, &m_out) + identity(cfg.m_d) * cr(cfg.sigma2_nd);
    let model_var = [
        scaled(&diag_re(&qs), cfg.kappa_s),
        scaled(&diag_re(&received_relay), cfg.beta_r),
        scaled(&diag_re(&m_out), cfg.kappa_r),
        scaled(&diag_re(&undistorted_dest), cfg.beta_d),
    ];

    let draws = ChannelDraw::new(ch, opts.csi)?;
    let burn = (opts.burn_in * opts.n_sym as f64).floor() as usize;
    let limit = DIVERGENCE_FACTOR * cfg.p_r_max;

    let mut running = [
        RunningPower::new(cfg.n_s),
        RunningPower::new(cfg.m_r),
        RunningPower::new(cfg.n_r),
        RunningPower::new(cfg.m_d),
    ];
    let mut monitors = [
        StreamMonitor::new(cfg.n_s),
        StreamMonitor::new(cfg.m_r),
        StreamMonitor::new(cfg.n_r),
        StreamMonitor::new(cfg.m_d),
    ];
    let mut variance_for = |k: usize, u: &CVec| -> Vec<f64> {
        let coeff = [cfg.kappa_s, cfg.beta_r, cfg.kappa_r, cfg.beta_d][k];
        match opts.variance {
            VarianceMode::Model => model_var[k].clone(),
            VarianceMode::Empirical => scaled(&running[k].update(u), coeff),
        }
    };

    let mut acc_rout = CMat::zeros(cfg.n_r, cfg.n_r);
    let mut acc_rin = CMat::zeros(cfg.m_r, cfg.m_r);
    let mut acc_y = CMat::zeros(cfg.m_d, cfg.m_d);
    let mut acc_err = CMat::zeros(cfg.d, cfg.d);
    let mut n_used = 0usize;
    let mut sample = opts.record.then(ChainSample::default);

    let mut prev_cancelled = CVec::zeros(cfg.m_r);
    let mut prev_s: Option<CVec> = None;
    let noise_r = vec![cfg.sigma2_nr; cfg.m_r];
    let noise_d = vec![cfg.sigma2_nd; cfg.m_d];

    for t in 0..opts.n_sym {
        let counted = t >= burn;
        let s = draw_vec(rng, &vec![1.0; cfg.d]);
        let u_s = f * &s;
        let e_s = draw_vec(rng, &variance_for(0, &u_s));
        let x = &u_s + &e_s;

        let m = g * &prev_cancelled;
        let e_r = draw_vec(rng, &variance_for(2, &m));
        let r_out = &m + &e_r;
        let power = r_out.norm_squared();
        if !power.is_finite() || power > limit {
            return Err(Error::RelayLoopUnstable {
                spectral_radius: f64::NAN,
            });
        }

        let [h_sr, h_rd, h_sd, h_rr] = draws.next(ch, rng);
        let u_r = &h_sr * &x + &h_rr * &r_out + draw_vec(rng, &noise_r);
        let e_rr = draw_vec(rng, &variance_for(1, &u_r));
        let r_in = &u_r + &e_rr;
        let cancelled = &r_in - &ch.rr.est * &m;

        let u_d = &h_rd * &r_out + &h_sd * &x + draw_vec(rng, &noise_d);
        let e_d = draw_vec(rng, &variance_for(3, &u_d));
        let y = &u_d + &e_d;
        let s_hat = c.adjoint() * &y;

        if counted {
            n_used += 1;
            acc_rout += &r_out * r_out.adjoint();
            acc_rin += &cancelled * cancelled.adjoint();
            acc_y += &y * y.adjoint();
            if let Some(target) = &prev_s {
                let err = target - &s_hat;
                acc_err += &err * err.adjoint();
            }
            let streams: [(&CVec, &CVec); 4] = [(&e_s, &u_s), (&e_rr, &u_r), (&e_r, &m), (&e_d, &u_d)];
            for (mon, (e, u)) in monitors.iter_mut().zip(streams) {
                mon.push(e, u);
            }
        }
        if let Some(rec) = sample.as_mut() {
            rec.x.push(x);
            rec.r_in.push(r_in);
            rec.r_in_cancelled.push(cancelled.clone());
            rec.m_out.push(m);
            rec.r_out.push(r_out);
            rec.y.push(y);
        }
        prev_cancelled = cancelled;
        prev_s = Some(s);
    }

    let n = n_used as f64;
    // The first counted symbol has no aligned source symbol when burn-in is zero.
    let n_err = if burn == 0 { n - 1.0 } else { n };
    let [source_tx, relay_rx, relay_tx, dest_rx] = monitors.map(|m| m.finish());
    Ok(ChainStats {
        n_used,
        relay_tx_cov: acc_rout / cr(n),
        relay_input_cov: acc_rin / cr(n),
        dest_cov: acc_y / cr(n),
        mse_matrix: acc_err / cr(n_err),
        distortion: DistortionReport {
            source_tx,
            relay_rx,
            relay_tx,
            dest_rx,
        },
        sample,
    })
}
