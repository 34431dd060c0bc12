//! Physical configuration, channel generation and the CSI error model.
//!
//! All quantities are linear. Powers and noise variances are expressed in
//! milliwatts throughout (so `0 dBm` is `1.0` and `-40 dBm` is `1e-4`); any
//! consistent unit would give identical MSE values because only ratios of
//! powers to noise enter the analysis. Use [`dbm_to_watts`] when an absolute
//! SI value is needed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, cr, diag_part, herm_sqrt, identity, CMat};

/// `x dB → 10^(x/10)`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// `x dBm` in milliwatts, the crate's internal power unit.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

/// `x dBm` in watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Every physical and dimensional parameter of the relay link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Source transmit antennas.
    pub n_s: usize,
    /// Relay transmit antennas.
    pub n_r: usize,
    /// Relay receive antennas.
    pub m_r: usize,
    /// Destination receive antennas.
    pub m_d: usize,
    /// Data streams.
    pub d: usize,
    /// Source power budget (mW).
    pub p_s_max: f64,
    /// Relay power budget (mW).
    pub p_r_max: f64,
    /// Relay receiver noise variance (mW).
    pub sigma2_nr: f64,
    /// Destination receiver noise variance (mW).
    pub sigma2_nd: f64,
    /// Source transmit distortion coefficient.
    pub kappa_s: f64,
    /// Relay transmit distortion coefficient.
    pub kappa_r: f64,
    /// Relay receive distortion coefficient.
    pub beta_r: f64,
    /// Destination receive distortion coefficient.
    pub beta_d: f64,
    /// Source-relay path gain.
    pub rho_sr: f64,
    /// Relay-destination path gain.
    pub rho_rd: f64,
    /// Source-destination path gain.
    pub rho_sd: f64,
    /// Self-interference channel strength.
    pub rho_rr: f64,
    /// Rician factor of the self-interference channel.
    pub k_rician: f64,
    /// Pilot symbols spent on channel estimation per coherence interval.
    pub training_len: f64,
    /// Bandwidth in Hz; only scales the achievable rate.
    pub bandwidth: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        default_config()
    }
}

/// The reference setup: 4×4 antennas, two streams, −40 dB distortion
/// coefficients, −30 dB link gains, 0 dB self-interference, −40 dBm noise,
/// 0 dBm power budgets, Rician factor 10 and ten training symbols.
pub fn default_config() -> SystemConfig {
    let kappa = db_to_linear(-40.0);
    let sigma2 = dbm_to_mw(-40.0);
    let p_max = dbm_to_mw(0.0);
    let path = db_to_linear(-30.0);
    SystemConfig {
        n_s: 4,
        n_r: 4,
        m_r: 4,
        m_d: 4,
        d: 2,
        p_s_max: p_max,
        p_r_max: p_max,
        sigma2_nr: sigma2,
        sigma2_nd: sigma2,
        kappa_s: kappa,
        kappa_r: kappa,
        beta_r: kappa,
        beta_d: kappa,
        rho_sr: path,
        rho_rd: path,
        rho_sd: path,
        rho_rr: db_to_linear(0.0),
        k_rician: 10.0,
        training_len: 10.0,
        bandwidth: 1.0,
    }
}

impl SystemConfig {
    /// The default physics at reduced dimensions (all arrays `n`, `d` streams).
    pub fn with_dims(mut self, n: usize, d: usize) -> Self {
        self.n_s = n;
        self.n_r = n;
        self.m_r = n;
        self.m_d = n;
        self.d = d;
        self
    }

    /// Sets all four distortion coefficients to the same linear value.
    pub fn with_distortion(mut self, kappa: f64) -> Self {
        self.kappa_s = kappa;
        self.kappa_r = kappa;
        self.beta_r = kappa;
        self.beta_d = kappa;
        self
    }

    /// Sets both noise variances (mW).
    pub fn with_noise(mut self, sigma2: f64) -> Self {
        self.sigma2_nr = sigma2;
        self.sigma2_nd = sigma2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [self.n_s, self.n_r, self.m_r, self.m_d, self.d];
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Config("all antenna and stream counts must be >= 1".into()));
        }
        if self.d > self.n_s.min(self.m_r).min(self.n_r).min(self.m_d) {
            return Err(Error::Config("d must not exceed any antenna count".into()));
        }
        let positive = [
            ("p_s_max", self.p_s_max),
            ("p_r_max", self.p_r_max),
            ("sigma2_nr", self.sigma2_nr),
            ("sigma2_nd", self.sigma2_nd),
            ("rho_sr", self.rho_sr),
            ("rho_rd", self.rho_rd),
            ("rho_sd", self.rho_sd),
            ("rho_rr", self.rho_rr),
            ("bandwidth", self.bandwidth),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite")));
            }
        }
        let nonneg = [
            ("kappa_s", self.kappa_s),
            ("kappa_r", self.kappa_r),
            ("beta_r", self.beta_r),
            ("beta_d", self.beta_d),
            ("k_rician", self.k_rician),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative and finite")));
            }
        }
        if !(self.training_len >= 1.0) {
            return Err(Error::Config("training_len must be >= 1".into()));
        }
        Ok(())
    }

    /// The same physics with every distortion coefficient set to zero.
    pub fn ideal_hardware(&self) -> Self {
        self.clone().with_distortion(0.0)
    }

    pub fn link_dims(&self, link: LinkId) -> (usize, usize) {
        match link {
            LinkId::Sr => (self.m_r, self.n_s),
            LinkId::Rd => (self.m_d, self.n_r),
            LinkId::Sd => (self.m_d, self.n_s),
            LinkId::Rr => (self.m_r, self.n_r),
        }
    }

    /// Source power ball radius squared, `P_s / (1 + κ_s)`.
    pub fn precoder_budget(&self) -> f64 {
        self.p_s_max / (1.0 + self.kappa_s)
    }

    /// Relay power ball radius squared, `P_r / (1 + κ_r)`.
    pub fn relay_budget(&self) -> f64 {
        self.p_r_max / (1.0 + self.kappa_r)
    }
}

/// The four propagation links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkId {
    Sr,
    Rd,
    Sd,
    Rr,
}

impl LinkId {
    pub const ALL: [LinkId; 4] = [LinkId::Sr, LinkId::Rd, LinkId::Sd, LinkId::Rr];

    /// Noise variance, transmit power, and the transmit/receive distortion
    /// coefficients seen by the pilots of this link.
    fn training_params(self, cfg: &SystemConfig) -> (f64, f64, f64, f64) {
        match self {
            LinkId::Sr => (cfg.sigma2_nr, cfg.p_s_max, cfg.kappa_s, cfg.beta_r),
            LinkId::Rd => (cfg.sigma2_nd, cfg.p_r_max, cfg.kappa_r, cfg.beta_d),
            LinkId::Sd => (cfg.sigma2_nd, cfg.p_s_max, cfg.kappa_s, cfg.beta_d),
            LinkId::Rr => (cfg.sigma2_nr, cfg.p_r_max, cfg.kappa_r, cfg.beta_r),
        }
    }
}

/// One link: the true channel, its estimate, and the error covariance pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub true_h: CMat,
    pub est: CMat,
    /// Receive-side error covariance.
    pub c_rx: CMat,
    /// Transmit-side error covariance.
    pub c_tx: CMat,
}

impl Link {
    /// A perfectly known link.
    pub fn exact(h: CMat) -> Self {
        let (m, n) = h.shape();
        Link {
            true_h: h.clone(),
            est: h,
            c_rx: CMat::zeros(m, m),
            c_tx: CMat::zeros(n, n),
        }
    }

    /// A fresh draw of the true channel given the estimate.
    pub fn sample_true(&self, rng: &mut RandomStream) -> Result<CMat> {
        let (m, n) = self.est.shape();
        let e = rng.cn_matrix(m, n, 1.0);
        let rx = herm_sqrt(&self.c_rx)?;
        let tx = herm_sqrt(&self.c_tx)?;
        Ok(&self.est + rx * e * tx)
    }
}

/// Estimated and true channels for the four links.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub sr: Link,
    pub rd: Link,
    pub sd: Link,
    pub rr: Link,
}

impl ChannelSet {
    pub fn link(&self, id: LinkId) -> &Link {
        match id {
            LinkId::Sr => &self.sr,
            LinkId::Rd => &self.rd,
            LinkId::Sd => &self.sd,
            LinkId::Rr => &self.rr,
        }
    }

    pub fn link_mut(&mut self, id: LinkId) -> &mut Link {
        match id {
            LinkId::Sr => &mut self.sr,
            LinkId::Rd => &mut self.rd,
            LinkId::Sd => &mut self.sd,
            LinkId::Rr => &mut self.rr,
        }
    }

    /// Channels whose estimates are declared exact (error covariances zero).
    pub fn without_csi_error(&self) -> Self {
        let mut out = self.clone();
        for id in LinkId::ALL {
            let l = out.link_mut(id);
            l.true_h = l.est.clone();
            l.c_rx.fill(cr(0.0));
            l.c_tx.fill(cr(0.0));
        }
        out
    }

    /// Channels with the self-interference path removed entirely.
    pub fn without_self_interference(&self) -> Self {
        let mut out = self.clone();
        let (m, n) = out.rr.est.shape();
        out.rr = Link::exact(CMat::zeros(m, n));
        out
    }

    pub fn check_dims(&self, cfg: &SystemConfig) -> Result<()> {
        for id in LinkId::ALL {
            let (m, n) = cfg.link_dims(id);
            let l = self.link(id);
            if l.est.shape() != (m, n)
                || l.true_h.shape() != (m, n)
                || l.c_rx.shape() != (m, m)
                || l.c_tx.shape() != (n, n)
            {
                return Err(Error::Dimension(format!("link {id:?} does not match the configuration")));
            }
        }
        Ok(())
    }
}

/// Seedable random source.
///
/// The generator is ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`) seeded
/// through `seed_from_u64`, so a given seed reproduces the same stream on
/// every platform and build.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

/// SplitMix64 finalizer, used to derive well-separated sub-seeds.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for one Monte Carlo trial.
    pub fn for_trial(master: u64, trial: u64) -> Self {
        Self::new(mix_seed(master, trial))
    }

    /// Independent child stream; the parent advances by one draw.
    pub fn fork(&mut self) -> Self {
        Self::new(self.rng.next_u64())
    }

    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Circularly symmetric complex Gaussian with the given variance.
    pub fn complex_normal(&mut self, variance: f64) -> num_complex::Complex64 {
        let s = (variance / 2.0).sqrt();
        c64(s * self.gaussian(), s * self.gaussian())
    }

    /// Matrix of i.i.d. `CN(0, variance)` entries.
    pub fn cn_matrix(&mut self, rows: usize, cols: usize, variance: f64) -> CMat {
        CMat::from_fn(rows, cols, |_, _| self.complex_normal(variance))
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Error covariances of a channel estimate obtained from `T` pilot symbols:
///
/// `C_rx = (σ²/P + (2κ/N) H̃H̃^H + (2κ/N) diag(H̃H̃^H)) / (2T)`, `C_tx = I`,
///
/// with `M×N` the link shape, σ² the receiver noise, `P` the transmit budget,
/// and `κ` the mean of the link's transmit and receive distortion coefficients.
pub fn csi_error_cov(cfg: &SystemConfig, est: &CMat, link: LinkId) -> (CMat, CMat) {
    let (m, n) = est.shape();
    let (sigma2, p_max, k_tx, b_rx) = link.training_params(cfg);
    let kappa = 0.5 * (k_tx + b_rx);
    let gram = est * est.adjoint();
    let w = 2.0 * kappa / n as f64;
    let c_rx = (identity(m) * cr(sigma2 / p_max) + &gram * cr(w) + diag_part(&gram) * cr(w))
        * cr(1.0 / (2.0 * cfg.training_len));
    (c_rx, identity(n))
}

/// Fading draw for one link: Rayleigh for sr/rd/sd, Rician for rr.
pub fn draw_fading(cfg: &SystemConfig, link: LinkId, rng: &mut RandomStream) -> CMat {
    let (m, n) = cfg.link_dims(link);
    match link {
        LinkId::Sr => rng.cn_matrix(m, n, cfg.rho_sr),
        LinkId::Rd => rng.cn_matrix(m, n, cfg.rho_rd),
        LinkId::Sd => rng.cn_matrix(m, n, cfg.rho_sd),
        LinkId::Rr => {
            let k = cfg.k_rician;
            let mean = (cfg.rho_rr * k / (1.0 + k)).sqrt();
            let scatter = rng.cn_matrix(m, n, cfg.rho_rr / (1.0 + k));
            scatter.map(|z| z + cr(mean))
        }
    }
}

/// Draws all four links.
///
/// The fading law generates the channel estimate available to the designer;
/// the error covariance follows from that estimate, and the true channel is
/// the estimate plus an independent error draw. This keeps the error
/// uncorrelated with the estimate, which is what the analysis assumes.
pub fn draw_channels(cfg: &SystemConfig, rng: &mut RandomStream) -> Result<ChannelSet> {
    let mut make = |id: LinkId| -> Result<Link> {
        let est = draw_fading(cfg, id, rng);
        let (c_rx, c_tx) = csi_error_cov(cfg, &est, id);
        let mut link = Link {
            true_h: est.clone(),
            est,
            c_rx,
            c_tx,
        };
        link.true_h = link.sample_true(rng)?;
        Ok(link)
    };
    Ok(ChannelSet {
        sr: make(LinkId::Sr)?,
        rd: make(LinkId::Rd)?,
        sd: make(LinkId::Sd)?,
        rr: make(LinkId::Rr)?,
    })
}

/// Recomputes every error covariance for a new configuration while keeping
/// the estimates; used by sweeps where only `T`, σ² or κ change.
pub fn recompute_error_cov(cfg: &SystemConfig, channels: &ChannelSet) -> ChannelSet {
    let mut out = channels.clone();
    for id in LinkId::ALL {
        let l = out.link_mut(id);
        let (c_rx, c_tx) = csi_error_cov(cfg, &l.est, id);
        l.c_rx = c_rx;
        l.c_tx = c_tx;
    }
    out
}
