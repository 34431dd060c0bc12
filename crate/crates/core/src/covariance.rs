//! Closed-form second-order analysis of the relay link.
//!
//! Everything here is evaluated on the channel *estimates*; the CSI error
//! enters only through the `tr(C_tx ·) C_rx` terms, which are the ensemble
//! average of the error's contribution. Distortion terms are kept to first
//! order in the coefficients.
//!
//! The relay transmit covariance is the fixed point of
//! `M_out = G M1(F, M_out) G^H`. Vectorizing turns it into the linear system
//! `(I − (G*⊗G) B) vec(M_out) = (G*⊗G)(I + β_r D) vec(M_in0)`, solved directly
//! by [`solve_mout`].

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_jittered, cr, diag_part, hermitian_eigen, hermitian_part, identity, inverse_hpd, kron,
    log_det_hpd, solve_linear, spectral_radius, trace_re, unvec, vec, CMat, SelectionMatrix,
};
use crate::system::{ChannelSet, Link, SystemConfig};

/// Loops with spectral radius at or above this margin are reported unstable.
pub const LOOP_STABILITY_MARGIN: f64 = 1e-6;

/// The tunable matrices of the link.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVariables {
    /// Source precoder, `N_s × d`.
    pub precoder: CMat,
    /// Relay amplification matrix, `N_r × M_r`.
    pub relay_gain: CMat,
    /// Destination equalizer, `M_d × d`.
    pub equalizer: CMat,
}

impl DesignVariables {
    pub fn check_dims(&self, cfg: &SystemConfig) -> Result<()> {
        let ok = self.precoder.shape() == (cfg.n_s, cfg.d)
            && self.relay_gain.shape() == (cfg.n_r, cfg.m_r)
            && self.equalizer.shape() == (cfg.m_d, cfg.d);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("design variables do not match the configuration".into()))
        }
    }
}

/// The relay's input-to-output covariance map.
#[derive(Debug, Clone)]
pub struct RelayTransfer {
    /// `Θ`, mapping `vec(M_in0)` to `vec(E{r_out r_out^H})`; `N_r² × M_r²`.
    pub theta: CMat,
    /// Loop operator `B`; `M_r² × N_r²`.
    pub b: CMat,
    /// Condition estimate of `I − (G*⊗G) B`.
    pub loop_condition: f64,
    /// Spectral radius of `(G*⊗G) B`.
    pub loop_radius: f64,
}

fn trace_with(c_tx: &CMat, x: &CMat) -> f64 {
    (c_tx * x).trace().re
}

fn check_shape(x: &CMat, shape: (usize, usize), what: &str) -> Result<()> {
    if x.shape() == shape {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {}x{}",
            x.nrows(),
            x.ncols(),
            shape.0,
            shape.1
        )))
    }
}

/// Covariance `Q + κ diag(Q)` of a distorted transmitter with intended covariance `Q`.
pub fn with_tx_distortion(q: &CMat, kappa: f64) -> CMat {
    q + diag_part(q) * cr(kappa)
}

/// Received covariance through an imperfectly known link:
/// `H̃ Q H̃^H + C_rx tr(C_tx Q)`.
pub fn through_link(link: &Link, q: &CMat) -> CMat {
    &link.est * q * link.est.adjoint() + &link.c_rx * cr(trace_with(&link.c_tx, q))
}

/// Undistorted relay input covariance with the relay silent:
/// `M_in0 = H̃_sr (FF^H + κ_s diag(FF^H)) H̃_sr^H + C_rx,sr tr(C_tx,sr ·) + σ_nr² I`.
pub fn min0(cfg: &SystemConfig, ch: &ChannelSet, f: &CMat) -> Result<CMat> {
    check_shape(f, (cfg.n_s, cfg.d), "precoder")?;
    Ok(hermitian_part(&min0_from_cov(cfg, ch, &(f * f.adjoint()))))
}

/// [`min0`] as a function of the source covariance `Q_s = FF^H`.
///
/// The `*_from_cov` family is real-linear in its covariance arguments plus a
/// constant, and does not symmetrize, so it can be evaluated at the
/// non-Hermitian products the optimizer uses away from consistency.
pub fn min0_from_cov(cfg: &SystemConfig, ch: &ChannelSet, qs: &CMat) -> CMat {
    through_link(&ch.sr, &with_tx_distortion(qs, cfg.kappa_s)) + identity(cfg.m_r) * cr(cfg.sigma2_nr)
}

/// Covariance of the SI-cancelled relay input given `M_in0` and `M_out`.
pub fn m1_from_min0(cfg: &SystemConfig, ch: &ChannelSet, min0: &CMat, m_out: &CMat) -> CMat {
    hermitian_part(&m1_raw(cfg, ch, min0, m_out))
}

fn m1_raw(cfg: &SystemConfig, ch: &ChannelSet, min0: &CMat, m_out: &CMat) -> CMat {
    let rr = &ch.rr;
    let kr = cfg.kappa_r;
    let si_residual = &rr.est * (diag_part(m_out) * cr(kr)) * rr.est.adjoint()
        + &rr.c_rx * cr(trace_with(&rr.c_tx, &with_tx_distortion(m_out, kr)));
    let received = min0 + through_link(rr, m_out);
    min0 + si_residual + diag_part(&received) * cr(cfg.beta_r)
}

/// [`m1`] as a function of `Q_s = FF^H` and `Q_r = M_out`.
pub fn m1_from_cov(cfg: &SystemConfig, ch: &ChannelSet, qs: &CMat, qr: &CMat) -> CMat {
    m1_raw(cfg, ch, &min0_from_cov(cfg, ch, qs), qr)
}

/// `M1(F, M_out)`: covariance of the relay input after SI cancellation.
pub fn m1(cfg: &SystemConfig, ch: &ChannelSet, f: &CMat, m_out: &CMat) -> Result<CMat> {
    check_shape(m_out, (cfg.n_r, cfg.n_r), "relay covariance")?;
    let base = min0(cfg, ch, f)?;
    Ok(m1_from_min0(cfg, ch, &base, m_out))
}

/// Undistorted relay input covariance including the SI leakage,
/// `M_in = M_in0 + H̃_rr M_out H̃_rr^H + C_rx,rr tr(C_tx,rr M_out)`. Its
/// diagonal is the per-chain receive power.
pub fn relay_input_from_cov(cfg: &SystemConfig, ch: &ChannelSet, qs: &CMat, qr: &CMat) -> CMat {
    min0_from_cov(cfg, ch, qs) + through_link(&ch.rr, qr)
}

/// Loop operator
/// `B = κ_r (H*⊗H) D_N + β_r D_M (H*⊗H) + vec(C_rx) vec(C_tx*)^T (I + κ_r D_N) + β_r D_M vec(C_rx) vec(C_tx*)^T`
/// for the self-interference link `H = H̃_rr`.
pub fn build_b(cfg: &SystemConfig, ch: &ChannelSet) -> CMat {
    let rr = &ch.rr;
    let d_n = SelectionMatrix::new(cfg.n_r).expect("n_r >= 1");
    let d_m = SelectionMatrix::new(cfg.m_r).expect("m_r >= 1");
    let hh = kron(&rr.est.conjugate(), &rr.est);
    let outer = vec(&rr.c_rx) * vec(&rr.c_tx.conjugate()).transpose();
    let outer_tx = &outer + d_n.right_mul(&outer) * cr(cfg.kappa_r);
    d_n.right_mul(&hh) * cr(cfg.kappa_r)
        + d_m.left_mul(&hh) * cr(cfg.beta_r)
        + outer_tx
        + d_m.left_mul(&outer) * cr(cfg.beta_r)
}

/// `(G*⊗G)`.
pub fn gain_kron(g: &CMat) -> CMat {
    kron(&g.conjugate(), g)
}

/// Spectral radius of the loop operator `(G*⊗G) B`.
pub fn loop_radius(g: &CMat, b: &CMat) -> f64 {
    spectral_radius(&(gain_kron(g) * b))
}

/// Factored pieces shared by [`relay_transfer`] and [`solve_mout`].
struct LoopSystem {
    gk: CMat,
    b: CMat,
    system: CMat,
    radius: f64,
}

fn loop_system(cfg: &SystemConfig, ch: &ChannelSet, g: &CMat) -> Result<LoopSystem> {
    check_shape(g, (cfg.n_r, cfg.m_r), "relay gain")?;
    let b = build_b(cfg, ch);
    let gk = gain_kron(g);
    let loop_op = &gk * &b;
    let radius = spectral_radius(&loop_op);
    if !(radius < 1.0 - LOOP_STABILITY_MARGIN) {
        return Err(Error::RelayLoopUnstable { spectral_radius: radius });
    }
    let n2 = cfg.n_r * cfg.n_r;
    let system = identity(n2) - loop_op;
    Ok(LoopSystem { gk, b, system, radius })
}

/// The relay transfer function
/// `Θ = (I + κ_r D_N)(I − (G*⊗G)B)^{-1}(G*⊗G)(I + β_r D_M)`.
pub fn relay_transfer(cfg: &SystemConfig, ch: &ChannelSet, g: &CMat) -> Result<RelayTransfer> {
    let ls = loop_system(cfg, ch, g)?;
    let rhs = ls.gk.clone() + SelectionMatrix::new(cfg.m_r).unwrap().right_mul(&ls.gk) * cr(cfg.beta_r);
    let sol = solve_linear(&ls.system, &rhs).map_err(|_| Error::RelayLoopUnstable {
        spectral_radius: ls.radius,
    })?;
    let d_n = SelectionMatrix::new(cfg.n_r).unwrap();
    let theta = &sol.x + d_n.left_mul(&sol.x) * cr(cfg.kappa_r);
    Ok(RelayTransfer {
        theta,
        b: ls.b,
        loop_condition: sol.condition,
        loop_radius: ls.radius,
    })
}

/// Relay transmit covariance (undistorted part) `M_out` from the closed-form loop solve.
pub fn solve_mout(cfg: &SystemConfig, ch: &ChannelSet, f: &CMat, g: &CMat) -> Result<CMat> {
    let base = min0(cfg, ch, f)?;
    solve_mout_from_min0(cfg, ch, &base, g)
}

pub fn solve_mout_from_min0(cfg: &SystemConfig, ch: &ChannelSet, min0: &CMat, g: &CMat) -> Result<CMat> {
    let ls = loop_system(cfg, ch, g)?;
    let v = vec(min0);
    let d_m = SelectionMatrix::new(cfg.m_r).expect("m_r >= 1");
    let scaled = &v + d_m.apply(&v) * cr(cfg.beta_r);
    let rhs = &ls.gk * CMat::from_column_slice(v.len(), 1, scaled.as_slice());
    let sol = solve_linear(&ls.system, &rhs).map_err(|_| Error::RelayLoopUnstable {
        spectral_radius: ls.radius,
    })?;
    let m_out = hermitian_part(&unvec(&sol.x.column(0).into_owned(), cfg.n_r, cfg.n_r)?);
    let (values, _) = hermitian_eigen(&m_out);
    let lo = values[0];
    let hi = values[values.len() - 1];
    if lo < -1e-8 * hi.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd { min_eigenvalue: lo });
    }
    Ok(m_out)
}

/// `E{r_out r_out^H} = M_out + κ_r diag(M_out)`.
pub fn relay_tx_cov(cfg: &SystemConfig, m_out: &CMat) -> CMat {
    with_tx_distortion(m_out, cfg.kappa_r)
}

/// Average relay transmit power `(1 + κ_r) tr(M_out)`.
pub fn relay_power(cfg: &SystemConfig, m_out: &CMat) -> f64 {
    (1.0 + cfg.kappa_r) * trace_re(m_out)
}

/// Average source transmit power `(1 + κ_s) ‖F‖²`.
pub fn source_power(cfg: &SystemConfig, f: &CMat) -> f64 {
    (1.0 + cfg.kappa_s) * f.norm_squared()
}

/// `M2(F, M_out)`: total received covariance at the destination.
///
/// Both relay-side distortion terms use `κ_r`, and the receive distortion
/// `β_d diag(·)` applies to the undistorted sum of direct link, relay link
/// and noise.
pub fn m2(cfg: &SystemConfig, ch: &ChannelSet, f: &CMat, m_out: &CMat) -> Result<CMat> {
    check_shape(f, (cfg.n_s, cfg.d), "precoder")?;
    check_shape(m_out, (cfg.n_r, cfg.n_r), "relay covariance")?;
    Ok(hermitian_part(&m2_from_cov(cfg, ch, &(f * f.adjoint()), m_out)))
}

/// [`m2`] as a function of `Q_s = FF^H` and `Q_r = M_out`.
pub fn m2_from_cov(cfg: &SystemConfig, ch: &ChannelSet, qs: &CMat, qr: &CMat) -> CMat {
    let noise = identity(cfg.m_d) * cr(cfg.sigma2_nd);
    let direct = through_link(&ch.sd, &with_tx_distortion(qs, cfg.kappa_s));
    let relayed = through_link(&ch.rd, &with_tx_distortion(qr, cfg.kappa_r));
    let undistorted = through_link(&ch.sd, qs) + through_link(&ch.rd, qr) + &noise;
    direct + relayed + noise + diag_part(&undistorted) * cr(cfg.beta_d)
}

/// `H_eq = H̃_rd G H̃_sr`.
pub fn equivalent_channel(ch: &ChannelSet, g: &CMat) -> CMat {
    &ch.rd.est * g * &ch.sr.est
}

/// MSE matrix for a given destination covariance `M2`.
pub fn mse_from_m2(ch: &ChannelSet, m2: &CMat, f: &CMat, g: &CMat, c: &CMat) -> CMat {
    let desired = equivalent_channel(ch, g) * f;
    let cross = c.adjoint() * &desired;
    let d = f.ncols();
    hermitian_part(&(c.adjoint() * m2 * c + identity(d) - &cross - cross.adjoint()))
}

/// `E(F, G, C) = C^H M2 C + I − C^H H_eq F − F^H H_eq^H C`.
pub fn mse_matrix(cfg: &SystemConfig, ch: &ChannelSet, f: &CMat, g: &CMat, c: &CMat) -> Result<CMat> {
    check_shape(c, (cfg.m_d, cfg.d), "equalizer")?;
    let m_out = solve_mout(cfg, ch, f, g)?;
    let m2 = m2(cfg, ch, f, &m_out)?;
    Ok(mse_from_m2(ch, &m2, f, g, c))
}

/// `tr E(F, G, C)`.
pub fn mse(cfg: &SystemConfig, ch: &ChannelSet, design: &DesignVariables) -> Result<f64> {
    Ok(trace_re(&mse_matrix(
        cfg,
        ch,
        &design.precoder,
        &design.relay_gain,
        &design.equalizer,
    )?))
}

/// MMSE equalizer `C* = M2^{-1} H_eq F`.
pub fn mmse_receiver(cfg: &SystemConfig, ch: &ChannelSet, f: &CMat, g: &CMat) -> Result<CMat> {
    let m_out = solve_mout(cfg, ch, f, g)?;
    let m2 = m2(cfg, ch, f, &m_out)?;
    mmse_from_m2(ch, &m2, f, g)
}

pub fn mmse_from_m2(ch: &ChannelSet, m2: &CMat, f: &CMat, g: &CMat) -> Result<CMat> {
    let desired = equivalent_channel(ch, g) * f;
    let chol = hermitian_part(m2)
        .cholesky()
        .ok_or_else(|| Error::Domain("destination covariance is not positive definite".into()))?;
    Ok(chol.solve(&desired))
}

/// Achievable rate `W log2 |I + F^H H_eq^H Γ^{-1} H_eq F|` with
/// `Γ = M2 − H_eq F F^H H_eq^H` the interference-plus-noise covariance.
pub fn achievable_rate(cfg: &SystemConfig, ch: &ChannelSet, f: &CMat, g: &CMat) -> Result<f64> {
    let m_out = solve_mout(cfg, ch, f, g)?;
    let m2 = m2(cfg, ch, f, &m_out)?;
    rate_from_m2(cfg, ch, &m2, f, g)
}

pub fn rate_from_m2(cfg: &SystemConfig, ch: &ChannelSet, m2: &CMat, f: &CMat, g: &CMat) -> Result<f64> {
    let desired = equivalent_channel(ch, g) * f;
    let gamma = hermitian_part(&(m2 - &desired * desired.adjoint()));
    let chol = gamma.cholesky().ok_or_else(|| {
        Error::Domain("interference-plus-noise covariance is not positive definite".into())
    })?;
    let whitened = chol.solve(&desired);
    let sinr = identity(f.ncols()) + desired.adjoint() * whitened;
    Ok(cfg.bandwidth * log_det_hpd(&sinr)? / std::f64::consts::LN_2)
}

/// Summary of a design under a given model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub mse: f64,
    /// Rate (bits/s) attained with the MMSE receiver for the same `F, G`.
    pub rate: f64,
    pub source_power: f64,
    pub relay_power: f64,
}

/// Evaluates MSE, rate and transmit powers of a design.
pub fn evaluate(cfg: &SystemConfig, ch: &ChannelSet, design: &DesignVariables) -> Result<Evaluation> {
    design.check_dims(cfg)?;
    let (f, g) = (&design.precoder, &design.relay_gain);
    let m_out = solve_mout(cfg, ch, f, g)?;
    let m2 = m2(cfg, ch, f, &m_out)?;
    let e = mse_from_m2(ch, &m2, f, g, &design.equalizer);
    Ok(Evaluation {
        mse: trace_re(&e),
        rate: rate_from_m2(cfg, ch, &m2, f, g)?,
        source_power: source_power(cfg, f),
        relay_power: relay_power(cfg, &m_out),
    })
}

/// Largest scale `t ∈ (0, 1]` such that `t·G` meets the relay power budget
/// and keeps the loop stable, found by bisection. Returns 1 when `G` already
/// complies.
pub fn feasible_gain_scale(cfg: &SystemConfig, ch: &ChannelSet, f: &CMat, g: &CMat) -> Result<f64> {
    let ok = |t: f64| -> bool {
        match solve_mout(cfg, ch, f, &(g * cr(t))) {
            Ok(m) => relay_power(cfg, &m) <= cfg.p_r_max,
            Err(_) => false,
        }
    };
    if ok(1.0) {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return Err(Error::RelayLoopUnstable { spectral_radius: f64::NAN });
    }
    Ok(lo)
}

/// Scales `F` and `G` into the true power budgets.
pub fn enforce_power(cfg: &SystemConfig, ch: &ChannelSet, design: &DesignVariables) -> Result<DesignVariables> {
    let mut out = design.clone();
    let p = source_power(cfg, &out.precoder);
    if p > cfg.p_s_max {
        out.precoder *= cr((cfg.p_s_max / p).sqrt() * (1.0 - 1e-12));
    }
    let t = feasible_gain_scale(cfg, ch, &out.precoder, &out.relay_gain)?;
    out.relay_gain *= cr(t);
    Ok(out)
}

/// Cholesky factor of a covariance, used to seed the auxiliary factors of the optimizer.
pub fn covariance_factor(x: &CMat) -> Result<CMat> {
    cholesky_jittered(x, 1e-12)
}

/// `M2^{-1}` helper shared by several receivers.
pub fn inverse_cov(x: &CMat) -> Result<CMat> {
    inverse_hpd(x)
}
