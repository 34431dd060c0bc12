//! Penalty dual decomposition for impairment-aware transceiver design.
//!
//! The lifted problem of [`blocks`] is solved by a dual loop. The inner loop
//! alternates exact minimization of the augmented Lagrangian
//!
//! `AL = f(L4) + 1/(2ρ) Σ_i ‖r_i + ρ λ_i‖²`
//!
//! over the two blocks. Each block update is a convex quadratic program
//! because every residual `r_i` is affine in the active block. The outer
//! loop then either shrinks `ρ` (when the violation `ζ = Σ_i ‖r_i‖²` did not
//! drop enough) or takes a multiplier step `λ_i ← λ_i + r_i / ρ`.
//!
//! The objective `f` is the (sum) MSE `Σ_l ‖L4_l‖²`, or the weighted-MMSE
//! surrogate `Σ_l tr(L4_l^H S_l L4_l) − log|S_l| − d` for rate maximization,
//! where the weights `S_l` form a third block with a closed-form update.

pub mod blocks;
pub mod scaling;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariance::{
    covariance_factor, m1, m2, mmse_receiver, mse_matrix, relay_power, solve_mout, DesignVariables,
};
use crate::error::{Error, Result};
use crate::linalg::{cr, diag_part, herm_sqrt, hermitian_eigen, hermitian_part, inverse_hpd, log_det_hpd, trace_re, CMat};
use crate::qcqp::{self, linear_jacobian, Constraint, Method, QuadraticProgram, SolveOptions, SolveStatus};
use crate::system::{ChannelSet, SystemConfig};

pub use blocks::{block_layout, residuals, Block, Model, PddBlocks, UserBlocks};
pub use scaling::Scaling;

/// Tuning of the dual loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PddConfig {
    /// Initial penalty parameter.
    pub rho0: f64,
    /// Penalty shrink factor in `(0, 1)`.
    pub c_rho: f64,
    /// Multipliers are updated when `ζ < max(zeta_decrease · ζ_prev, zeta_th)`.
    pub zeta_decrease: f64,
    /// Termination threshold on the violation.
    pub zeta_th: f64,
    /// Relative change of the augmented Lagrangian that ends an inner loop.
    pub eps_inner: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Rate maximization also requires the relative change of the MSE
    /// weights between outer iterations to fall below this value.
    pub weight_tol: f64,
    /// Outer iteration cap for rate maximization, whose weights settle more
    /// slowly than the violation.
    pub rate_max_outer: usize,
    /// Tolerance and iteration cap handed to each block subproblem.
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub qp_method: Method,
}

impl Default for PddConfig {
    fn default() -> Self {
        Self {
            rho0: 1e-2,
            c_rho: 0.6,
            zeta_decrease: 0.9,
            zeta_th: 1e-5,
            eps_inner: 1e-6,
            max_inner: 100,
            max_outer: 60,
            weight_tol: 1e-3,
            rate_max_outer: 150,
            qp_tol: qcqp::DEFAULT_TOL,
            qp_max_iter: qcqp::DEFAULT_MAX_ITER,
            qp_method: Method::DualNewton,
        }
    }
}

impl PddConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho0 > 0.0
            && self.c_rho > 0.0
            && self.c_rho < 1.0
            && self.zeta_decrease > 0.0
            && self.zeta_decrease <= 1.0
            && self.zeta_th > 0.0
            && self.eps_inner > 0.0
            && self.max_inner >= 1
            && self.max_outer >= 1
            && self.weight_tol > 0.0
            && self.rate_max_outer >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings: {self:?}")))
        }
    }

    fn qp_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.qp_tol,
            max_iter: self.qp_max_iter,
            method: self.qp_method,
            ..SolveOptions::default()
        }
    }
}

/// Multipliers, one matrix per constraint group in [`residuals`] order, and the penalty parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub multipliers: Vec<CMat>,
    pub rho: f64,
}

impl DualState {
    /// Zero multipliers shaped like the residuals at `blocks`.
    pub fn zeros(model: &Model, blocks: &PddBlocks, rho: f64) -> Self {
        let multipliers = residuals(model, blocks)
            .iter()
            .map(|r| CMat::zeros(r.nrows(), r.ncols()))
            .collect();
        Self { multipliers, rho }
    }
}

/// Instantaneous per-chain power limits at the relay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaprBudget {
    /// Peak transmit power per relay transmit chain.
    pub p_tx: f64,
    /// Peak receive power per relay receive chain.
    pub p_rx: f64,
    /// Transmit peak-to-average power ratio.
    pub omega_tx: f64,
    /// Receive peak-to-average power ratio.
    pub omega_rx: f64,
}

impl PaprBudget {
    /// Bound on `‖row_l(J)‖²` for every transmit chain `l`.
    pub fn row_bound(&self, cfg: &SystemConfig) -> f64 {
        self.p_tx / (self.omega_tx * (1.0 + cfg.kappa_r))
    }

    /// Bound on each diagonal entry of the relay receive covariance.
    pub fn chain_bound(&self, cfg: &SystemConfig) -> f64 {
        self.p_rx / (self.omega_rx * (1.0 + cfg.beta_r))
    }
}

/// Constraints beyond the average power budgets.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExtraConstraints {
    pub papr: Option<PaprBudget>,
    /// Cap on the received self-interference power `tr(H̃_rr M_out H̃_rr^H)`.
    pub si_power_cap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Sum of the users' MSE.
    Mse,
    /// Sum rate through the weighted-MMSE surrogate.
    Rate,
}

/// A complete problem instance.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub model: Model<'a>,
    pub objective: Objective,
    pub extra: ExtraConstraints,
}

impl<'a> Problem<'a> {
    pub fn mse(cfg: &'a SystemConfig, users: &'a [ChannelSet]) -> Self {
        Self {
            model: Model::new(cfg, users),
            objective: Objective::Mse,
            extra: ExtraConstraints::default(),
        }
    }
}

/// MSE weights of the rate surrogate with cached square roots and log-determinants.
#[derive(Debug, Clone, PartialEq)]
pub struct RateWeights {
    pub weights: Vec<CMat>,
    roots: Vec<CMat>,
    log_dets: Vec<f64>,
}

impl RateWeights {
    /// `S_l = E_l^{-1}` with `E_l` the MMSE matrix of the precoder and relay
    /// gain held in the blocks. Taking the weights from the model rather than
    /// from the lifted error factor keeps the surrogate bounded below: with
    /// `S = (L4 L4^H)^{-1}` the objective would reduce to `log|L4 L4^H|`,
    /// which the penalty alone cannot keep away from minus infinity.
    pub fn from_design(model: &Model, blocks: &PddBlocks) -> Result<Self> {
        let mut weights = Vec::new();
        let mut roots = Vec::new();
        let mut log_dets = Vec::new();
        let (f, g) = (&blocks.precoder, &blocks.relay_gain);
        for ch in model.users {
            let c = mmse_receiver(model.cfg, ch, f, g)?;
            let e = mse_matrix(model.cfg, ch, f, g, &c)?;
            let s = inverse_hpd(&hermitian_part(&e))?;
            roots.push(herm_sqrt(&s)?);
            log_dets.push(log_det_hpd(&s)?);
            weights.push(s);
        }
        Ok(Self {
            weights,
            roots,
            log_dets,
        })
    }

    /// Mean eigenvalue over all users' weights.
    pub fn mean_eigenvalue(&self) -> f64 {
        let (sum, dim) = self
            .weights
            .iter()
            .fold((0.0, 0), |(s, n), w| (s + trace_re(w), n + w.nrows()));
        sum / dim as f64
    }

    /// Largest relative Frobenius change of any user's weight.
    pub fn relative_change(&self, previous: &RateWeights) -> f64 {
        self.weights
            .iter()
            .zip(&previous.weights)
            .map(|(a, b)| (a - b).norm() / b.norm())
            .fold(0.0, f64::max)
    }
}

fn objective_residuals(blocks: &PddBlocks, weights: Option<&RateWeights>) -> Vec<CMat> {
    blocks
        .users
        .iter()
        .enumerate()
        .map(|(l, u)| match weights {
            Some(w) => &w.roots[l] * &u.error_factor,
            None => u.error_factor.clone(),
        })
        .collect()
}

fn objective_constant(blocks: &PddBlocks, weights: Option<&RateWeights>) -> f64 {
    match weights {
        Some(w) => w
            .log_dets
            .iter()
            .zip(&blocks.users)
            .map(|(ld, u)| -ld - u.error_factor.nrows() as f64)
            .sum(),
        None => 0.0,
    }
}

/// Sum of squared Frobenius norms of all constraint residuals.
pub fn violation(model: &Model, blocks: &PddBlocks) -> f64 {
    residuals(model, blocks).iter().map(|r| r.norm_squared()).sum()
}

/// Objective plus `1/(2ρ) Σ ‖r_i + ρ λ_i‖²`.
pub fn augmented_lagrangian(model: &Model, blocks: &PddBlocks, duals: &DualState, weights: Option<&RateWeights>) -> f64 {
    let obj: f64 = objective_residuals(blocks, weights).iter().map(|r| r.norm_squared()).sum::<f64>()
        + objective_constant(blocks, weights);
    let rho = duals.rho;
    let pen: f64 = residuals(model, blocks)
        .iter()
        .zip(&duals.multipliers)
        .map(|(r, l)| (r + l * cr(rho)).norm_squared())
        .sum();
    obj + pen / (2.0 * rho)
}

/// Real-linear map of the relay input diagonal entry `m`, so that
/// `‖map·x‖² + σ_nr²` is entry `m` of
/// `diag(M_in0 + H̃_rr (JJ^H + κ_r diag(JJ^H)) H̃_rr^H + C_rx,rr tr(C_tx,rr (JJ^H + κ_r diag(JJ^H))))`
/// with `x` the stacked first block.
fn receive_chain_terms(cfg: &SystemConfig, ch: &ChannelSet, vals: &[CMat], m: usize) -> Result<CMat> {
    let mut terms: Vec<num_complex::Complex64> = Vec::new();
    let mut push_link = |h: &CMat, c_rx: &CMat, c_tx_root: &CMat, c_tx: &CMat, x: &CMat, kappa: f64| {
        let hx = h.row(m) * x;
        terms.extend(hx.iter().copied());
        let c_mm = c_rx[(m, m)].re.max(0.0);
        for i in 0..x.nrows() {
            let w = (kappa * h[(m, i)].norm_sqr()).sqrt();
            let wc = (c_mm * kappa * c_tx[(i, i)].re.max(0.0)).sqrt();
            for k in 0..x.ncols() {
                terms.push(x[(i, k)] * cr(w));
                terms.push(x[(i, k)] * cr(wc));
            }
        }
        let tx = c_tx_root * x * cr(c_mm.sqrt());
        terms.extend(tx.iter().copied());
    };
    let sr_root = herm_sqrt(&ch.sr.c_tx)?;
    let rr_root = herm_sqrt(&ch.rr.c_tx)?;
    push_link(&ch.sr.est, &ch.sr.c_rx, &sr_root, &ch.sr.c_tx, &vals[0], cfg.kappa_s);
    push_link(&ch.rr.est, &ch.rr.c_rx, &rr_root, &ch.rr.c_tx, &vals[2], cfg.kappa_r);
    Ok(CMat::from_column_slice(terms.len(), 1, &terms))
}

/// Per-chain receive power at the relay for the given precoder and relay
/// output factor, evaluated directly from the covariance expression.
pub fn relay_receive_chain_power(cfg: &SystemConfig, ch: &ChannelSet, f: &CMat, j: &CMat) -> Vec<f64> {
    let qr = j * j.adjoint();
    let tx = &qr + diag_part(&qr) * cr(cfg.kappa_r);
    let cov = crate::covariance::min0_from_cov(cfg, ch, &(f * f.adjoint()))
        + crate::covariance::through_link(&ch.rr, &tx);
    (0..cfg.m_r).map(|m| cov[(m, m)].re).collect()
}

fn first_block_constraints(problem: &Problem, blocks: &PddBlocks) -> Result<Vec<Constraint>> {
    let cfg = problem.model.cfg;
    let layout = block_layout(blocks, Block::First);
    let mut cons = vec![
        Constraint::Ball {
            vars: vec![0],
            radius: cfg.precoder_budget().sqrt(),
        },
        Constraint::Ball {
            vars: vec![2],
            radius: cfg.relay_budget().sqrt(),
        },
    ];
    let sh = problem.model.shared();
    if let Some(papr) = problem.extra.papr {
        cons.push(Constraint::RowBalls {
            var: 2,
            radii: vec![papr.row_bound(cfg).sqrt(); cfg.n_r],
        });
        for m in 0..cfg.m_r {
            // Channel-dependent factors are fixed; evaluate them once.
            let map = linear_jacobian(&layout, |v| receive_chain_terms(cfg, sh, v, m).expect("PSD error covariances"));
            cons.push(Constraint::Quadratic {
                map,
                offset: cfg.sigma2_nr,
                bound: papr.chain_bound(cfg),
            });
        }
    }
    if let Some(cap) = problem.extra.si_power_cap {
        let map = linear_jacobian(&layout, |v| &sh.rr.est * &v[2]);
        cons.push(Constraint::Quadratic {
            map,
            offset: 0.0,
            bound: cap,
        });
    }
    Ok(cons)
}

/// Outcome of one block update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockUpdateStats {
    pub iterations: usize,
    pub status: SolveStatus,
    pub kkt_residual: f64,
}

/// Exactly minimizes the augmented Lagrangian over one block.
pub fn update_block(
    problem: &Problem,
    blocks: &mut PddBlocks,
    duals: &DualState,
    weights: Option<&RateWeights>,
    block: Block,
    pdd: &PddConfig,
    constraints: &[Constraint],
) -> BlockUpdateStats {
    let model = &problem.model;
    let layout = block_layout(blocks, block);
    let base = blocks.clone();
    let n_obj = base.users.len();
    let rho = duals.rho;
    let mut w = vec![1.0; n_obj];
    w.extend(std::iter::repeat_n(1.0 / (2.0 * rho), model.group_count()));
    let eval = |vals: &[CMat]| -> Vec<CMat> {
        let b = base.with_block(block, vals);
        let mut out = objective_residuals(&b, weights);
        for (r, l) in residuals(model, &b).into_iter().zip(&duals.multipliers) {
            out.push(r + l * cr(rho));
        }
        out
    };
    let cons = match block {
        Block::First => constraints.to_vec(),
        Block::Second => vec![],
    };
    let qp = QuadraticProgram::from_affine(layout.clone(), &w, eval, cons);
    let warm = layout.pack(&base.block_values(block));
    let rep = qcqp::solve(&qp, &pdd.qp_options(), Some(&warm));
    if rep.status == SolveStatus::Converged || qp.objective(&rep.x) <= qp.objective(&warm) {
        blocks.set_block(block, &rep.solution);
    } else {
        log::warn!("block update rejected: {:?} without descent", rep.status);
    }
    BlockUpdateStats {
        iterations: rep.iterations,
        status: rep.status,
        kkt_residual: rep.kkt_residual,
    }
}

/// Which branch of the outer update was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterStep {
    Penalty,
    Multiplier,
}

/// Threshold below which the multipliers are updated rather than the penalty.
pub fn switch_threshold(pdd: &PddConfig, zeta_prev: f64) -> f64 {
    (pdd.zeta_decrease * zeta_prev).max(pdd.zeta_th)
}

/// Penalty shrink when `ζ ≥ threshold`, otherwise `λ_i ← λ_i + r_i / ρ`.
pub fn outer_update(model: &Model, blocks: &PddBlocks, duals: &mut DualState, pdd: &PddConfig, zeta_now: f64, threshold: f64) -> OuterStep {
    if zeta_now >= threshold {
        duals.rho *= pdd.c_rho;
        OuterStep::Penalty
    } else {
        let rho = duals.rho;
        for (l, r) in duals.multipliers.iter_mut().zip(residuals(model, blocks)) {
            *l += r * cr(1.0 / rho);
        }
        OuterStep::Multiplier
    }
}

/// One row of the outer-loop trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub outer_iter: usize,
    pub inner_iters: usize,
    pub zeta: f64,
    pub al_value: f64,
    /// Sum MSE of the current `(F, G, C)` under the design model.
    pub mse: f64,
    /// Penalty parameter used during this outer iteration.
    pub rho: f64,
    /// Relative change of the rate weights at the end of this outer
    /// iteration; zero for MSE minimization.
    pub weight_change: f64,
}

/// History of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub initial_mse: f64,
    pub initial_zeta: f64,
    pub outer: Vec<OuterRecord>,
    /// Augmented Lagrangian at the start of each inner loop followed by its
    /// value after every inner iteration.
    pub inner_al: Vec<Vec<f64>>,
    pub converged: bool,
    /// Block subproblems that stopped at their iteration cap.
    pub qp_max_iter_hits: usize,
}

impl ConvergenceTrace {
    pub fn final_zeta(&self) -> f64 {
        self.outer.last().map(|r| r.zeta).unwrap_or(f64::NAN)
    }

    pub fn final_mse(&self) -> f64 {
        self.outer.last().map(|r| r.mse).unwrap_or(self.initial_mse)
    }

    pub fn outer_iterations(&self) -> usize {
        self.outer.len()
    }

    pub fn total_inner_iterations(&self) -> usize {
        self.outer.iter().map(|r| r.inner_iters).sum()
    }

    /// Largest increase of the augmented Lagrangian between consecutive inner iterations.
    pub fn max_inner_increase(&self) -> f64 {
        self.inner_al
            .iter()
            .flat_map(|al| al.windows(2).map(|w| w[1] - w[0]))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes the outer trace with columns `outer_iter, inner_iters, zeta, al_value, mse, rho, weight_change`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.outer {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes one row per inner iteration: `outer_iter, inner_iter, al_value`.
    pub fn write_inner_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["outer_iter", "inner_iter", "al_value"])?;
        for (k, al) in self.inner_al.iter().enumerate() {
            for (m, v) in al.iter().enumerate() {
                w.write_record([(k + 1).to_string(), m.to_string(), format!("{v:e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Final state of the dual loop, in node units.
#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub blocks: PddBlocks,
    pub duals: DualState,
    pub weights: Option<RateWeights>,
    pub trace: ConvergenceTrace,
}

/// Result of a run: the physical design per user (sharing precoder and
/// relay gain), the final optimizer state in node units, and the trace.
#[derive(Debug, Clone)]
pub struct PddOutcome {
    pub designs: Vec<DesignVariables>,
    pub blocks: PddBlocks,
    pub duals: DualState,
    pub weights: Option<RateWeights>,
    pub trace: ConvergenceTrace,
    pub scaling: Scaling,
}

fn descending_eigvecs(x: &CMat) -> CMat {
    let (_, v) = hermitian_eigen(x);
    let n = v.ncols();
    CMat::from_fn(v.nrows(), n, |i, j| v[(i, n - 1 - j)])
}

/// Whether a precoder and relay covariance meet every constraint of the problem.
fn admissible(problem: &Problem, f: &CMat, m_out: &CMat) -> bool {
    let cfg = problem.model.cfg;
    let sh = problem.model.shared();
    let margin = 1.0 - 1e-9;
    if relay_power(cfg, m_out) > cfg.p_r_max * margin {
        return false;
    }
    if let Some(cap) = problem.extra.si_power_cap {
        if trace_re(&(&sh.rr.est * m_out * sh.rr.est.adjoint())) > cap * margin {
            return false;
        }
    }
    if let Some(papr) = problem.extra.papr {
        let row = papr.row_bound(cfg) * margin;
        if (0..cfg.n_r).any(|l| m_out[(l, l)].re > row) {
            return false;
        }
        let j = covariance_factor(m_out).unwrap_or_else(|_| CMat::zeros(cfg.n_r, cfg.n_r));
        let chain = papr.chain_bound(cfg) * margin;
        if relay_receive_chain_power(cfg, sh, f, &j).iter().any(|&p| p > chain) {
            return false;
        }
    }
    true
}

/// Largest `t` in a doubling-then-bisection search with `ok(t)`, assuming `ok` is monotone.
fn largest_admissible(ok: impl Fn(f64) -> bool) -> f64 {
    if !ok(1e-300) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut grow = 0;
    while ok(hi) && grow < 200 {
        lo = hi;
        hi *= 2.0;
        grow += 1;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Consistent starting point.
///
/// The precoder uses the strongest right singular directions of the
/// source-relay channel at full power. The relay gain maps the strongest
/// receive directions onto the strongest transmit directions towards the
/// destinations and is scaled to the largest admissible gain. The
/// equalizers are MMSE and every auxiliary variable takes its consistent
/// value, so the violation is zero up to round-off.
pub fn init_blocks(problem: &Problem) -> Result<PddBlocks> {
    let model = &problem.model;
    let cfg = model.cfg;
    let sh = model.shared();
    let d = cfg.d;
    let v_sr = descending_eigvecs(&(sh.sr.est.adjoint() * &sh.sr.est));
    let mut f = v_sr.columns(0, d).into_owned() * cr((cfg.precoder_budget() / d as f64).sqrt());

    // Shrink the precoder when per-chain receive limits bind even with a silent relay.
    let zero_relay = CMat::zeros(cfg.n_r, cfg.n_r);
    if !admissible(problem, &f, &zero_relay) {
        let base = f.clone();
        let t = largest_admissible(|t| t <= 1.0 && admissible(problem, &(&base * cr(t)), &zero_relay));
        f = base * cr(t);
    }

    let k = cfg.n_r.min(cfg.m_r);
    let mut rd_gram = CMat::zeros(cfg.n_r, cfg.n_r);
    for ch in model.users {
        rd_gram += ch.rd.est.adjoint() * &ch.rd.est;
    }
    let v_rd = descending_eigvecs(&rd_gram);
    let u_sr = descending_eigvecs(&(&sh.sr.est * sh.sr.est.adjoint()));
    let direction = v_rd.columns(0, k) * u_sr.columns(0, k).adjoint();
    let ok = |t: f64| match solve_mout(cfg, sh, &f, &(&direction * cr(t))) {
        Ok(m) => admissible(problem, &f, &m),
        Err(_) => false,
    };
    let t = largest_admissible(ok);
    if t <= 0.0 {
        return Err(Error::RelayLoopUnstable {
            spectral_radius: f64::NAN,
        });
    }
    let g = &direction * cr(t);
    consistent_blocks(model, &f, &g)
}

/// Blocks at which every constraint holds for the given precoder and relay
/// gain, with MMSE equalizers.
pub fn consistent_blocks(model: &Model, f: &CMat, g: &CMat) -> Result<PddBlocks> {
    let cfg = model.cfg;
    let sh = model.shared();
    let m_out = solve_mout(cfg, sh, f, g)?;
    let l1 = covariance_factor(&m1(cfg, sh, f, &m_out)?)?;
    let j = g * &l1;
    let l5 = &sh.sr.est * f;
    let mut users = Vec::with_capacity(model.users.len());
    for ch in model.users {
        let c = mmse_receiver(cfg, ch, f, g)?;
        let l2 = covariance_factor(&m2(cfg, ch, f, &m_out)?)?;
        let l3 = c.adjoint() * &l2;
        let l4 = covariance_factor(&mse_matrix(cfg, ch, f, g, &c)?)?;
        let l6 = &ch.rd.est * g * &l5;
        users.push(UserBlocks {
            equalizer: c,
            dest_factor_twin: l2.clone(),
            dest_factor: l2,
            equalized_factor_twin: l3.clone(),
            equalized_factor: l3,
            error_factor_twin: l4.clone(),
            error_factor: l4,
            dest_signal: l6,
        });
    }
    Ok(PddBlocks {
        precoder: f.clone(),
        precoder_twin: f.clone(),
        relay_gain: g.clone(),
        relay_out_twin: j.clone(),
        relay_out: j,
        relay_in_factor_twin: l1.clone(),
        relay_in_factor: l1,
        relay_signal: l5,
        users,
    })
}

/// Sum MSE of the `(F, G, C_l)` held in the blocks, or NaN when the relay loop is unstable.
pub fn blocks_mse(model: &Model, blocks: &PddBlocks) -> f64 {
    model
        .users
        .iter()
        .zip(&blocks.users)
        .map(|(ch, u)| {
            mse_matrix(model.cfg, ch, &blocks.precoder, &blocks.relay_gain, &u.equalizer)
                .map(|e| trace_re(&e))
                .unwrap_or(f64::NAN)
        })
        .sum()
}

/// Runs the dual loop from [`init_blocks`].
///
/// The problem is given in physical units; the loop itself runs in the node
/// units of [`Scaling::for_problem`], so the violation threshold is a
/// relative accuracy on order-one quantities.
pub fn run(problem: &Problem, pdd: &PddConfig) -> Result<PddOutcome> {
    pdd.validate()?;
    let model = &problem.model;
    model.cfg.validate()?;
    for ch in model.users {
        ch.check_dims(model.cfg)?;
    }
    let scaling = Scaling::for_problem(model.cfg, model.users);
    let cfg_n = scaling.config(model.cfg);
    let users_n: Vec<ChannelSet> = model.users.iter().map(|ch| scaling.channels(ch)).collect();
    let normalized = Problem {
        model: Model::new(&cfg_n, &users_n),
        objective: problem.objective,
        extra: scaling.extra(&problem.extra),
    };
    let start = init_blocks(&normalized)?;
    let out = run_from(&normalized, pdd, start)?;
    let designs = extract_designs(problem, &scaling, &out.blocks)?;
    Ok(PddOutcome {
        designs,
        blocks: out.blocks,
        duals: out.duals,
        weights: out.weights,
        trace: out.trace,
        scaling,
    })
}

/// Runs the dual loop from a given starting point. No unit conversion
/// happens here: `problem` and `blocks` must already share units.
pub fn run_from(problem: &Problem, pdd: &PddConfig, mut blocks: PddBlocks) -> Result<LoopOutcome> {
    let model = &problem.model;
    let mut weights = match problem.objective {
        Objective::Rate => Some(RateWeights::from_design(model, &blocks)?),
        Objective::Mse => None,
    };
    // The weighted objective is the MSE objective scaled by the weights, so
    // the penalty starts scaled the same way to keep their balance.
    let rho0 = match &weights {
        Some(w) => pdd.rho0 / w.mean_eigenvalue(),
        None => pdd.rho0,
    };
    let mut duals = DualState::zeros(model, &blocks, rho0);
    let constraints = first_block_constraints(problem, &blocks)?;
    let mut trace = ConvergenceTrace {
        initial_mse: blocks_mse(model, &blocks),
        initial_zeta: violation(model, &blocks),
        ..Default::default()
    };
    let mut zeta_prev = trace.initial_zeta;
    let max_outer = match problem.objective {
        Objective::Rate => pdd.rate_max_outer,
        Objective::Mse => pdd.max_outer,
    };
    for outer in 1..=max_outer {
        let rho = duals.rho;
        let mut al = augmented_lagrangian(model, &blocks, &duals, weights.as_ref());
        let mut history = vec![al];
        let mut inner = 0;
        while inner < pdd.max_inner {
            inner += 1;
            for block in [Block::First, Block::Second] {
                let stats = update_block(problem, &mut blocks, &duals, weights.as_ref(), block, pdd, &constraints);
                if stats.status == SolveStatus::MaxIter {
                    trace.qp_max_iter_hits += 1;
                }
            }
            let next = augmented_lagrangian(model, &blocks, &duals, weights.as_ref());
            history.push(next);
            let done = (next - al).abs() <= pdd.eps_inner * (1.0 + next.abs());
            al = next;
            if done {
                break;
            }
        }
        let zeta = violation(model, &blocks);
        let mut weight_change = 0.0;
        if let Some(old) = &weights {
            let new = RateWeights::from_design(model, &blocks)?;
            weight_change = new.relative_change(old);
            weights = Some(new);
        }
        trace.inner_al.push(history);
        trace.outer.push(OuterRecord {
            outer_iter: outer,
            inner_iters: inner,
            zeta,
            al_value: al,
            mse: blocks_mse(model, &blocks),
            rho,
            weight_change,
        });
        log::debug!("outer {outer}: zeta {zeta:e}, AL {al:e}, rho {rho:e}, inner {inner}, weights {weight_change:e}");
        if zeta < pdd.zeta_th && weight_change < pdd.weight_tol {
            trace.converged = true;
            break;
        }
        let threshold = switch_threshold(pdd, zeta_prev);
        outer_update(model, &blocks, &mut duals, pdd, zeta, threshold);
        zeta_prev = zeta;
    }
    if !trace.converged {
        if log::log_enabled!(log::Level::Debug) {
            let norms: Vec<String> = residuals(model, &blocks)
                .iter()
                .map(|r| format!("{:.2e}", r.norm_squared()))
                .collect();
            log::debug!("no convergence; squared residual per group [{}]", norms.join(", "));
        }
        return Err(Error::NoConvergence { trace: Box::new(trace) });
    }
    Ok(LoopOutcome {
        blocks,
        duals,
        weights,
        trace,
    })
}

/// Physical `(F, G, C_l)` from node-unit blocks. The lifted constraints
/// hold only up to the remaining violation, so the relay gain is pulled
/// back until the exact relay covariance meets every budget of the problem.
pub fn extract_designs(problem: &Problem, scaling: &Scaling, blocks: &PddBlocks) -> Result<Vec<DesignVariables>> {
    let model = &problem.model;
    let (cfg, sh) = (model.cfg, model.shared());
    let f = scaling.precoder_to_physical(&blocks.precoder);
    let g = &blocks.relay_gain * cr(scaling.relay_out / scaling.relay_in);
    let ok = |t: f64| {
        t <= 1.0
            && solve_mout(cfg, sh, &f, &(&g * cr(t)))
                .map(|m| admissible(problem, &f, &m))
                .unwrap_or(false)
    };
    let g = &g * cr(largest_admissible(ok));
    Ok(blocks
        .users
        .iter()
        .map(|u| DesignVariables {
            precoder: f.clone(),
            relay_gain: g.clone(),
            equalizer: &u.equalizer * cr(1.0 / scaling.dest),
        })
        .collect())
}

/// Single-user MSE minimization.
pub fn run_algorithm1(cfg: &SystemConfig, ch: &ChannelSet, pdd: &PddConfig) -> Result<(DesignVariables, ConvergenceTrace)> {
    let users = std::slice::from_ref(ch);
    let out = run(&Problem::mse(cfg, users), pdd)?;
    Ok((out.designs.into_iter().next().expect("one user"), out.trace))
}

/// Single-user rate maximization through the weighted-MMSE surrogate.
pub fn run_rate_maximization(cfg: &SystemConfig, ch: &ChannelSet, pdd: &PddConfig) -> Result<PddOutcome> {
    let users = std::slice::from_ref(ch);
    let problem = Problem {
        objective: Objective::Rate,
        ..Problem::mse(cfg, users)
    };
    run(&problem, pdd)
}

/// Sum-MSE minimization for several destinations sharing the source and relay.
///
/// The source-relay and self-interference links are taken from the first
/// channel set; each set contributes its own relay-destination and direct links.
pub fn run_multiuser(cfg: &SystemConfig, users: &[ChannelSet], pdd: &PddConfig) -> Result<PddOutcome> {
    if users.is_empty() {
        return Err(Error::Config("at least one destination is required".into()));
    }
    run(&Problem::mse(cfg, users), pdd)
}

/// MSE minimization with instantaneous per-chain power limits at the relay.
pub fn run_with_saturation(cfg: &SystemConfig, ch: &ChannelSet, pdd: &PddConfig, papr: PaprBudget) -> Result<PddOutcome> {
    if !(papr.p_tx > 0.0 && papr.p_rx > 0.0 && papr.omega_tx > 0.0 && papr.omega_rx > 0.0) {
        return Err(Error::Config("per-chain budgets and ratios must be positive".into()));
    }
    let users = std::slice::from_ref(ch);
    let problem = Problem {
        extra: ExtraConstraints {
            papr: Some(papr),
            si_power_cap: None,
        },
        ..Problem::mse(cfg, users)
    };
    run(&problem, pdd)
}

#[cfg(test)]
mod tests;
