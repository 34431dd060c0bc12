//! Variable blocks of the lifted problem and its equality constraints.
//!
//! The MSE minimization is lifted to a problem whose constraints are affine
//! in each of two variable blocks when the other is held fixed. Every
//! quadratic product in the original problem gets a factor and a "twin"
//! factor, and the consistency conditions tie them together:
//!
//! | relation | meaning |
//! |---|---|
//! | `F = F̃`, `J = J̃`, `L_i = L̃_i` | twins agree |
//! | `M̄1(F F̃^H, J J̃^H) = L1 L̃1^H` | relay input covariance factor |
//! | `M̄2(F F̃^H, J J̃^H) = L2 L̃2^H` | destination covariance factor |
//! | `L3 L̃3^H − C^H L6 − L6^H C + I = L4 L̃4^H` | MSE matrix factor |
//! | `C^H L2 = L3` | equalized covariance factor |
//! | `J = G L1` | relay output factor |
//! | `L5 = H̃_sr F`, `L6 = H̃_rd G L5` | desired signal path |
//!
//! With several destinations the destination-side quantities
//! (`C, L2, L3, L4, L6` and their twins) are replicated per user.

use crate::covariance::{m1_from_cov, m2_from_cov};
use crate::linalg::{identity, CMat};
use crate::qcqp::{Layout, VariableSpec};
use crate::system::{ChannelSet, SystemConfig};

/// Per-destination variables.
#[derive(Debug, Clone, PartialEq)]
pub struct UserBlocks {
    /// Destination equalizer `C`, `M_d × d`.
    pub equalizer: CMat,
    /// Factor of the destination covariance, `M_d × M_d`, and its twin.
    pub dest_factor: CMat,
    pub dest_factor_twin: CMat,
    /// `C^H` times the destination factor, `d × M_d`, and its twin.
    pub equalized_factor: CMat,
    pub equalized_factor_twin: CMat,
    /// Factor of the MSE matrix, `d × d`, and its twin.
    pub error_factor: CMat,
    pub error_factor_twin: CMat,
    /// Desired signal at the destination `H̃_rd G H̃_sr F`, `M_d × d`.
    pub dest_signal: CMat,
}

/// The complete optimizer state apart from the multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct PddBlocks {
    /// Source precoder `F` and its twin.
    pub precoder: CMat,
    pub precoder_twin: CMat,
    /// Relay amplification matrix `G`.
    pub relay_gain: CMat,
    /// Relay output factor `J = G L1` and its twin; `M_out = J J̃^H`.
    pub relay_out: CMat,
    pub relay_out_twin: CMat,
    /// Factor of the relay input covariance and its twin.
    pub relay_in_factor: CMat,
    pub relay_in_factor_twin: CMat,
    /// Desired signal at the relay `H̃_sr F`, `M_r × d`.
    pub relay_signal: CMat,
    pub users: Vec<UserBlocks>,
}

/// The two groups of variables updated alternately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// `F, G, J, L̃1` and per user `C, L̃2, L̃3, L̃4`; carries the power constraints.
    First,
    /// `F̃, J̃, L1, L5` and per user `L2, L3, L4, L6`; unconstrained.
    Second,
}

/// Number of shared and per-user constraint groups.
pub const SHARED_GROUPS: usize = 6;
pub const USER_GROUPS: usize = 7;

/// Channels and configuration the constraints are built from. The source
/// and self-interference links are taken from the first channel set.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub cfg: &'a SystemConfig,
    pub users: &'a [ChannelSet],
}

impl<'a> Model<'a> {
    pub fn new(cfg: &'a SystemConfig, users: &'a [ChannelSet]) -> Self {
        assert!(!users.is_empty(), "at least one destination");
        Self { cfg, users }
    }

    pub fn shared(&self) -> &ChannelSet {
        &self.users[0]
    }

    pub fn group_count(&self) -> usize {
        SHARED_GROUPS + USER_GROUPS * self.users.len()
    }
}

impl PddBlocks {
    /// Current values of one block, in the order of [`block_layout`].
    pub fn block_values(&self, block: Block) -> Vec<CMat> {
        let mut out = Vec::new();
        match block {
            Block::First => {
                out.extend([
                    self.precoder.clone(),
                    self.relay_gain.clone(),
                    self.relay_out.clone(),
                    self.relay_in_factor_twin.clone(),
                ]);
                for u in &self.users {
                    out.extend([
                        u.equalizer.clone(),
                        u.dest_factor_twin.clone(),
                        u.equalized_factor_twin.clone(),
                        u.error_factor_twin.clone(),
                    ]);
                }
            }
            Block::Second => {
                out.extend([
                    self.precoder_twin.clone(),
                    self.relay_out_twin.clone(),
                    self.relay_in_factor.clone(),
                    self.relay_signal.clone(),
                ]);
                for u in &self.users {
                    out.extend([
                        u.dest_factor.clone(),
                        u.equalized_factor.clone(),
                        u.error_factor.clone(),
                        u.dest_signal.clone(),
                    ]);
                }
            }
        }
        out
    }

    /// Overwrites one block with values ordered as in [`PddBlocks::block_values`].
    pub fn set_block(&mut self, block: Block, values: &[CMat]) {
        let mut it = values.iter().cloned();
        let mut next = || it.next().expect("block value count");
        match block {
            Block::First => {
                self.precoder = next();
                self.relay_gain = next();
                self.relay_out = next();
                self.relay_in_factor_twin = next();
                for u in &mut self.users {
                    u.equalizer = next();
                    u.dest_factor_twin = next();
                    u.equalized_factor_twin = next();
                    u.error_factor_twin = next();
                }
            }
            Block::Second => {
                self.precoder_twin = next();
                self.relay_out_twin = next();
                self.relay_in_factor = next();
                self.relay_signal = next();
                for u in &mut self.users {
                    u.dest_factor = next();
                    u.equalized_factor = next();
                    u.error_factor = next();
                    u.dest_signal = next();
                }
            }
        }
    }

    /// Returns a copy with one block replaced.
    pub fn with_block(&self, block: Block, values: &[CMat]) -> Self {
        let mut out = self.clone();
        out.set_block(block, values);
        out
    }
}

/// Variable layout of one block. Names carry a user suffix for the
/// destination-side variables.
pub fn block_layout(blocks: &PddBlocks, block: Block) -> Layout {
    let names: &[&str] = match block {
        Block::First => &["precoder", "relay_gain", "relay_out", "relay_in_factor_twin"],
        Block::Second => &["precoder_twin", "relay_out_twin", "relay_in_factor", "relay_signal"],
    };
    let user_names: &[&str] = match block {
        Block::First => &["equalizer", "dest_factor_twin", "equalized_factor_twin", "error_factor_twin"],
        Block::Second => &["dest_factor", "equalized_factor", "error_factor", "dest_signal"],
    };
    let values = blocks.block_values(block);
    let mut specs = Vec::with_capacity(values.len());
    for (k, v) in values.iter().enumerate() {
        let name = if k < names.len() {
            names[k].to_string()
        } else {
            let u = (k - names.len()) / user_names.len();
            format!("{}_{u}", user_names[(k - names.len()) % user_names.len()])
        };
        specs.push(VariableSpec::new(name, v.nrows(), v.ncols()));
    }
    Layout::new(specs)
}

/// Residuals of all equality constraints, shared groups first and then the
/// per-user groups user by user:
///
/// shared: `F − F̃`, `J − J̃`, `L1 − L̃1`, `M̄1 − L1 L̃1^H`, `J − G L1`, `L5 − H̃_sr F`;
/// per user: `L2 − L̃2`, `L3 − L̃3`, `L4 − L̃4`, `M̄2 − L2 L̃2^H`,
/// `M̄3 − L4 L̃4^H`, `C^H L2 − L3`, `L6 − H̃_rd G L5`.
pub fn residuals(model: &Model, b: &PddBlocks) -> Vec<CMat> {
    let cfg = model.cfg;
    let sh = model.shared();
    let qs = &b.precoder * b.precoder_twin.adjoint();
    let qr = &b.relay_out * b.relay_out_twin.adjoint();
    let mut out = Vec::with_capacity(model.group_count());
    out.push(&b.precoder - &b.precoder_twin);
    out.push(&b.relay_out - &b.relay_out_twin);
    out.push(&b.relay_in_factor - &b.relay_in_factor_twin);
    out.push(m1_from_cov(cfg, sh, &qs, &qr) - &b.relay_in_factor * b.relay_in_factor_twin.adjoint());
    out.push(&b.relay_out - &b.relay_gain * &b.relay_in_factor);
    out.push(&b.relay_signal - &sh.sr.est * &b.precoder);
    for (ch, u) in model.users.iter().zip(&b.users) {
        let cross = u.equalizer.adjoint() * &u.dest_signal;
        let m3 = &u.equalized_factor * u.equalized_factor_twin.adjoint() - &cross - cross.adjoint()
            + identity(cfg.d);
        out.push(&u.dest_factor - &u.dest_factor_twin);
        out.push(&u.equalized_factor - &u.equalized_factor_twin);
        out.push(&u.error_factor - &u.error_factor_twin);
        out.push(m2_from_cov(cfg, ch, &qs, &qr) - &u.dest_factor * u.dest_factor_twin.adjoint());
        out.push(m3 - &u.error_factor * u.error_factor_twin.adjoint());
        out.push(u.equalizer.adjoint() * &u.dest_factor - &u.equalized_factor);
        out.push(&u.dest_signal - &ch.rd.est * &b.relay_gain * &b.relay_signal);
    }
    out
}
