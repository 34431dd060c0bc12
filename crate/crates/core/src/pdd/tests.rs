use super::*;
use crate::covariance::{evaluate, m1, m2, mse_matrix, solve_mout};
use crate::linalg::{fro2, identity, rel_err};
use crate::qcqp::RVec;
use crate::system::{default_config, draw_channels, RandomStream};

/// Configuration and channels in node units, as the dual loop sees them.
fn node_instance(cfg: &SystemConfig, seed: u64) -> (SystemConfig, Vec<ChannelSet>) {
    let mut rng = RandomStream::new(seed);
    let ch = draw_channels(cfg, &mut rng).unwrap();
    let s = Scaling::for_problem(cfg, std::slice::from_ref(&ch));
    (s.config(cfg), vec![s.channels(&ch)])
}

fn small_cfg() -> SystemConfig {
    default_config().with_dims(2, 1)
}

fn perturbed(blocks: &PddBlocks, rng: &mut RandomStream, scale: f64) -> PddBlocks {
    let mut out = blocks.clone();
    for block in [Block::First, Block::Second] {
        let vals: Vec<CMat> = out
            .block_values(block)
            .iter()
            .map(|v| v + rng.cn_matrix(v.nrows(), v.ncols(), scale * scale))
            .collect();
        out.set_block(block, &vals);
    }
    out
}

fn random_duals(model: &Model, blocks: &PddBlocks, rng: &mut RandomStream, rho: f64) -> DualState {
    let mut duals = DualState::zeros(model, blocks, rho);
    for l in &mut duals.multipliers {
        *l = rng.cn_matrix(l.nrows(), l.ncols(), 0.01);
    }
    duals
}

#[test]
fn init_is_consistent() {
    let cfg = small_cfg();
    for seed in 0..50 {
        let (cfg_n, users) = node_instance(&cfg, seed);
        let problem = Problem::mse(&cfg_n, &users);
        let b = init_blocks(&problem).unwrap();
        let zeta = violation(&problem.model, &b);
        assert!(zeta < 1e-10, "seed {seed}: zeta {zeta:e}");
        assert!((fro2(&b.precoder) - cfg_n.precoder_budget()).abs() < 1e-12 * cfg_n.precoder_budget());
    }
}

#[test]
fn init_objective_is_the_model_mse() {
    let cfg = default_config();
    for seed in 0..10 {
        let (cfg_n, users) = node_instance(&cfg, seed);
        let problem = Problem::mse(&cfg_n, &users);
        let b = init_blocks(&problem).unwrap();
        let e = mse_matrix(&cfg_n, &users[0], &b.precoder, &b.relay_gain, &b.users[0].equalizer).unwrap();
        let l4 = fro2(&b.users[0].error_factor);
        assert!((l4 - trace_re(&e)).abs() < 1e-8, "seed {seed}: {l4} vs {}", trace_re(&e));
    }
}

#[test]
fn al_at_consistent_point_is_objective() {
    let (cfg_n, users) = node_instance(&default_config(), 4);
    let problem = Problem::mse(&cfg_n, &users);
    let b = init_blocks(&problem).unwrap();
    let duals = DualState::zeros(&problem.model, &b, 0.3);
    let al = augmented_lagrangian(&problem.model, &b, &duals, None);
    assert!((al - fro2(&b.users[0].error_factor)).abs() < 1e-9);
}

/// Term-by-term reassembly with symmetric twins, where the lifted
/// covariances reduce to the covariance-engine expressions.
#[test]
fn al_matches_independent_reassembly() {
    let (cfg, users) = node_instance(&default_config(), 5);
    let model = Model::new(&cfg, &users);
    let ch = &users[0];
    let mut rng = RandomStream::new(11);
    let base = init_blocks(&Problem::mse(&cfg, &users)).unwrap();
    let mut b = perturbed(&base, &mut rng, 0.05);
    b.precoder_twin = b.precoder.clone();
    b.relay_out_twin = b.relay_out.clone();
    let rho = 0.7;
    let duals = random_duals(&model, &b, &mut rng, rho);
    let u = &b.users[0];
    let m_out = &b.relay_out * b.relay_out.adjoint();
    let mbar1 = m1(&cfg, ch, &b.precoder, &m_out).unwrap();
    let mbar2 = m2(&cfg, ch, &b.precoder, &m_out).unwrap();
    let mbar3 = &u.equalized_factor * u.equalized_factor_twin.adjoint()
        - u.equalizer.adjoint() * &u.dest_signal
        - u.dest_signal.adjoint() * &u.equalizer
        + identity(cfg.d);
    let terms = [
        &b.precoder - &b.precoder_twin,
        &b.relay_out - &b.relay_out_twin,
        &b.relay_in_factor - &b.relay_in_factor_twin,
        mbar1 - &b.relay_in_factor * b.relay_in_factor_twin.adjoint(),
        &b.relay_out - &b.relay_gain * &b.relay_in_factor,
        &b.relay_signal - &ch.sr.est * &b.precoder,
        &u.dest_factor - &u.dest_factor_twin,
        &u.equalized_factor - &u.equalized_factor_twin,
        &u.error_factor - &u.error_factor_twin,
        mbar2 - &u.dest_factor * u.dest_factor_twin.adjoint(),
        mbar3 - &u.error_factor * u.error_factor_twin.adjoint(),
        u.equalizer.adjoint() * &u.dest_factor - &u.equalized_factor,
        &u.dest_signal - &ch.rd.est * &b.relay_gain * &b.relay_signal,
    ];
    let mut expected = fro2(&u.error_factor);
    for (r, l) in terms.iter().zip(&duals.multipliers) {
        expected += fro2(&(r + l * cr(rho))) / (2.0 * rho);
    }
    let al = augmented_lagrangian(&model, &b, &duals, None);
    assert!((al - expected).abs() < 1e-12 * expected.abs().max(1.0), "{al} vs {expected}");
}

#[test]
fn perturbing_the_precoder_shows_in_its_twin_residual() {
    let (cfg, users) = node_instance(&small_cfg(), 6);
    let model = Model::new(&cfg, &users);
    let mut b = init_blocks(&Problem::mse(&cfg, &users)).unwrap();
    let mut rng = RandomStream::new(2);
    let delta = rng.cn_matrix(cfg.n_s, cfg.d, 1e-2);
    b.precoder += &delta;
    let r = residuals(&model, &b);
    assert_eq!(r.len(), model.group_count());
    assert!((fro2(&r[0]) - fro2(&delta)).abs() < 1e-15);
}

#[test]
fn block_updates_descend_and_stay_feasible() {
    let (cfg, users) = node_instance(&default_config(), 7);
    let problem = Problem::mse(&cfg, &users);
    let model = &problem.model;
    let mut rng = RandomStream::new(3);
    let start = init_blocks(&problem).unwrap();
    let mut b = perturbed(&start, &mut rng, 0.02);
    let duals = random_duals(model, &b, &mut rng, 1e-2);
    let cons = first_block_constraints(&problem, &b).unwrap();
    let pdd = PddConfig::default();
    for _ in 0..5 {
        for block in [Block::First, Block::Second] {
            let before = augmented_lagrangian(model, &b, &duals, None);
            update_block(&problem, &mut b, &duals, None, block, &pdd, &cons);
            let after = augmented_lagrangian(model, &b, &duals, None);
            assert!(after <= before + 1e-10, "{block:?}: {before} -> {after}");
            assert!(fro2(&b.precoder).sqrt() <= cfg.precoder_budget().sqrt() + 1e-9);
            assert!(fro2(&b.relay_out).sqrt() <= cfg.relay_budget().sqrt() + 1e-9);
        }
    }
}

/// Real coordinates of one block as a function for finite differences.
fn al_of_block(problem: &Problem, b: &PddBlocks, duals: &DualState, block: Block, x: &RVec) -> f64 {
    let layout = block_layout(b, block);
    let moved = b.with_block(block, &layout.unpack(x));
    augmented_lagrangian(&problem.model, &moved, duals, None)
}

fn numerical_gradient(f: impl Fn(&RVec) -> f64, x: &RVec, h: f64) -> RVec {
    RVec::from_fn(x.len(), |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

#[test]
fn second_block_update_is_stationary() {
    let (cfg, users) = node_instance(&small_cfg(), 8);
    let problem = Problem::mse(&cfg, &users);
    let mut rng = RandomStream::new(4);
    let mut b = perturbed(&init_blocks(&problem).unwrap(), &mut rng, 0.05);
    let duals = random_duals(&problem.model, &b, &mut rng, 1.0);
    update_block(&problem, &mut b, &duals, None, Block::Second, &PddConfig::default(), &[]);
    let layout = block_layout(&b, Block::Second);
    let x = layout.pack(&b.block_values(Block::Second));
    let grad = numerical_gradient(|x| al_of_block(&problem, &b, &duals, Block::Second, x), &x, 1e-5);
    assert!(grad.amax() < 1e-7, "gradient {:e}", grad.amax());
}

#[test]
fn second_block_is_fixed_at_a_consistent_point() {
    let (cfg, users) = node_instance(&small_cfg(), 9);
    let problem = Problem::mse(&cfg, &users);
    let b0 = init_blocks(&problem).unwrap();
    let mut b = b0.clone();
    // A tiny ρ makes the objective negligible next to the penalty.
    let duals = DualState::zeros(&problem.model, &b, 1e-12);
    update_block(&problem, &mut b, &duals, None, Block::Second, &PddConfig::default(), &[]);
    for (new, old) in b.block_values(Block::Second).iter().zip(b0.block_values(Block::Second)) {
        assert!((new - &old).norm() < 1e-9, "moved by {:e}", (new - &old).norm());
    }
}

/// With all dimensions one and inactive power budgets, the first block
/// update must solve the normal equations of the quadratic AL, which are
/// assembled here from finite differences of the AL itself.
#[test]
fn scalar_first_block_matches_normal_equations() {
    let mut cfg = default_config().with_dims(1, 1);
    cfg.p_s_max = 1e6;
    cfg.p_r_max = 1e6;
    let mut rng = RandomStream::new(12);
    let ch = draw_channels(&cfg, &mut rng).unwrap();
    let s = Scaling::for_problem(&default_config().with_dims(1, 1), std::slice::from_ref(&ch));
    let cfg_n = SystemConfig {
        p_s_max: 1e6,
        p_r_max: 1e6,
        ..s.config(&default_config().with_dims(1, 1))
    };
    let users = vec![s.channels(&ch)];
    let problem = Problem::mse(&cfg_n, &users);
    let f = CMat::from_element(1, 1, crate::linalg::c64(0.6, 0.2));
    let g = CMat::from_element(1, 1, crate::linalg::c64(0.1, -0.05));
    let start = consistent_blocks(&problem.model, &f, &g).unwrap();
    let b = perturbed(&start, &mut rng, 0.05);
    let duals = random_duals(&problem.model, &b, &mut rng, 0.5);

    let layout = block_layout(&b, Block::First);
    let n = layout.len();
    let x0 = layout.pack(&b.block_values(Block::First));
    let al = |x: &RVec| al_of_block(&problem, &b, &duals, Block::First, x);
    let h = 1e-4;
    let grad = numerical_gradient(&al, &x0, h);
    let hess = crate::qcqp::RMat::from_fn(n, n, |i, j| {
        let mut e = RVec::zeros(n);
        e[j] = h;
        let gp = numerical_gradient(&al, &(&x0 + &e), h);
        let gm = numerical_gradient(&al, &(&x0 - &e), h);
        (gp[i] - gm[i]) / (2.0 * h)
    });
    let step = hess.lu().solve(&(-grad)).unwrap();
    let oracle = &x0 + step;

    let cons = first_block_constraints(&problem, &b).unwrap();
    let mut updated = b.clone();
    update_block(&problem, &mut updated, &duals, None, Block::First, &PddConfig::default(), &cons);
    let x = layout.pack(&updated.block_values(Block::First));
    assert!(
        (&x - &oracle).amax() < 1e-6 * oracle.amax().max(1.0),
        "{:e}",
        (&x - &oracle).amax()
    );
}

#[test]
fn penalty_branch_shrinks_rho_only() {
    let (cfg, users) = node_instance(&small_cfg(), 10);
    let model = Model::new(&cfg, &users);
    let mut rng = RandomStream::new(5);
    let b = perturbed(&init_blocks(&Problem::mse(&cfg, &users)).unwrap(), &mut rng, 0.1);
    let mut duals = random_duals(&model, &b, &mut rng, 0.8);
    let before = duals.clone();
    let pdd = PddConfig { c_rho: 0.5, ..Default::default() };
    let step = outer_update(&model, &b, &mut duals, &pdd, 1.0, 0.5);
    assert_eq!(step, OuterStep::Penalty);
    assert_eq!(duals.rho, 0.4);
    assert_eq!(duals.multipliers, before.multipliers);
}

#[test]
fn multiplier_branch_adds_scaled_residuals() {
    let (cfg, users) = node_instance(&small_cfg(), 11);
    let model = Model::new(&cfg, &users);
    let mut rng = RandomStream::new(6);
    let consistent = init_blocks(&Problem::mse(&cfg, &users)).unwrap();

    let mut duals = random_duals(&model, &consistent, &mut rng, 0.25);
    let before = duals.clone();
    outer_update(&model, &consistent, &mut duals, &PddConfig::default(), 0.0, 1.0);
    for (a, b) in duals.multipliers.iter().zip(&before.multipliers) {
        assert!((a - b).norm() < 1e-9);
    }

    let b = perturbed(&consistent, &mut rng, 0.1);
    let mut duals = before.clone();
    let step = outer_update(&model, &b, &mut duals, &PddConfig::default(), 1e-3, 1.0);
    assert_eq!(step, OuterStep::Multiplier);
    assert_eq!(duals.rho, 0.25);
    for ((new, old), r) in duals.multipliers.iter().zip(&before.multipliers).zip(residuals(&model, &b)) {
        let expected = old + r * cr(4.0);
        assert!((new - &expected).camax() <= 1e-14 * expected.camax().max(1.0));
    }
}

#[test]
fn switch_threshold_has_a_floor() {
    let pdd = PddConfig::default();
    assert_eq!(switch_threshold(&pdd, 1.0), 0.9);
    assert_eq!(switch_threshold(&pdd, 1e-9), pdd.zeta_th);
}

#[test]
fn run_improves_the_design_and_respects_budgets() {
    let cfg = small_cfg();
    let mut rng = RandomStream::new(21);
    let ch = draw_channels(&cfg, &mut rng).unwrap();
    let (design, trace) = run_algorithm1(&cfg, &ch, &PddConfig::default()).unwrap();
    assert!(trace.converged && trace.final_zeta() < 1e-5);
    assert!(trace.max_inner_increase() <= 1e-10);
    let eval = evaluate(&cfg, &ch, &design).unwrap();
    assert!(eval.mse < trace.initial_mse, "{} vs {}", eval.mse, trace.initial_mse);
    assert!(eval.relay_power <= cfg.p_r_max * (1.0 + 1e-9));
    assert!(crate::covariance::source_power(&cfg, &design.precoder) <= cfg.p_s_max * (1.0 + 1e-9));
    let m_out = solve_mout(&cfg, &ch, &design.precoder, &design.relay_gain).unwrap();
    assert!(rel_err(&m_out, &m_out.adjoint()) < 1e-12);
}

#[test]
fn rate_weights_invert_the_mmse_matrix() {
    let (cfg, users) = node_instance(&small_cfg(), 13);
    let problem = Problem::mse(&cfg, &users);
    let b = init_blocks(&problem).unwrap();
    let w = RateWeights::from_design(&problem.model, &b).unwrap();
    // At a consistent point the error factor carries the MMSE matrix.
    let e = &b.users[0].error_factor * b.users[0].error_factor.adjoint();
    let prod = &w.weights[0] * e;
    assert!(rel_err(&prod, &identity(cfg.d)) < 1e-9);
    assert_eq!(w.relative_change(&w), 0.0);
}

#[test]
fn optimizer_settings_are_validated() {
    assert!(PddConfig::default().validate().is_ok());
    assert!(PddConfig { c_rho: 1.0, ..Default::default() }.validate().is_err());
    assert!(PddConfig { zeta_th: 0.0, ..Default::default() }.validate().is_err());
}
