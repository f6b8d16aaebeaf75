mod common;

use approx::assert_relative_eq;
use auxsysid::bounds::*;
use auxsysid::estimator::GramPieces;
use auxsysid::experiments::SystemPair;
use auxsysid::sim::simulate_rollouts;
use auxsysid::{assemble_batch, BatchData, NoiseConfig, SystemModel};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn ln(x: f64) -> f64 {
    x.ln()
}

/// `tr(G_t)` from the explicitly formed matrix sum.
fn trace_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>, t: usize) -> f64 {
    let n = a.nrows();
    let mut g = DMatrix::<f64>::zeros(n, n);
    let mut power = DMatrix::<f64>::identity(n, n);
    for i in 0..=t {
        g += &power * power.transpose();
        if i < t {
            g += &power * b * b.transpose() * power.transpose();
        }
        power = a * power;
    }
    g.trace()
}

fn g_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>, rollouts: usize, length: usize, delta: f64, c: f64, smax: f64) -> f64 {
    let p = b.ncols() as f64;
    let mut sum = 0.0;
    for t in 0..length {
        sum += 41.0 * (trace_oracle(a, b, t) + p) * (ln(2.0 / delta) / c + 1.0) * smax * smax;
    }
    rollouts as f64 * sum
}

fn reference_inputs(q: f64, tr: usize, tp: usize) -> IndependentInputs<f64> {
    let pair = SystemPair::<f64>::reference();
    IndependentInputs {
        delta_theta_norm: pair.delta_theta_norm().unwrap(),
        true_sys: SystemData {
            model: pair.true_model,
            noise: pair.true_noise,
            rollouts: 1,
            length: tr,
        },
        aux_sys: SystemData {
            model: pair.aux_model,
            noise: pair.aux_noise,
            rollouts: 1,
            length: tp,
        },
        q,
        delta: 0.1,
        c: 1.0,
    }
}

#[test]
fn g_total_matches_direct_summation() {
    let (a, b, _, _) = common::reference_matrices(0.1);
    let model = SystemModel::new(a.clone(), b.clone()).unwrap();
    let got = g_total(&model, &NoiseConfig::uniform(1.0), 1, 3, 0.1, 1.0).unwrap();
    assert_relative_eq!(got, g_oracle(&a, &b, 1, 3, 0.1, 1.0, 1.0), max_relative = 1e-10);
}

#[test]
fn phi_matches_formula() {
    let (a, b, ah, bh) = common::reference_matrices(0.1);
    let gt = g_oracle(&a, &b, 1, 400, 0.1, 1.0, 1.0);
    let ga = g_oracle(&ah, &bh, 1, 1200, 0.1, 1.0, 1.0);
    let expect = (gt + ga) / (400.0 + 1200.0) + 1.0;
    assert_relative_eq!(
        phi(&reference_inputs(1.0, 400, 1200)).unwrap(),
        expect,
        max_relative = 1e-10
    );
}

#[test]
fn data_independent_bound_matches_formula() {
    let (a, b, ah, bh) = common::reference_matrices(0.1);
    let (delta, n, p) = (0.1, 3.0, 2.0);
    let gt = g_oracle(&a, &b, 1, 400, delta, 1.0, 1.0);
    let ga = g_oracle(&ah, &bh, 1, 1200, delta, 1.0, 1.0);
    let d = 400.0 + 1200.0;
    let phi = (gt + ga) / d + 1.0;
    let noise = 20.0 * ((9.0f64.powf(n) / delta).ln() + (n + p) * phi.ln()).sqrt() / d.sqrt();
    let bias = 0.02f64.sqrt() * ga / d;
    let r = bound_data_independent(&reference_inputs(1.0, 400, 1200)).unwrap();
    assert_relative_eq!(r.noise_term, noise, max_relative = 1e-10);
    assert_relative_eq!(r.model_difference_term, bias, max_relative = 1e-10);
    assert_relative_eq!(r.total, noise + bias, max_relative = 1e-10);
    assert!(!r.hypothesis_satisfied);
}

#[test]
fn threshold_for_weight_sweep_sizes() {
    let mut i = reference_inputs(1.0, 10, 50);
    i.true_sys.rollouts = 20;
    i.aux_sys.rollouts = 20;
    assert_relative_eq!(
        prop1_threshold(&i).unwrap(),
        (200.0 + 1000.0) / 41.0,
        max_relative = 1e-15
    );
}

/// Spectral norm of a 2×2 matrix from its Frobenius norm and determinant.
fn norm2x2(m: &DMatrix<f64>) -> f64 {
    let f2 = m.norm_squared();
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    ((f2 + (f2 * f2 - 4.0 * det * det).max(0.0).sqrt()) / 2.0).sqrt()
}

#[test]
fn jordan_block_envelope_matches_power_norms() {
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.5]);
    let env = gelfand_envelope(&a, DEFAULT_HORIZON).unwrap();
    assert_relative_eq!(env.gamma, 0.75, epsilon = 1e-12);
    let kappa = (0..=200)
        .map(|i: i32| {
            let lam = 0.5f64.powi(i);
            let off = if i == 0 { 0.0 } else { i as f64 * 0.5f64.powi(i - 1) };
            norm2x2(&DMatrix::from_row_slice(2, 2, &[lam, off, 0.0, lam])) / 0.75f64.powi(i)
        })
        .fold(1.0, f64::max);
    assert!(kappa > 1.0);
    assert_relative_eq!(env.kappa, kappa, max_relative = 1e-9);
}

#[test]
fn benefit_gamma_dominates_every_step() {
    let pair = SystemPair::<f64>::reference();
    let (delta, c) = (0.1, 1.0);
    let g = corollary1_gamma(
        &pair.true_model,
        &pair.true_noise,
        &pair.aux_model,
        &pair.aux_noise,
        delta,
        c,
        DEFAULT_HORIZON,
    )
    .unwrap();
    for model in [&pair.true_model, &pair.aux_model] {
        for tr in trace_g_sequence(model, 200) {
            assert!(g.value >= 41.0 * (tr + 2.0) * (ln(2.0 / delta) / c + 1.0));
        }
    }
    let env = gelfand_envelope(pair.aux_model.a(), DEFAULT_HORIZON).unwrap();
    let b = common::power_norm(pair.aux_model.b());
    let k2 = env.kappa * env.kappa / (1.0 - env.gamma * env.gamma);
    let expect = 41.0 * (3.0 * k2 + 3.0 * k2 * b * b + 2.0) * (ln(20.0) + 1.0);
    assert_relative_eq!(g.aux_term, expect, max_relative = 1e-10);
}

#[test]
fn benefit_condition_matches_formula_and_eventually_holds() {
    let pair = SystemPair::<f64>::reference();
    let g = corollary1_gamma(
        &pair.true_model,
        &pair.true_noise,
        &pair.aux_model,
        &pair.aux_noise,
        0.1,
        1.0,
        DEFAULT_HORIZON,
    )
    .unwrap()
    .value;
    let (a, b, _, _) = common::reference_matrices(0.1);
    let mut i = reference_inputs(0.5, 200, 400);
    i.delta_theta_norm = 1e-7;
    let gt = g_oracle(&a, &b, 1, 200, 0.1, 1.0, 1.0);
    let base = (9.0f64.powi(3) / 0.1).ln();
    let lhs = (base + 5.0 * (gt / 200.0 + 1.0).ln()).sqrt() / 200.0f64.sqrt();
    let rhs = (1.0 / 0.5f64.sqrt()) * (base + 5.0 * (g + 1.0).ln()).sqrt() / 400.0f64.sqrt() + 1e-7 * g / 20.0;
    let check = check_aux_benefit(&i, g).unwrap();
    assert_relative_eq!(check.lhs, lhs, max_relative = 1e-10);
    assert_relative_eq!(check.rhs, rhs, max_relative = 1e-10);

    let mut tp = 400;
    let mut held = false;
    while tp <= 1 << 24 {
        i.aux_sys.length = tp;
        let now = check_aux_benefit(&i, g).unwrap().holds;
        assert!(!held || now, "condition flipped back at T_p = {tp}");
        held |= now;
        tp *= 2;
    }
    assert!(held);
}

fn weight_sweep_batch(seed: u64) -> (BatchData<f64>, SystemPair<f64>) {
    let pair = SystemPair::<f64>::reference();
    let t = simulate_rollouts(&pair.true_model, &pair.true_noise, 20, 10, seed).unwrap();
    let a = simulate_rollouts(&pair.aux_model, &pair.aux_noise, 20, 50, seed + 1).unwrap();
    (assemble_batch(&t, &a).unwrap(), pair)
}

#[test]
fn data_dependent_bound_matches_formula() {
    let (batch, pair) = weight_sweep_batch(2024);
    let (q, lambda, delta) = (1.0, 1.0, 0.01);
    let split = batch.column_split;
    let zt = batch.z.columns(0, split).into_owned();
    let za = batch.z.columns(split, batch.num_aux_columns()).into_owned();
    let zz_aux = &za * za.transpose();
    let gram = &zt * zt.transpose() + &zz_aux * q;
    let m = &gram + DMatrix::identity(5, 5) * lambda;
    let logdet = common::lu_det(&m).ln() - 5.0 * lambda.ln();
    let lmin = common::min_eigen_inverse_power(&m);
    let dtn = pair.delta_theta_norm().unwrap();
    let tn = common::power_norm(&pair.true_model.theta());
    let noise = (32.0 / 9.0 * ((9.0f64.powi(3) / delta).ln() + 0.5 * logdet)).sqrt() / lmin.sqrt();
    let bias = q * dtn * common::power_norm(&(&zz_aux * common::gauss_jordan_inverse(&m)));
    let reg = tn * lambda / lmin;

    let inputs = DependentInputs {
        q,
        lambda,
        delta,
        sigma_w_true: 1.0,
        sigma_w_aux: 1.0,
        delta_theta_norm: dtn,
        theta_norm: tn,
    };
    let r = bound_data_dependent(&batch.pieces(), &inputs).unwrap();
    assert_relative_eq!(r.phi_or_logdet, logdet, max_relative = 1e-10);
    assert_relative_eq!(r.lambda_min, lmin, max_relative = 1e-10);
    assert_relative_eq!(r.total, noise + bias + reg, max_relative = 1e-10);
}

#[test]
fn bias_term_scales_inversely_with_excitation() {
    let at = |tr: usize| {
        let i = reference_inputs(1.0, tr, 100);
        (
            bound_data_independent(&i).unwrap().model_difference_term,
            i.excitation(),
        )
    };
    let (b1, d1) = at(1000);
    let (b2, d2) = at(10000);
    assert_relative_eq!(b1 * d1, b2 * d2, max_relative = 1e-12);
    assert!(b1 / b2 > 9.0);
}

fn random_pieces(seed: u64, n: usize, p: usize) -> GramPieces<f64> {
    let mut rng = common::rng(seed);
    let truth = common::stable_system(&mut rng, n, p, 0.7);
    let aux = common::perturb(&mut rng, &truth, 0.1);
    let noise = NoiseConfig::uniform(1.0);
    let t = simulate_rollouts(&truth, &noise, 2, 15, seed).unwrap();
    let a = simulate_rollouts(&aux, &noise, 3, 15, seed + 7).unwrap();
    assemble_batch(&t, &a).unwrap().pieces()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trace_matches_matrix_sum(seed in any::<u64>(), n in 1usize..=4, p in 1usize..=2, t in 0usize..30, rho in 0.0..1.2f64) {
        let m = common::stable_system(&mut common::rng(seed), n, p, rho);
        let oracle = trace_oracle(m.a(), m.b(), t);
        prop_assert!((trace_g(&m, t) - oracle).abs() <= 1e-10 * oracle);
    }

    #[test]
    fn trace_bound_dominates(seed in any::<u64>(), n in 1usize..=4, p in 1usize..=2, rho in 0.0..0.95f64) {
        let m = common::stable_system(&mut common::rng(seed), n, p, rho);
        let env = gelfand_envelope(m.a(), DEFAULT_HORIZON).unwrap();
        prop_assert!(env.kappa >= 1.0 && env.gamma > env.spectral_radius && env.gamma < 1.0);
        let bound = prop4_trace_bound(&m, env.kappa, env.gamma).unwrap();
        for tr in trace_g_sequence(&m, 200) {
            prop_assert!(bound >= tr);
        }
    }

    #[test]
    fn noise_term_shrinks_with_data(seed in any::<u64>(), q in 0.05..3.0f64) {
        let mut rng = common::rng(seed);
        let truth = common::stable_system(&mut rng, 2, 1, 0.8);
        let aux = common::perturb(&mut rng, &truth, 0.05);
        let inputs = |nr: usize, np: usize| IndependentInputs {
            true_sys: SystemData { model: truth.clone(), noise: NoiseConfig::uniform(1.0), rollouts: nr, length: 1 },
            aux_sys: SystemData { model: aux.clone(), noise: NoiseConfig::uniform(1.0), rollouts: np, length: 1 },
            q,
            delta: 0.05,
            c: 1.0,
            delta_theta_norm: 0.1,
        };
        let sizes = [100, 1000, 10000];
        for w in sizes.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let a = bound_data_independent(&inputs(lo, 1000)).unwrap().noise_term;
            let b = bound_data_independent(&inputs(hi, 1000)).unwrap().noise_term;
            prop_assert!(b < a);
            let a = bound_data_independent(&inputs(1000, lo)).unwrap().noise_term;
            let b = bound_data_independent(&inputs(1000, hi)).unwrap().noise_term;
            prop_assert!(b < a);
        }
    }

    #[test]
    fn dependent_terms_add_up(seed in any::<u64>(), q in 0.0..3.0f64, lambda in 0.01..10.0f64, dtn in 0.0..2.0f64, tn in 0.0..5.0f64) {
        let pieces = random_pieces(seed, 3, 2);
        let r = bound_data_dependent(&pieces, &DependentInputs {
            q, lambda, delta: 0.05, sigma_w_true: 1.0, sigma_w_aux: 0.7, delta_theta_norm: dtn, theta_norm: tn,
        }).unwrap();
        prop_assert!(r.noise_term >= 0.0 && r.model_difference_term >= 0.0 && r.regularization_term >= 0.0);
        prop_assert_eq!(r.total, r.noise_term + r.model_difference_term + r.regularization_term);
    }

    #[test]
    fn independent_terms_add_up(q in 0.0..5.0f64, tr in 1usize..500, tp in 0usize..500) {
        let r = bound_data_independent(&reference_inputs(q, tr, tp)).unwrap();
        prop_assert!(r.noise_term >= 0.0 && r.model_difference_term >= 0.0);
        prop_assert_eq!(r.total, r.noise_term + r.model_difference_term);
    }
}
