mod common;

use auxsysid::experiments::SystemPair;
use auxsysid::sim::{simulate_rollouts, simulate_rollouts_with, SimOptions};
use auxsysid::{assemble_batch, sweep, sweep_with_truth, BatchData, NoiseConfig, Priors, SweepGrid};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn batch(seed: u64, pair: &SystemPair<f64>) -> BatchData<f64> {
    let t = simulate_rollouts(&pair.true_model, &pair.true_noise, 20, 10, seed).unwrap();
    let a = simulate_rollouts(&pair.aux_model, &pair.aux_noise, 20, 50, seed + 1).unwrap();
    assemble_batch(&t, &a).unwrap()
}

fn priors(pair: &SystemPair<f64>, delta_theta_norm: f64, sigma_w_true: f64) -> Priors<f64> {
    Priors {
        delta: 0.01,
        sigma_w_true,
        sigma_w_aux: 1.0,
        delta_theta_norm,
        theta_norm: common::power_norm(&pair.true_model.theta()),
    }
}

fn grid() -> SweepGrid<f64> {
    SweepGrid::range(0.0, 2.0, 0.01, vec![1.0]).unwrap()
}

#[test]
fn large_model_difference_selects_zero_weight() {
    let pair = SystemPair::reference();
    let r = sweep(&batch(11, &pair), &grid(), &priors(&pair, 3.0, 1.0)).unwrap();
    assert_eq!(r.chosen().q, 0.0);
}

#[test]
fn noisy_true_system_selects_largest_weight() {
    let mut pair = SystemPair::reference();
    pair.true_noise = NoiseConfig::new(1.0, 1.0, 5.0);
    let r = sweep(
        &batch(12, &pair),
        &grid(),
        &priors(&pair, pair.delta_theta_norm().unwrap(), 5.0),
    )
    .unwrap();
    assert!((r.chosen().q - 2.0).abs() < 1e-12);
}

#[test]
fn identical_noiseless_systems_have_zero_error_everywhere() {
    let mut pair = SystemPair::reference();
    pair.aux_model = pair.true_model.clone();
    pair.true_noise = NoiseConfig::new(1.0, 1.0, 0.0);
    pair.aux_noise = pair.true_noise;
    let opts = SimOptions::noiseless();
    let t = simulate_rollouts_with(&pair.true_model, &pair.true_noise, 20, 10, 13, &opts).unwrap();
    let a = simulate_rollouts_with(&pair.aux_model, &pair.aux_noise, 20, 50, 14, &opts).unwrap();
    let data = assemble_batch(&t, &a).unwrap();
    let g = SweepGrid::range(0.0, 2.0, 0.25, vec![1e-9]).unwrap();
    let r = sweep_with_truth(&data, &g, &priors(&pair, 0.0, 0.0), &pair.true_model).unwrap();
    for p in &r.points {
        assert!(p.true_error.unwrap() < 1e-6, "q={} error {:?}", p.q, p.true_error);
    }
}

#[test]
fn csv_has_one_row_per_point_plus_choice() {
    let pair = SystemPair::reference();
    let g = SweepGrid::explicit(vec![0.0, 0.5, 1.0], vec![0.1, 1.0]).unwrap();
    let r = sweep(&batch(14, &pair), &g, &priors(&pair, 0.1, 1.0)).unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 6 + 1);
    assert!(lines[7].ends_with(",1"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn choice_is_minimum_and_order_free(seed in any::<u64>(), dtn in 0.0..1.0f64) {
        let mut perm: Vec<f64> = (0..12).map(|i| i as f64 * 0.2).collect();
        perm.shuffle(&mut common::rng(seed));
        let pair = SystemPair::reference();
        let data = batch(seed % 1000, &pair);
        let pr = priors(&pair, dtn, 1.0);
        let sorted: Vec<f64> = (0..12).map(|i| i as f64 * 0.2).collect();
        let a = sweep(&data, &SweepGrid::explicit(sorted, vec![0.5, 1.0]).unwrap(), &pr).unwrap();
        let b = sweep(&data, &SweepGrid::explicit(perm, vec![1.0, 0.5]).unwrap(), &pr).unwrap();
        let min = a.points.iter().map(|p| p.report.total).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(a.chosen().report.total, min);
        prop_assert_eq!((a.chosen().q, a.chosen().lambda), (b.chosen().q, b.chosen().lambda));
    }

    #[test]
    fn noise_term_non_increasing_in_weight(seed in any::<u64>()) {
        let pair = SystemPair::reference();
        let g = SweepGrid::range(0.0, 1.0, 0.05, vec![1.0]).unwrap();
        let r = sweep(&batch(seed % 1000, &pair), &g, &priors(&pair, 0.0, 1.0)).unwrap();
        for w in r.points.windows(2) {
            prop_assert!(w[1].report.noise_term <= w[0].report.noise_term * (1.0 + 1e-12));
            prop_assert_eq!(w[1].report.model_difference_term, 0.0);
        }
    }
}
