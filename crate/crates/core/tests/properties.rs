use proptest::prelude::*;

use forecast_dynamics::lsmc::{build_partition, PolicyTable};
use forecast_dynamics::models::{
    predictive_cdf, ForecastState, ModelFamily, ModelParams, NigCanonical, RhoSchedule,
};
use forecast_dynamics::numerics::chi_square_uniform;
use forecast_dynamics::rng;
use forecast_dynamics::scoring::{crps_ensemble, crps_parametric, predictive_quantile, rank_of};
use forecast_dynamics::trading::{
    profit, profit_from_cash_flows, simulate_joint, train_policy, ExperimentConfig, ModelVariant,
};
use forecast_dynamics::lsmc::LsmcConfig;

fn members() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, 1..30)
}

proptest! {
    #[test]
    fn ensemble_crps_is_nonnegative_and_zero_only_at_a_point_mass(x in members(), y in -60.0..60.0f64) {
        let c = crps_ensemble(&x, y);
        prop_assert!(c >= 0.0);
        prop_assert_eq!(crps_ensemble(&vec![y; x.len()], y), 0.0);
        if x.iter().any(|&v| v != y) {
            prop_assert!(c > 0.0);
        }
    }

    #[test]
    fn ensemble_crps_is_translation_and_scale_equivariant(
        x in members(), y in -60.0..60.0f64, shift in -100.0..100.0f64, k in 0.1..10.0f64,
    ) {
        let c = crps_ensemble(&x, y);
        let moved: Vec<f64> = x.iter().map(|v| v + shift).collect();
        prop_assert!((crps_ensemble(&moved, y + shift) - c).abs() <= 1e-9 * (1.0 + c));
        let scaled: Vec<f64> = x.iter().map(|v| k * v).collect();
        prop_assert!((crps_ensemble(&scaled, k * y) - k * c).abs() <= 1e-9 * (1.0 + k * c));
    }

    #[test]
    fn ensemble_crps_ignores_member_order(mut x in members(), y in -60.0..60.0f64) {
        let c = crps_ensemble(&x, y);
        x.reverse();
        prop_assert!((crps_ensemble(&x, y) - c).abs() <= 1e-12 * (1.0 + c));
    }

    #[test]
    fn single_member_crps_is_absolute_error(x in -50.0..50.0f64, y in -50.0..50.0f64) {
        prop_assert!((crps_ensemble(&[x], y) - (x - y).abs()).abs() < 1e-12);
    }

    #[test]
    fn nig_crps_is_translation_invariant(
        alpha in 0.5..5.0f64, u in -0.8..0.8f64, delta in 0.2..3.0f64, mu in -2.0..2.0f64,
        z in -3.0..3.0f64, shift in -20.0..20.0f64,
    ) {
        let c = NigCanonical::new(alpha, alpha * u, delta, mu).unwrap();
        let moved = NigCanonical::new(alpha, alpha * u, delta, mu + shift).unwrap();
        let y = c.mean() + z * c.variance().sqrt();
        let a = crps_parametric(&c, y, 1e-8).unwrap();
        let b = crps_parametric(&moved, y + shift, 1e-8).unwrap();
        prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn quantile_inverts_the_cdf(
        family in prop::sample::select(ModelFamily::ALL.to_vec()),
        b in 0.03..0.8f64, v in 0.01..2.0f64, p in 0.01..0.99f64,
    ) {
        let params = ModelParams::new(family, b, RhoSchedule::constant(0.16), 48.0).unwrap();
        let state = ForecastState::new(0.0, if family.is_positive() { 5.0 } else { 0.3 }, v);
        let q = predictive_quantile(&params, &state, p, 1e-10).unwrap();
        let back = predictive_cdf(&params, &state, q, 1e-11).unwrap();
        prop_assert!((back - p).abs() < 1e-7, "{family}: {p} -> {q} -> {back}");
    }

    #[test]
    fn rank_is_within_range(x in members(), y in -60.0..60.0f64, seed in 0u64..1000) {
        let r = rank_of(&x, y, &mut rng::stream(seed, 0));
        prop_assert!(r <= x.len());
        let below = x.iter().filter(|&&v| v < y).count();
        let ties = x.iter().filter(|&&v| v == y).count();
        prop_assert!(r >= below && r <= below + ties);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partition_cells_are_balanced_and_cover_every_sample(
        dim in 1usize..4, q in 1usize..6, extra in 0usize..400, seed in 0u64..1000,
    ) {
        let n = q.pow(dim as u32) * 20 + extra;
        let mut g = rng::stream(seed, 1);
        let states: Vec<f64> = (0..n * dim).map(|_| rand::Rng::random::<f64>(&mut g).powi(3)).collect();
        let part = build_partition(&states, dim, q).unwrap();
        prop_assert_eq!(part.n_cells(), q.pow(dim as u32));
        let counts = part.cell_counts(&states);
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        // sequential quantile splits: each cell holds n/q^d samples up to rounding at each level
        let target = n as f64 / part.n_cells() as f64;
        for &c in &counts {
            prop_assert!((c as f64 - target).abs() <= dim as f64 + 1.0, "{c} vs {target}");
        }
        for row in states.chunks(dim) {
            prop_assert!(part.locate(row) < part.n_cells());
        }
    }

    #[test]
    fn profit_equals_its_cash_flow_form(seed in 0u64..1000, k in 0.0..20.0f64, a in -1.0..1.0f64, b in -1.0..1.0f64) {
        let e = ExperimentConfig::reference();
        let config = forecast_dynamics::trading::TradingConfig { k, ..e.trading.clone() };
        let paths = simulate_joint(ModelVariant::A, &e.model, &e.market, &config, 4, 20, seed).unwrap();
        for p in 0..paths.n_paths() {
            let positions: Vec<f64> = (0..paths.n_stages).map(|i| a + b * i as f64 / 3.0).collect();
            let x = profit(&paths, p, &positions, &config);
            let y = profit_from_cash_flows(&paths, p, &positions, &config);
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }
}

#[test]
fn uniform_ranks_of_exchangeable_draws() {
    let mut g = rng::stream(5, 0);
    let mut counts = vec![0u64; 11];
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..10).map(|_| rand::Rng::random::<f64>(&mut g)).collect();
        let y = rand::Rng::random::<f64>(&mut g);
        counts[rank_of(&x, y, &mut g)] += 1;
    }
    let (_, p) = chi_square_uniform(&counts).unwrap();
    assert!(p > 0.001, "{counts:?} p={p}");
}

#[test]
fn trained_policy_survives_a_text_round_trip() {
    let e = ExperimentConfig::reference();
    let trading = forecast_dynamics::trading::TradingConfig { n_train: 3000, ..e.trading.clone() };
    let lsmc = LsmcConfig {
        n_paths: trading.n_train,
        cells_per_dim: 3,
        control_grid: trading.control_grid(e.market.mu_s).unwrap(),
        substeps: 2,
        seed: 4,
    };
    let policy = train_policy(ModelVariant::A, &e.model, &e.market, &trading, &lsmc).unwrap();
    let mut text = Vec::new();
    policy.write_text(&mut text).unwrap();
    let back = PolicyTable::read_text(&text[..]).unwrap();
    let probe = simulate_joint(ModelVariant::A, &e.model, &e.market, &trading, 2, 200, 77).unwrap();
    let ns = probe.n_stages;
    for p in 0..200 {
        for i in 0..ns {
            let k = p * ns + i;
            let x = [probe.s[k], probe.m[k], probe.v[k]];
            assert_eq!(policy.control(i, &x), back.control(i, &x));
        }
    }
}

#[test]
fn common_random_numbers_shrink_the_difference_error() {
    // the same paths for two nearby controls: the profit difference is far
    // less noisy than the difference of independent estimates
    let e = ExperimentConfig::reference();
    let paths = simulate_joint(ModelVariant::A, &e.model, &e.market, &e.trading, 4, 4000, 21).unwrap();
    let other = simulate_joint(ModelVariant::A, &e.model, &e.market, &e.trading, 4, 4000, 22).unwrap();
    let (x, y) = (vec![0.5; 4], vec![0.55; 4]);
    let var = |d: &[f64]| {
        let m = d.iter().sum::<f64>() / d.len() as f64;
        d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64
    };
    let paired: Vec<f64> =
        (0..4000).map(|p| profit(&paths, p, &x, &e.trading) - profit(&paths, p, &y, &e.trading)).collect();
    let unpaired: Vec<f64> =
        (0..4000).map(|p| profit(&paths, p, &x, &e.trading) - profit(&other, p, &y, &e.trading)).collect();
    assert!(var(&paired) < 0.1 * var(&unpaired), "{} vs {}", var(&paired), var(&unpaired));
}
