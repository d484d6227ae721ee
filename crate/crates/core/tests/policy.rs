mod common;

use std::cell::RefCell;

use proptest::prelude::*;
use rapl_core::env::{ActionSequence, TaskKind};
use rapl_core::linalg::Matrix;
use rapl_core::policy::{
    cem_search, success, threshold_from_returns, ActionSequencePolicy, Calibration, CemConfig,
};

fn toy_target(t: usize) -> [f64; 2] {
    [0.01 * (t as f64).sin(), -0.005 * t as f64 / 4.0]
}

/// Negative squared distance to a fixed sequence.
fn toy_score(a: &ActionSequence) -> f64 {
    -a.0.iter()
        .enumerate()
        .map(|(t, x)| {
            let g = toy_target(t);
            (x[0] - g[0]).powi(2) + (x[1] - g[1]).powi(2)
        })
        .sum::<f64>()
}

fn toy_config(seed: u64) -> CemConfig {
    CemConfig {
        iterations: 25,
        population: 40,
        elite_fraction: 0.2,
        seed,
        ..CemConfig::default()
    }
}

#[test]
fn threshold_is_ten_percent_below_the_mean() {
    assert!((threshold_from_returns(&[-10.0, -20.0]).unwrap() - -16.5).abs() < 1e-12);
    assert!((threshold_from_returns(&[4.0]).unwrap() - 3.6).abs() < 1e-12);
    assert!(threshold_from_returns(&[]).is_err());
}

#[test]
fn success_matches_threshold() {
    let lift = common::lift();
    let pool = common::pool(&lift, 20, 4, 5);
    let mut cal = Calibration::new();
    cal.calibrate(&pool.trajectories()[..5]).unwrap();
    let tau = cal.tau(TaskKind::Group, "medium").unwrap();
    for t in pool.trajectories() {
        assert_eq!(success(t, &cal).unwrap(), t.gt_return() >= tau);
    }
    assert!(cal.tau(TaskKind::Avoid, "medium").is_err());
}

#[test]
fn best_score_never_decreases_and_improves() {
    for seed in 0..3 {
        let (_, best, iters, _) = cem_search(
            8,
            &toy_config(seed),
            None,
            |pop| Ok(pop.iter().map(toy_score).collect()),
            |_, _| Ok(0.0),
        )
        .unwrap();
        for w in iters.windows(2) {
            assert!(w[1].best_score >= w[0].best_score);
        }
        assert_eq!(iters.last().unwrap().best_score, toy_score(&best));
        assert!(toy_score(&best) > toy_score(&ActionSequence::zeros(8)));
    }
}

#[test]
fn first_refit_is_the_elite_moments() {
    let seen = RefCell::new(Vec::new());
    let cfg = CemConfig { iterations: 1, population: 10, elite_fraction: 0.3, min_std: 1e-12, ..toy_config(4) };
    let (policy, _, _, _) = cem_search(
        5,
        &cfg,
        None,
        |pop| {
            seen.borrow_mut().extend_from_slice(pop);
            Ok(pop.iter().map(toy_score).collect())
        },
        |_, _| Ok(0.0),
    )
    .unwrap();
    let mut pop = seen.into_inner();
    pop.sort_by(|a, b| toy_score(b).total_cmp(&toy_score(a)));
    let elite = &pop[..3];
    for t in 0..5 {
        for d in 0..2 {
            let mean = elite.iter().map(|a| a.0[t][d]).sum::<f64>() / 3.0;
            let var = elite.iter().map(|a| (a.0[t][d] - mean).powi(2)).sum::<f64>() / 3.0;
            assert!((policy.mean().get(t, d) - mean).abs() < 1e-15);
            assert!((policy.std().get(t, d) - var.sqrt()).abs() < 1e-12);
        }
    }
}

#[test]
fn search_is_reproducible() {
    let run = || {
        cem_search(6, &toy_config(9), None, |pop| Ok(pop.iter().map(toy_score).collect()), |_, _| Ok(0.0))
            .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        CemConfig { population: 0, ..CemConfig::default() },
        CemConfig { elite_fraction: 0.0, ..CemConfig::default() },
        CemConfig { population: 5, elite_fraction: 0.1, ..CemConfig::default() },
        CemConfig { segment: 0, ..CemConfig::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}

proptest! {
    #[test]
    fn log_density_is_a_diagonal_gaussian(
        mean in prop::collection::vec(-0.05..0.05f64, 8),
        std in prop::collection::vec(0.001..0.1f64, 8),
        x in prop::collection::vec(-0.1..0.1f64, 8),
    ) {
        let p = ActionSequencePolicy::new(
            Matrix::from_vec(4, 2, mean.clone()).unwrap(),
            Matrix::from_vec(4, 2, std.clone()).unwrap(),
        ).unwrap();
        let a = ActionSequence(x.chunks(2).map(|c| [c[0], c[1]]).collect());
        let expected: f64 = (0..8)
            .map(|i| {
                let z = (x[i] - mean[i]) / std[i];
                -0.5 * z * z - std[i].ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .sum();
        prop_assert!((p.log_density(&a).unwrap() - expected).abs() < 1e-9 * expected.abs().max(1.0));
    }
}
