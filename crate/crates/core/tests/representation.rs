use std::collections::BTreeMap;

use proptest::prelude::*;
use rapl_core::frames::FeatureSequence;
use rapl_core::linalg::Matrix;
use rapl_core::ot::SinkhornConfig;
use rapl_core::representation::{
    mean_loss, train_representation, triplet_loss, triplet_loss_and_grad, triplet_preference_prob,
    GradientConfig, LinearEmbedding, PreferenceTriplet, TrainConfig, TripletFeatures,
};

const NB: usize = 6;

fn sequence(len: usize) -> impl Strategy<Value = FeatureSequence> {
    prop::collection::vec(-1.0..1.0f64, len * NB).prop_map(|v| FeatureSequence::from_flat(NB, v).unwrap())
}

fn sk() -> SinkhornConfig {
    SinkhornConfig::new(0.05, 10_000, 1e-8).unwrap()
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    d.frobenius_norm() / a.frobenius_norm().max(b.frobenius_norm()).max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn preference_complement(a in 0.0..4.0f64, b in 0.0..4.0f64) {
        let total = triplet_preference_prob(a, b) + triplet_preference_prob(b, a);
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn loss_is_scale_invariant(
        seed in any::<u64>(),
        c in 0.05..20.0f64,
        a in sequence(4),
        p in sequence(5),
        n in sequence(3),
    ) {
        let emb = LinearEmbedding::random(4, NB, seed);
        let trip = TripletFeatures { anchor: &a, positive: &p, negative: &n };
        let base = triplet_loss(&emb, trip, &sk());
        let scaled = triplet_loss(&emb.scaled(c), trip, &sk());
        if let (Ok(x), Ok(y)) = (base, scaled) {
            prop_assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences(
        seed in any::<u64>(),
        a in sequence(4),
        p in sequence(4),
        n in sequence(4),
    ) {
        let emb = LinearEmbedding::random(4, NB, seed);
        let trip = TripletFeatures { anchor: &a, positive: &p, negative: &n };
        let Ok((_, grad)) = triplet_loss_and_grad(&emb, trip, &GradientConfig::from(sk())) else {
            return Ok(());
        };
        let h = 1e-5;
        let fd = Matrix::from_fn(4, NB, |i, j| {
            let at = |delta: f64| {
                let mut w = emb.weights().clone();
                w.add_at(i, j, delta);
                triplet_loss(&LinearEmbedding::new(w).unwrap(), trip, &sk()).unwrap()
            };
            (at(h) - at(-h)) / (2.0 * h)
        });
        prop_assert!(rel_err(&grad, &fd) <= 1e-3, "relative error {}", rel_err(&grad, &fd));
    }

    #[test]
    fn embedding_rows_match_frames(seed in any::<u64>(), s in sequence(7)) {
        let emb = LinearEmbedding::random(3, NB, seed);
        let z = emb.embed(&s).unwrap();
        prop_assert_eq!(z.len(), s.len());
        prop_assert_eq!(z.dim(), 3);
    }
}

fn dataset(seed: u64) -> (BTreeMap<u64, FeatureSequence>, Vec<PreferenceTriplet>) {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let store: BTreeMap<u64, FeatureSequence> = (0..12u64)
        .map(|id| {
            let v = (0..5 * NB).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
            (id, FeatureSequence::from_flat(NB, v).unwrap())
        })
        .collect();
    let trips = (0..10u64)
        .map(|k| PreferenceTriplet::new(k, (k + 1) % 12, (k + 5) % 12).unwrap())
        .collect();
    (store, trips)
}

#[test]
fn small_step_full_batch_training_is_monotone() {
    for seed in 0..3 {
        let (store, trips) = dataset(seed);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 5,
            batch_size: trips.len(),
            seed,
            sinkhorn: sk(),
            ..TrainConfig::default()
        };
        let init = LinearEmbedding::random(4, NB, seed + 10);
        let out = train_representation(&init, &trips, &store, &cfg).unwrap();
        let mut losses = out.loss_history.clone();
        losses.push(mean_loss(&out.embedding, &trips, &store, &sk()).unwrap());
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{losses:?}");
        }
    }
}

#[test]
fn training_is_reproducible_and_reduces_loss() {
    let (store, trips) = dataset(4);
    let cfg = TrainConfig {
        learning_rate: 0.5,
        epochs: 30,
        batch_size: 4,
        seed: 3,
        sinkhorn: sk(),
        ..TrainConfig::default()
    };
    let init = LinearEmbedding::random(4, NB, 1);
    let a = train_representation(&init, &trips, &store, &cfg).unwrap();
    let b = train_representation(&init, &trips, &store, &cfg).unwrap();
    assert_eq!(a, b);
    let before = mean_loss(&init, &trips, &store, &sk()).unwrap();
    let after = mean_loss(&a.embedding, &trips, &store, &sk()).unwrap();
    assert!(after < before, "{before} -> {after}");
}
