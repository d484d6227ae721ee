use proptest::prelude::*;
use rapl_core::frames::FrameSequence;
use rapl_core::linalg::Matrix;
use rapl_core::ot::{self, CostMatrix, SinkhornConfig};

fn sequence(max_len: usize, dim: usize) -> impl Strategy<Value = FrameSequence> {
    (1..=max_len).prop_flat_map(move |len| {
        prop::collection::vec(0.1..1.0f64, len * dim)
            .prop_map(move |mut v| {
                // alternate signs so frames point in varied directions while staying nonzero
                for (i, x) in v.iter_mut().enumerate() {
                    if i % 3 == 1 {
                        *x = -*x;
                    }
                }
                FrameSequence::from_flat(dim, v).unwrap()
            })
    })
}

fn cost(max: usize) -> impl Strategy<Value = CostMatrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(0.0..2.0f64, r * c)
            .prop_map(move |v| CostMatrix::new(Matrix::from_vec(r, c, v).unwrap()).unwrap())
    })
}

fn config() -> SinkhornConfig {
    SinkhornConfig::new(0.05, 10_000, 1e-8).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plans_are_feasible(c in cost(24), eps in prop::sample::select(vec![0.01, 0.05, 0.5, 2.0])) {
        let plan = ot::sinkhorn(&c, &SinkhornConfig::new(eps, 10_000, 1e-8).unwrap()).unwrap();
        prop_assert!(plan.marginal_residual() < 1e-8);
        prop_assert!(plan.mass().as_slice().iter().all(|m| *m >= 0.0));
        prop_assert!((plan.mass().sum() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn distance_is_symmetric(a in sequence(10, 4), b in sequence(10, 4)) {
        let ab = ot::couple(&a, &b, &config()).unwrap().distance;
        let ba = ot::couple(&b, &a, &config()).unwrap().distance;
        prop_assert!((ab - ba).abs() < 1e-9, "{ab} vs {ba}");
    }

    #[test]
    fn distance_ignores_frame_order(a in sequence(10, 4), b in sequence(10, 4), key in any::<u64>()) {
        let mut order: Vec<usize> = (0..a.len()).collect();
        order.sort_by_key(|&i| rapl_core::rng::derive(key, 0, i as u64));
        let base = ot::couple(&a, &b, &config()).unwrap().distance;
        let shuffled = ot::couple(&a.permuted(&order), &b, &config()).unwrap().distance;
        prop_assert!((base - shuffled).abs() < 1e-9, "{base} vs {shuffled}");
    }

    #[test]
    fn reward_sums_to_negative_distance(a in sequence(10, 4), b in sequence(10, 4)) {
        let coupling = ot::couple(&a, &b, &config()).unwrap();
        let trace = ot::reward_from_coupling(&coupling);
        prop_assert_eq!(trace.len(), a.len());
        prop_assert!((trace.total() + coupling.distance).abs() < 1e-9);
    }

    #[test]
    fn diagonality_in_unit_interval(n in 1..12usize, v in prop::collection::vec(0.0..2.0f64, 144)) {
        let c = CostMatrix::new(Matrix::from_vec(n, n, v[..n * n].to_vec()).unwrap()).unwrap();
        let plan = ot::sinkhorn(&c, &config()).unwrap();
        let d = ot::plan_diagonality(&plan).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn cosine_cost_in_range(a in prop::collection::vec(-1.0..1.0f64, 5), b in prop::collection::vec(-1.0..1.0f64, 5)) {
        if let Ok(c) = ot::cosine_cost(&a, &b) {
            prop_assert!((0.0..=2.0).contains(&c));
        }
    }
}

#[test]
fn self_coupling_reward_is_near_zero() {
    let v: Vec<f64> = (0..8 * 5).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0 + 0.05).collect();
    let a = FrameSequence::from_flat(5, v).unwrap();
    let trace = ot::ot_reward_trace(&a, &a, &SinkhornConfig::new(0.01, 10_000, 1e-8).unwrap()).unwrap();
    assert!(trace.values().iter().all(|r| r.abs() < 1e-3), "{:?}", trace.values());
}

#[test]
fn permutation_enumeration_matches_small_epsilon() {
    // 3x3 with a unique optimal assignment (0->2, 1->0, 2->1), cost 0.1 each
    let c = CostMatrix::new(
        Matrix::from_vec(3, 3, vec![1.0, 1.5, 0.1, 0.1, 1.2, 1.9, 1.4, 0.1, 1.0]).unwrap(),
    )
    .unwrap();
    let plan = ot::sinkhorn(&c, &SinkhornConfig::new(1e-3, 10_000, 1e-8).unwrap()).unwrap();
    let d = ot::ot_distance(&c, &plan).unwrap();
    assert!((d - 0.1).abs() < 1e-2 * 1.9);
    for (i, j) in [(0, 2), (1, 0), (2, 1)] {
        assert!((plan.get(i, j) - 1.0 / 3.0).abs() < 1e-3);
    }
}
