use proptest::prelude::*;
use rapl_core::eval::{average_ranks, spearman_values};
use rapl_core::Error;

#[test]
fn average_ranks_share_ties() {
    assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
}

#[test]
fn constant_trace_is_an_error() {
    assert_eq!(spearman_values(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::ConstantTrace));
}

fn distinct(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, n).prop_filter("needs variation", |v| v.iter().any(|x| *x != v[0]))
}

proptest! {
    #[test]
    fn monotone_maps_give_unit_correlation(v in distinct(12)) {
        let up: Vec<f64> = v.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        let down: Vec<f64> = v.iter().map(|x| -x.powi(3) - x).collect();
        prop_assert!((spearman_values(&v, &up).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((spearman_values(&v, &down).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_is_symmetric(a in distinct(10), b in distinct(10)) {
        prop_assert_eq!(spearman_values(&a, &b).unwrap(), spearman_values(&b, &a).unwrap());
    }

    #[test]
    fn correlation_ignores_positive_affine_maps(a in distinct(10), b in distinct(10), s in 0.1..10.0f64, c in -5.0..5.0f64) {
        let mapped: Vec<f64> = a.iter().map(|x| s * x + c).collect();
        let base = spearman_values(&a, &b).unwrap();
        if average_ranks(&mapped) == average_ranks(&a) {
            prop_assert!((spearman_values(&mapped, &b).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_is_bounded(a in distinct(8), b in distinct(8)) {
        let rho = spearman_values(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&rho));
    }
}
