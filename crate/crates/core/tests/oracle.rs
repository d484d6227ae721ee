mod common;

use proptest::prelude::*;
use rapl_core::oracle::{make_pairs, make_triplets, rank_pair, rank_triplet};
use rapl_core::Error;

#[test]
fn pool_histogram_is_flat() {
    let lift = common::lift();
    for (size, bins) in [(30, 5), (31, 4), (20, 1)] {
        let pool = common::pool(&lift, size, bins, 7);
        assert_eq!(pool.len(), size);
        let hist = pool.histogram(bins);
        assert_eq!(hist.iter().sum::<usize>(), size);
        let spread = hist.iter().max().unwrap() - hist.iter().min().unwrap();
        assert!(spread <= 1, "{hist:?}");
    }
}

#[test]
fn pool_is_reproducible() {
    let lift = common::lift();
    assert_eq!(common::pool(&lift, 24, 4, 1), common::pool(&lift, 24, 4, 1));
}

#[test]
fn pool_ids_index_returns() {
    let lift = common::lift();
    let pool = common::pool(&lift, 24, 4, 2);
    for (i, t) in pool.trajectories().iter().enumerate() {
        assert_eq!(pool.return_of(i as u64).unwrap(), t.gt_return());
    }
}

#[test]
fn triplets_and_pairs_are_ordered_by_return() {
    let lift = common::lift();
    let pool = common::pool(&lift, 30, 5, 3);
    let r = |id| pool.return_of(id).unwrap();
    let trips = make_triplets(&pool, 50, 9).unwrap();
    assert_eq!(trips.len(), 50);
    for t in &trips {
        assert!(r(t.anchor) > r(t.positive) && r(t.positive) > r(t.negative));
    }
    assert_eq!(trips, make_triplets(&pool, 50, 9).unwrap());
    for (a, b) in make_pairs(&pool, 50, 9).unwrap() {
        assert!(r(a) > r(b));
    }
}

#[test]
fn ties_are_rejected() {
    assert_eq!(rank_triplet((0, 1.0), (1, 1.0), (2, 0.0)), Err(Error::TiedReturns));
    assert_eq!(rank_pair((0, -2.0), (1, -2.0)), Err(Error::TiedReturns));
}

proptest! {
    #[test]
    fn rank_triplet_is_order_free(
        ret in prop::collection::vec(-10.0..0.0f64, 3),
        perm in prop::sample::select(vec![[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]]),
    ) {
        prop_assume!(ret[0] != ret[1] && ret[1] != ret[2] && ret[0] != ret[2]);
        let items: Vec<(u64, f64)> = (0..3).map(|i| (i as u64, ret[i])).collect();
        let base = rank_triplet(items[0], items[1], items[2]).unwrap();
        let shuffled = rank_triplet(items[perm[0]], items[perm[1]], items[perm[2]]).unwrap();
        prop_assert_eq!(base, shuffled);
        let r = |id: u64| ret[id as usize];
        prop_assert!(r(base.anchor) > r(base.positive) && r(base.positive) > r(base.negative));
    }
}
