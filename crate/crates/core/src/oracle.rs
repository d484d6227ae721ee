//! Simulated end-user: return-stratified trajectory pools and noise-free
//! preference labels derived from ground-truth returns.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::env::{ActionSequence, Trajectory, Vec2};
use crate::error::{Error, Result};
use crate::frames::FeatureSequence;
use crate::policy::Rollouts;
use crate::representation::{PreferenceTriplet, TrajectoryStore};
use crate::rng;

/// Attempts per triplet or pair before giving up on tied draws.
pub const MAX_RETRIES: usize = 100;
/// Candidate budget as a multiple of the pool size.
pub const OVERSAMPLE: usize = 20;

/// Trajectories with their GT returns; ids are indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPool {
    trajectories: Vec<Trajectory>,
    returns: Vec<f64>,
    bins: usize,
}

impl TrajectoryPool {
    pub fn new(trajectories: Vec<Trajectory>, bins: usize) -> Self {
        let returns = trajectories.iter().map(|t| t.gt_return()).collect();
        Self {
            trajectories,
            returns,
            bins,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn into_trajectories(self) -> Vec<Trajectory> {
        self.trajectories
    }

    pub fn get(&self, id: u64) -> Option<&Trajectory> {
        self.trajectories.get(id as usize)
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn return_of(&self, id: u64) -> Result<f64> {
        self.returns
            .get(id as usize)
            .copied()
            .ok_or(Error::UnresolvedTrajectoryId(id))
    }

    /// Occupancy of `bins` equal-width return bins over `[min, max]`.
    pub fn histogram(&self, bins: usize) -> Vec<usize> {
        let mut counts = alloc::vec![0; bins.max(1)];
        for b in bin_indices(&self.returns, bins.max(1)) {
            counts[b] += 1;
        }
        counts
    }
}

impl TrajectoryStore for TrajectoryPool {
    fn features(&self, id: u64) -> Option<&FeatureSequence> {
        self.get(id).map(|t| &t.observations)
    }
}

fn bin_indices(returns: &[f64], bins: usize) -> Vec<usize> {
    let lo = returns.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    returns
        .iter()
        .map(|&r| {
            if !(width > 0.0) {
                0
            } else {
                (libm::floor((r - lo) / width * bins as f64) as usize).min(bins - 1)
            }
        })
        .collect()
}

/// Bins candidates by return over a window of the sorted returns, trimming up
/// to 5% of outliers from either tail when a bin would otherwise stay short.
/// Members of each bin are listed in ascending return order.
fn stratify(returns: &[f64], bins: usize, quota: &dyn Fn(usize) -> usize) -> Option<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = (0..returns.len()).collect();
    order.sort_by(|&a, &b| returns[a].total_cmp(&returns[b]).then(a.cmp(&b)));
    let n = order.len();
    for trim in 0..=n / 20 {
        for low in (0..=trim).rev() {
            let window = &order[low..n - (trim - low)];
            let values: Vec<f64> = window.iter().map(|&i| returns[i]).collect();
            let mut members: Vec<Vec<usize>> = alloc::vec![Vec::new(); bins];
            for (&i, b) in window.iter().zip(bin_indices(&values, bins)) {
                members[b].push(i);
            }
            if (0..bins).all(|b| members[b].len() >= quota(b)) {
                return Some(members);
            }
        }
    }
    None
}

fn block_noise(rng: &mut rng::Rng, horizon: usize, segment: usize, scale: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(horizon);
    let mut z = [0.0, 0.0];
    for t in 0..horizon {
        if t % segment == 0 {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            z = [a * scale, b * scale];
        }
        out.push(z);
    }
    out
}

/// Candidate `k`: a smooth random walk, or the executed actions of an expert
/// with correlated noise and, half the time, an early stop.
fn candidate_actions(k: usize, experts: &[Trajectory], horizon: usize, seed: u64) -> ActionSequence {
    let mut rng = rng::child(seed, 0x62, k as u64);
    if experts.is_empty() || k % 3 == 0 {
        let scale = rng.random_range(0.005..0.04);
        let segment = rng.random_range(1..=8);
        return ActionSequence(block_noise(&mut rng, horizon, segment, scale));
    }
    let expert = &experts[(k / 3) % experts.len()];
    let base = expert.executed_actions();
    let scale = rng.random_range(0.0..0.03);
    let segment = rng.random_range(2..=8);
    let noise = block_noise(&mut rng, horizon, segment, scale);
    let stop = if rng.random_bool(0.5) {
        rng.random_range(0..=horizon)
    } else {
        horizon
    };
    ActionSequence(
        (0..horizon)
            .map(|t| {
                if t >= stop {
                    return [0.0, 0.0];
                }
                let a = base.0.get(t).copied().unwrap_or([0.0, 0.0]);
                [a[0] + noise[t][0], a[1] + noise[t][1]]
            })
            .collect(),
    )
}

/// Oversamples random-walk and perturbed-expert rollouts and keeps a subset
/// whose equal-width return histogram is flat (bin counts differ by at most 1).
/// Extreme outliers (at most 5% of candidates) may be left out of the range.
///
/// Candidates are generated in rounds of `2 x pool_size` up to
/// `OVERSAMPLE x pool_size`; the first round that fills every bin wins.
pub fn build_pool(
    rollouts: &Rollouts<'_>,
    experts: &[Trajectory],
    pool_size: usize,
    bins: usize,
    seed: u64,
) -> Result<TrajectoryPool> {
    if bins == 0 || pool_size < bins {
        return Err(Error::InvalidConfig("build_pool needs pool_size >= bins >= 1"));
    }
    let quota = |b: usize| pool_size / bins + usize::from(b < pool_size % bins);
    let round = 2 * pool_size;
    let mut candidates: Vec<Trajectory> = Vec::new();
    while candidates.len() < OVERSAMPLE * pool_size {
        let start = candidates.len();
        for k in start..start + round {
            let actions = candidate_actions(k, experts, rollouts.horizon, seed);
            candidates.push(rollouts.run(&actions, rng::derive(seed, 0x61, k as u64))?);
        }
        let returns: Vec<f64> = candidates.iter().map(|t| t.gt_return()).collect();
        let Some(members) = stratify(&returns, bins, &quota) else {
            continue;
        };
        let mut rng = rng::child(seed, 0x63, 0);
        let lo = members[0][0];
        let hi = *members[bins - 1].last().expect("bins are filled");
        let mut chosen = Vec::with_capacity(pool_size);
        for (b, mut m) in members.into_iter().enumerate() {
            m.shuffle(&mut rng);
            // keep the extremes so the pool spans the same bin edges
            for extreme in [hi, lo] {
                if let Some(pos) = m.iter().position(|&i| i == extreme) {
                    let i = m.remove(pos);
                    m.insert(0, i);
                }
            }
            chosen.extend_from_slice(&m[..quota(b)]);
        }
        chosen.shuffle(&mut rng);
        let mut slots: Vec<Option<Trajectory>> = candidates.into_iter().map(Some).collect();
        let picked = chosen
            .into_iter()
            .map(|i| slots[i].take().expect("indices are distinct"))
            .collect();
        return Ok(TrajectoryPool::new(picked, bins));
    }
    Err(Error::InsufficientDiversity(bins))
}

/// Anchor = highest return, positive = middle, negative = lowest.
pub fn rank_triplet(a: (u64, f64), b: (u64, f64), c: (u64, f64)) -> Result<PreferenceTriplet> {
    if a.1 == b.1 || b.1 == c.1 || a.1 == c.1 {
        return Err(Error::TiedReturns);
    }
    let mut items = [a, b, c];
    items.sort_by(|x, y| y.1.total_cmp(&x.1));
    PreferenceTriplet::new(items[0].0, items[1].0, items[2].0)
}

/// Preferred-first ordering of two trajectories.
pub fn rank_pair(a: (u64, f64), b: (u64, f64)) -> Result<(u64, u64)> {
    if a.1 == b.1 {
        return Err(Error::TiedReturns);
    }
    if a.0 == b.0 {
        return Err(Error::InvalidConfig("pair sides must differ"));
    }
    Ok(if a.1 > b.1 { (a.0, b.0) } else { (b.0, a.0) })
}

fn distinct<const N: usize>(rng: &mut rng::Rng, n: usize) -> [u64; N] {
    let mut out = [0u64; N];
    let mut k = 0;
    while k < N {
        let candidate = rng.random_range(0..n) as u64;
        if !out[..k].contains(&candidate) {
            out[k] = candidate;
            k += 1;
        }
    }
    out
}

/// `n` triplets of distinct pool members drawn uniformly.
pub fn make_triplets(pool: &TrajectoryPool, n: usize, seed: u64) -> Result<Vec<PreferenceTriplet>> {
    if pool.len() < 3 && n > 0 {
        return Err(Error::InvalidConfig("make_triplets needs a pool of >= 3"));
    }
    let mut rng = rng::child(seed, 0x64, 0);
    (0..n)
        .map(|_| {
            for _ in 0..MAX_RETRIES {
                let [a, b, c] = distinct::<3>(&mut rng, pool.len());
                let r = |id| (id, pool.returns[id as usize]);
                match rank_triplet(r(a), r(b), r(c)) {
                    Err(Error::TiedReturns) => continue,
                    other => return other,
                }
            }
            Err(Error::RetryExhausted)
        })
        .collect()
}

/// `n` labelled pairs `(preferred, dispreferred)` drawn uniformly.
pub fn make_pairs(pool: &TrajectoryPool, n: usize, seed: u64) -> Result<Vec<(u64, u64)>> {
    if pool.len() < 2 && n > 0 {
        return Err(Error::InvalidConfig("make_pairs needs a pool of >= 2"));
    }
    let mut rng = rng::child(seed, 0x65, 0);
    (0..n)
        .map(|_| {
            for _ in 0..MAX_RETRIES {
                let [a, b] = distinct::<2>(&mut rng, pool.len());
                let r = |id| (id, pool.returns[id as usize]);
                match rank_pair(r(a), r(b)) {
                    Err(Error::TiedReturns) => continue,
                    other => return other,
                }
            }
            Err(Error::RetryExhausted)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        let t = rank_triplet((0, 5.0), (1, 3.0), (2, 1.0)).unwrap();
        assert_eq!((t.anchor, t.positive, t.negative), (0, 1, 2));
        let t = rank_triplet((0, 1.0), (1, 3.0), (2, 5.0)).unwrap();
        assert_eq!((t.anchor, t.positive, t.negative), (2, 1, 0));
        assert_eq!(rank_triplet((0, 3.0), (1, 3.0), (2, 1.0)), Err(Error::TiedReturns));
        assert_eq!(rank_pair((0, 2.0), (1, 7.0)), Ok((1, 0)));
    }

    #[test]
    fn bins_cover_range() {
        let idx = bin_indices(&[0.0, 0.5, 1.0, 0.99], 2);
        assert_eq!(idx, alloc::vec![0, 1, 1, 1]);
        assert_eq!(bin_indices(&[2.0, 2.0], 3), alloc::vec![0, 0]);
    }
}
