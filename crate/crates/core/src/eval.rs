//! Rank correlation of reward traces against ground truth.

use alloc::string::String;
use alloc::vec::Vec;

use crate::env::{TaskKind, Trajectory};
use crate::error::{Error, Result};
use crate::reward_models::{RewardTrace, Scorer};

/// Fractional (average) ranks starting at 1.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0)
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::LengthMismatch(2, a.len()));
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(a) || constant(b) {
        return Err(Error::ConstantTrace);
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

pub fn spearman(a: &RewardTrace, b: &RewardTrace) -> Result<f64> {
    spearman_values(a.values(), b.values())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodCorrelation {
    pub method: String,
    pub mean_spearman: f64,
    /// Trajectories that entered the mean.
    pub n: usize,
    /// Trajectories skipped because a trace was constant.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub task: TaskKind,
    pub embodiment: String,
    pub methods: Vec<MethodCorrelation>,
}

impl CorrelationReport {
    pub fn get(&self, method: &str) -> Option<&MethodCorrelation> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Per-trajectory Spearman against the stored GT trace, averaged per method.
pub fn method_correlation<S: Scorer + ?Sized>(
    name: &str,
    scorer: &S,
    pool: &[Trajectory],
) -> Result<MethodCorrelation> {
    let traces = pool
        .iter()
        .map(|t| scorer.score(t))
        .collect::<Result<Vec<_>>>()?;
    correlation_from_traces(name, &traces, pool)
}

/// Same as [`method_correlation`] over precomputed traces.
pub fn correlation_from_traces(
    name: &str,
    traces: &[RewardTrace],
    pool: &[Trajectory],
) -> Result<MethodCorrelation> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if traces.len() != pool.len() {
        return Err(Error::LengthMismatch(pool.len(), traces.len()));
    }
    let mut total = 0.0;
    let mut n = 0;
    let mut skipped = 0;
    for (trace, traj) in traces.iter().zip(pool) {
        match spearman(trace, &traj.gt_rewards) {
            Ok(rho) => {
                total += rho;
                n += 1;
            }
            Err(Error::ConstantTrace) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(MethodCorrelation {
        method: name.into(),
        mean_spearman: if n > 0 { total / n as f64 } else { f64::NAN },
        n,
        skipped,
    })
}

pub fn correlation_report(
    scorers: &[(&str, &dyn Scorer)],
    pool: &[Trajectory],
    task: TaskKind,
    embodiment: &str,
) -> Result<CorrelationReport> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let methods = scorers
        .iter()
        .map(|(name, s)| method_correlation(name, *s, pool))
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationReport {
        task,
        embodiment: embodiment.into(),
        methods,
    })
}
