//! Direct preference optimisation of a diagonal-Gaussian action-sequence
//! policy against a frozen reference, with synthetic rankings from any scorer.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::env::{ActionSequence, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::oracle::MAX_RETRIES;
use crate::policy::{success, ActionSequencePolicy, Calibration, Rollouts};
use crate::representation::{sigmoid, softplus};
use crate::reward_models::{GroundTruth, Scorer};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    /// Initial-state seed both sequences were rolled out from.
    pub context: u64,
    pub preferred: ActionSequence,
    pub dispreferred: ActionSequence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpoConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub min_std: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            learning_rate: 1e-5,
            epochs: 100,
            batch_size: 20,
            seed: 0,
            min_std: 1e-3,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig("alpha must be > 0"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || !(self.min_std > 0.0) {
            return Err(Error::InvalidConfig("dpo learning_rate, batch_size, min_std must be > 0"));
        }
        Ok(())
    }
}

/// Per-timestep mean of the demos' executed actions; std is the sample std
/// floored at `noise_scale` (exactly `noise_scale` for a single demo).
pub fn fit_reference(demos: &[Trajectory], noise_scale: f64, _seed: u64) -> Result<ActionSequencePolicy> {
    let first = demos.first().ok_or(Error::EmptyDemos)?;
    if !(noise_scale > 0.0) {
        return Err(Error::InvalidConfig("noise_scale must be > 0"));
    }
    let horizon = first.horizon();
    let actions: Vec<ActionSequence> = demos.iter().map(|d| d.executed_actions()).collect();
    if actions.iter().any(|a| a.len() != horizon) {
        return Err(Error::LengthMismatch(horizon, 0));
    }
    let n = demos.len() as f64;
    let mut mean = Matrix::zeros(horizon, 2);
    let mut std = Matrix::filled(horizon, 2, noise_scale);
    for t in 0..horizon {
        for d in 0..2 {
            let m = actions.iter().map(|a| a.0[t][d]).sum::<f64>() / n;
            mean.set(t, d, m);
            if demos.len() > 1 {
                let var = actions
                    .iter()
                    .map(|a| (a.0[t][d] - m) * (a.0[t][d] - m))
                    .sum::<f64>()
                    / (n - 1.0);
                std.set(t, d, libm::sqrt(var).max(noise_scale));
            }
        }
    }
    ActionSequencePolicy::new(mean, std)
}

/// `(d/dmean, d/dstd)` of the diagonal-Gaussian log-density at `actions`.
fn log_density_grad(policy: &ActionSequencePolicy, actions: &ActionSequence) -> (Matrix, Matrix) {
    let h = policy.horizon();
    let mut gm = Matrix::zeros(h, 2);
    let mut gs = Matrix::zeros(h, 2);
    for t in 0..h {
        for d in 0..2 {
            let s = policy.std().get(t, d);
            let e = actions.0[t][d] - policy.mean().get(t, d);
            gm.set(t, d, e / (s * s));
            gs.set(t, d, e * e / (s * s * s) - 1.0 / s);
        }
    }
    (gm, gs)
}

fn margin(
    pair: &PreferencePair,
    policy: &ActionSequencePolicy,
    reference: &ActionSequencePolicy,
) -> Result<f64> {
    let plus = policy.log_density(&pair.preferred)? - reference.log_density(&pair.preferred)?;
    let minus = policy.log_density(&pair.dispreferred)? - reference.log_density(&pair.dispreferred)?;
    let m = plus - minus;
    if !m.is_finite() {
        return Err(Error::NonFiniteDensity);
    }
    Ok(m)
}

/// Probability the policy assigns to `preferred` winning:
/// `sigmoid(alpha (Delta+ - Delta-))` with `Delta = log pi - log pi_ref`.
pub fn dpo_preference_prob(
    pair: &PreferencePair,
    policy: &ActionSequencePolicy,
    reference: &ActionSequencePolicy,
    alpha: f64,
) -> Result<f64> {
    Ok(sigmoid(alpha * margin(pair, policy, reference)?))
}

/// `-log sigmoid(alpha (Delta+ - Delta-))`.
pub fn dpo_loss(
    pair: &PreferencePair,
    policy: &ActionSequencePolicy,
    reference: &ActionSequencePolicy,
    alpha: f64,
) -> Result<f64> {
    Ok(softplus(-alpha * margin(pair, policy, reference)?))
}

/// Loss with its gradient with respect to the policy's mean and std.
pub fn dpo_loss_and_grad(
    pair: &PreferencePair,
    policy: &ActionSequencePolicy,
    reference: &ActionSequencePolicy,
    alpha: f64,
) -> Result<(f64, Matrix, Matrix)> {
    let m = margin(pair, policy, reference)?;
    let coef = -alpha * sigmoid(-alpha * m);
    let (mut gm, mut gs) = log_density_grad(policy, &pair.preferred);
    let (nm, ns) = log_density_grad(policy, &pair.dispreferred);
    gm.axpy(-1.0, &nm);
    gs.axpy(-1.0, &ns);
    gm.scale(coef);
    gs.scale(coef);
    Ok((softplus(-alpha * m), gm, gs))
}

pub fn mean_dpo_loss(
    pairs: &[PreferencePair],
    policy: &ActionSequencePolicy,
    reference: &ActionSequencePolicy,
    alpha: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("at least one pair required"));
    }
    let mut total = 0.0;
    for p in pairs {
        total += dpo_loss(p, policy, reference, alpha)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Minibatch gradient descent on the mean DPO loss; std is floored after
/// every step.
pub fn dpo_finetune(
    reference: &ActionSequencePolicy,
    pairs: &[PreferencePair],
    config: &DpoConfig,
) -> Result<ActionSequencePolicy> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("dpo_finetune needs at least one pair"));
    }
    let h = reference.horizon();
    if pairs
        .iter()
        .any(|p| p.preferred.len() != h || p.dispreferred.len() != h)
    {
        return Err(Error::LengthMismatch(h, 0));
    }
    let mut mean = reference.mean().clone();
    let mut std = reference.std().clone();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::child(config.seed, 0x74, epoch as u64));
        for batch in order.chunks(config.batch_size) {
            let policy = ActionSequencePolicy::new(mean.clone(), std.clone())?;
            let mut gm = Matrix::zeros(h, 2);
            let mut gs = Matrix::zeros(h, 2);
            for &i in batch {
                let (_, a, b) = dpo_loss_and_grad(&pairs[i], &policy, reference, config.alpha)?;
                gm.axpy(1.0, &a);
                gs.axpy(1.0, &b);
            }
            let step = -config.learning_rate / batch.len() as f64;
            mean.axpy(step, &gm);
            std.axpy(step, &gs);
            for s in std.as_mut_slice() {
                *s = s.max(config.min_std);
            }
        }
    }
    ActionSequencePolicy::new(mean, std)
}

/// Context seed of synthetic ranking `i`.
pub fn ranking_context(seed: u64, i: usize) -> u64 {
    rng::derive(seed, 0x71, i as u64)
}

/// Two reference samples per context, labelled by the scorer's return.
pub fn synth_rankings<S: Scorer + ?Sized>(
    reference: &ActionSequencePolicy,
    scorer: &S,
    rollouts: &Rollouts<'_>,
    n: usize,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be >= 1"));
    }
    (0..n)
        .map(|i| {
            let context = ranking_context(seed, i);
            for attempt in 0..MAX_RETRIES {
                let mut rng = rng::child(rng::derive(seed, 0x72, i as u64), 0x72, attempt as u64);
                let a = reference.sample(&mut rng);
                let b = reference.sample(&mut rng);
                let ra = scorer.score(&rollouts.run(&a, context)?)?.total();
                let rb = scorer.score(&rollouts.run(&b, context)?)?.total();
                if ra == rb || a == b {
                    continue;
                }
                let (preferred, dispreferred) = if ra > rb { (a, b) } else { (b, a) };
                return Ok(PreferencePair {
                    context,
                    preferred,
                    dispreferred,
                });
            }
            Err(Error::RetryExhausted)
        })
        .collect()
}

/// Fraction of pairs whose label agrees with the GT return ordering.
pub fn label_agreement(pairs: &[PreferencePair], rollouts: &Rollouts<'_>) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("at least one pair required"));
    }
    let mut agree = 0usize;
    for p in pairs {
        let rp = GroundTruth.score(&rollouts.run(&p.preferred, p.context)?)?.total();
        let rn = GroundTruth.score(&rollouts.run(&p.dispreferred, p.context)?)?.total();
        if rp > rn {
            agree += 1;
        }
    }
    Ok(agree as f64 / pairs.len() as f64)
}

/// Fraction of `n_configs` fresh contexts where the mean-action rollout
/// succeeds.
pub fn alignment_score(
    policy: &ActionSequencePolicy,
    rollouts: &Rollouts<'_>,
    calibration: &Calibration,
    n_configs: usize,
    seed: u64,
) -> Result<f64> {
    if n_configs == 0 {
        return Err(Error::InvalidConfig("n_configs must be >= 1"));
    }
    let actions = policy.mean_actions();
    let mut hits = 0usize;
    for i in 0..n_configs {
        let traj = rollouts.run(&actions, rng::derive(seed, 0x73, i as u64))?;
        if success(&traj, calibration)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_configs as f64)
}
