//! Reward scorers that map a trajectory to a per-step [`RewardTrace`].

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::env::{gt_reward, Trajectory};
use crate::error::{Error, Result};
use crate::frames::{EmbeddingSequence, FeatureSequence};
use crate::linalg;
use crate::ot::{self, SinkhornConfig};
use crate::representation::{sigmoid, softplus, LinearEmbedding, LATENT_DIM};
use crate::rng;

/// Per-timestep scalar rewards.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardTrace {
    values: Vec<f64>,
}

impl RewardTrace {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for RewardTrace {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

pub trait Scorer {
    fn score(&self, trajectory: &Trajectory) -> Result<RewardTrace>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, trajectory: &Trajectory) -> Result<RewardTrace> {
        (**self).score(trajectory)
    }
}

/// Re-evaluates the ground-truth reward from the privileged states.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruth;

impl Scorer for GroundTruth {
    fn score(&self, trajectory: &Trajectory) -> Result<RewardTrace> {
        trajectory.states[1..]
            .iter()
            .map(|s| gt_reward(s, trajectory.task))
            .collect::<Result<Vec<_>>>()
            .map(RewardTrace::new)
    }
}

/// OT reward against the closest demonstration in an embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct RaplReward {
    embedding: LinearEmbedding,
    experts: Vec<EmbeddingSequence>,
    sinkhorn: SinkhornConfig,
}

impl RaplReward {
    pub fn new(
        embedding: LinearEmbedding,
        expert_observations: &[&FeatureSequence],
        sinkhorn: SinkhornConfig,
    ) -> Result<Self> {
        if expert_observations.is_empty() {
            return Err(Error::EmptyExpertSet);
        }
        sinkhorn.validate()?;
        let experts = expert_observations
            .iter()
            .map(|f| embedding.embed(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embedding,
            experts,
            sinkhorn,
        })
    }

    /// Uses the observations of the given demonstration trajectories.
    pub fn from_demos(
        embedding: LinearEmbedding,
        demos: &[Trajectory],
        sinkhorn: SinkhornConfig,
    ) -> Result<Self> {
        let obs: Vec<&FeatureSequence> = demos.iter().map(|d| &d.observations).collect();
        Self::new(embedding, &obs, sinkhorn)
    }

    /// Same structure over a frozen random embedding drawn from `seed`.
    pub fn unaligned(
        feature_dim: usize,
        demos: &[Trajectory],
        sinkhorn: SinkhornConfig,
        seed: u64,
    ) -> Result<Self> {
        Self::from_demos(LinearEmbedding::random(LATENT_DIM, feature_dim, seed), demos, sinkhorn)
    }

    pub fn embedding(&self) -> &LinearEmbedding {
        &self.embedding
    }

    pub fn experts(&self) -> &[EmbeddingSequence] {
        &self.experts
    }

    pub fn sinkhorn(&self) -> &SinkhornConfig {
        &self.sinkhorn
    }

    /// Reward trace of `observations` plus the index of the expert used.
    pub fn score_observations(&self, observations: &FeatureSequence) -> Result<(usize, RewardTrace)> {
        if observations.is_empty() {
            return Err(Error::EmptySequence);
        }
        let robot = self.embedding.embed(observations)?;
        let (index, coupling) = ot::closest_expert_coupling(&robot, &self.experts, &self.sinkhorn)?;
        Ok((index, ot::reward_from_coupling(&coupling)))
    }
}

impl Scorer for RaplReward {
    fn score(&self, trajectory: &Trajectory) -> Result<RewardTrace> {
        self.score_observations(&trajectory.observations).map(|(_, r)| r)
    }
}

/// RAPL scorer; see [`RaplReward`].
pub fn rapl_score(model: &RaplReward, trajectory: &Trajectory) -> Result<RewardTrace> {
    model.score(trajectory)
}

/// RAPL structure on a random embedding from `seed`.
pub fn unaligned_ot_score(
    trajectory: &Trajectory,
    expert_set: &[Trajectory],
    sinkhorn: SinkhornConfig,
    seed: u64,
) -> Result<RewardTrace> {
    RaplReward::unaligned(trajectory.observations.dim(), expert_set, sinkhorn, seed)?.score(trajectory)
}

/// `r_t = w . f_t + b` on base features.
#[derive(Debug, Clone, PartialEq)]
pub struct RlhfReward {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl RlhfReward {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn frame_reward(&self, features: &[f64]) -> f64 {
        linalg::dot(&self.weights, features) + self.bias
    }

    pub fn score_observations(&self, observations: &FeatureSequence) -> Result<RewardTrace> {
        if observations.dim() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: observations.dim(),
            });
        }
        Ok(RewardTrace::new(
            observations.frames().map(|f| self.frame_reward(f)).collect(),
        ))
    }
}

impl Scorer for RlhfReward {
    fn score(&self, trajectory: &Trajectory) -> Result<RewardTrace> {
        self.score_observations(&trajectory.observations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlhfConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for RlhfConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 16,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// Bradley-Terry over summed frame rewards:
/// `-log sigmoid(R(o+) - R(o-))` averaged over minibatches.
///
/// `pairs` hold `(preferred, dispreferred)` indices into `pool`.
pub fn rlhf_train(
    pairs: &[(u64, u64)],
    pool: &[Trajectory],
    config: &RlhfConfig,
) -> Result<RlhfReward> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("rlhf needs at least one pair"));
    }
    if !(config.learning_rate > 0.0) || config.batch_size == 0 {
        return Err(Error::InvalidConfig("rlhf learning_rate > 0 and batch_size >= 1"));
    }
    let dim = pool
        .first()
        .map(|t| t.observations.dim())
        .ok_or(Error::EmptyPool)?;
    let summed = |id: u64| -> Result<(Vec<f64>, f64)> {
        let traj = pool
            .get(id as usize)
            .ok_or(Error::UnresolvedTrajectoryId(id))?;
        let mut sum = vec![0.0; dim];
        for f in traj.observations.frames() {
            for (s, v) in sum.iter_mut().zip(f) {
                *s += v;
            }
        }
        Ok((sum, traj.horizon() as f64))
    };
    // Each pair reduces to a feature difference and a length difference.
    let diffs = pairs
        .iter()
        .map(|&(p, n)| {
            if p == n {
                return Err(Error::InvalidConfig("pair sides must differ"));
            }
            let (fp, tp) = summed(p)?;
            let (fn_, tn) = summed(n)?;
            let d: Vec<f64> = fp.iter().zip(&fn_).map(|(a, b)| a - b).collect();
            Ok((d, tp - tn))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut model = RlhfReward::zeros(dim);
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::child(config.seed, 0x51, epoch as u64));
        for batch in order.chunks(config.batch_size) {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for &i in batch {
                let (d, dt) = &diffs[i];
                let margin = linalg::dot(&model.weights, d) + model.bias * dt;
                // d/dmargin of softplus(-margin)
                let coef = -sigmoid(-margin);
                for (g, v) in gw.iter_mut().zip(d) {
                    *g += coef * v;
                }
                gb += coef * dt;
            }
            let scale = 1.0 / batch.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= config.learning_rate * (g * scale + config.l2 * *w);
            }
            model.bias -= config.learning_rate * gb * scale;
        }
    }
    if !model.weights.iter().all(|w| w.is_finite()) {
        return Err(Error::NonFinite("rlhf weights"));
    }
    Ok(model)
}

/// Mean pairwise Bradley-Terry loss of a trained model.
pub fn rlhf_loss(model: &RlhfReward, pairs: &[(u64, u64)], pool: &[Trajectory]) -> Result<f64> {
    let mut total = 0.0;
    for &(p, n) in pairs {
        let get = |id: u64| pool.get(id as usize).ok_or(Error::UnresolvedTrajectoryId(id));
        let rp = model.score(get(p)?)?.total();
        let rn = model.score(get(n)?)?.total();
        total += softplus(rn - rp);
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// `-|phi(o_t) - phi(o_goal)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalDistance {
    embedding: LinearEmbedding,
    goal: Vec<f64>,
}

impl GoalDistance {
    pub fn new(embedding: LinearEmbedding, goal_observation: &[f64]) -> Result<Self> {
        if goal_observation.len() != embedding.n_b() {
            return Err(Error::DimensionMismatch {
                expected: embedding.n_b(),
                actual: goal_observation.len(),
            });
        }
        let mut goal = vec![0.0; embedding.n_e()];
        embedding.weights().mul_vec_into(goal_observation, &mut goal);
        Ok(Self { embedding, goal })
    }

    pub fn score_observations(&self, observations: &FeatureSequence) -> Result<RewardTrace> {
        let z = self.embedding.embed(observations)?;
        Ok(RewardTrace::new(
            z.frames()
                .map(|f| {
                    -libm::sqrt(f.iter().zip(&self.goal).map(|(a, b)| (a - b) * (a - b)).sum())
                })
                .collect(),
        ))
    }
}

impl Scorer for GoalDistance {
    fn score(&self, trajectory: &Trajectory) -> Result<RewardTrace> {
        self.score_observations(&trajectory.observations)
    }
}

pub fn goal_distance_score(
    embedding: &LinearEmbedding,
    trajectory: &Trajectory,
    goal_observation: &[f64],
) -> Result<RewardTrace> {
    GoalDistance::new(embedding.clone(), goal_observation)?.score(trajectory)
}

/// Column norms of the weight matrix normalised to sum to one.
pub fn feature_attribution(embedding: &LinearEmbedding) -> Result<Vec<f64>> {
    let w = embedding.weights();
    let mut norms = vec![0.0; w.cols()];
    for r in 0..w.rows() {
        for (n, v) in norms.iter_mut().zip(w.row(r)) {
            *n += v * v;
        }
    }
    norms.iter_mut().for_each(|n| *n = libm::sqrt(*n));
    let total: f64 = norms.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    norms.iter_mut().for_each(|n| *n /= total);
    Ok(norms)
}
