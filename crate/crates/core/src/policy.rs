//! Cross-entropy-method planning over open-loop action sequences, plus the
//! success predicate calibrated from expert returns.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::env::{self, ActionSequence, Embodiment, FeatureLift, TaskKind, Trajectory, Vec2};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::reward_models::{GroundTruth, Scorer};
use crate::rng;

/// Diagonal Gaussian over `T x 2` action sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSequencePolicy {
    mean: Matrix,
    std: Matrix,
}

impl ActionSequencePolicy {
    pub fn new(mean: Matrix, std: Matrix) -> Result<Self> {
        if mean.cols() != 2 || mean.shape() != std.shape() {
            return Err(Error::ShapeMismatch {
                expected: (mean.rows(), 2),
                actual: std.shape(),
            });
        }
        if !mean.is_finite() || !std.as_slice().iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidConfig("policy std must be finite and > 0"));
        }
        Ok(Self { mean, std })
    }

    pub fn isotropic(horizon: usize, std: f64) -> Result<Self> {
        Self::new(Matrix::zeros(horizon, 2), Matrix::filled(horizon, 2, std))
    }

    pub fn horizon(&self) -> usize {
        self.mean.rows()
    }

    pub fn mean(&self) -> &Matrix {
        &self.mean
    }

    pub fn std(&self) -> &Matrix {
        &self.std
    }

    pub fn mean_actions(&self) -> ActionSequence {
        ActionSequence(self.mean.as_slice().chunks_exact(2).map(|a| [a[0], a[1]]).collect())
    }

    /// Diagonal-Gaussian log-density of an action sequence.
    pub fn log_density(&self, actions: &ActionSequence) -> Result<f64> {
        if actions.len() != self.horizon() {
            return Err(Error::LengthMismatch(self.horizon(), actions.len()));
        }
        let half_log_2pi = 0.5 * libm::log(2.0 * core::f64::consts::PI);
        let mut total = 0.0;
        for (t, a) in actions.actions().iter().enumerate() {
            for d in 0..2 {
                let s = self.std.get(t, d);
                let z = (a[d] - self.mean.get(t, d)) / s;
                total -= 0.5 * z * z + libm::log(s) + half_log_2pi;
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFiniteDensity);
        }
        Ok(total)
    }

    pub fn sample(&self, rng: &mut rng::Rng) -> ActionSequence {
        ActionSequence(
            (0..self.horizon())
                .map(|t| {
                    let z0: f64 = StandardNormal.sample(rng);
                    let z1: f64 = StandardNormal.sample(rng);
                    [
                        self.mean.get(t, 0) + self.std.get(t, 0) * z0,
                        self.mean.get(t, 1) + self.std.get(t, 1) * z1,
                    ]
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CemConfig {
    pub iterations: usize,
    pub population: usize,
    pub elite_fraction: f64,
    pub seed: u64,
    pub initial_std: f64,
    /// Floor applied to the refitted std.
    pub min_std: f64,
    /// Consecutive timesteps sharing one noise draw.
    pub segment: usize,
    /// Radius of the ball each sampled action is projected onto.
    pub max_action: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            population: 150,
            elite_fraction: 0.1,
            seed: 0,
            initial_std: 0.03,
            min_std: 2e-3,
            segment: 4,
            max_action: 0.04,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::InvalidConfig("population must be >= 1"));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(Error::InvalidConfig("elite_fraction must lie in (0, 1]"));
        }
        if self.elite_count() == 0 {
            return Err(Error::InvalidConfig("population * elite_fraction must be >= 1"));
        }
        if !(self.initial_std > 0.0) || !(self.min_std > 0.0) {
            return Err(Error::InvalidConfig("std values must be > 0"));
        }
        if self.segment == 0 {
            return Err(Error::InvalidConfig("segment must be >= 1"));
        }
        if !(self.max_action > 0.0) {
            return Err(Error::InvalidConfig("max_action must be > 0"));
        }
        Ok(())
    }

    pub fn elite_count(&self) -> usize {
        // small epsilon so exact products such as 64 * 0.125 are not lost to rounding
        libm::floor(self.population as f64 * self.elite_fraction + 1e-9) as usize
    }
}

fn project(a: Vec2, radius: f64) -> Vec2 {
    let n = libm::hypot(a[0], a[1]);
    if n > radius {
        [a[0] * radius / n, a[1] * radius / n]
    } else {
        a
    }
}

/// Summary of one CEM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CemIteration {
    pub iteration: usize,
    pub best_score: f64,
    pub elite_mean_score: f64,
}

/// Generic CEM loop. `evaluate` scores a population (higher is better) and
/// `observe` is called after every refit; its value is collected into the
/// returned history.
///
/// Iteration 0 samples the whole population; later iterations replace the
/// last sample with the best sequence found so far, whose stored score is
/// reused.
pub fn cem_search<E, O>(
    horizon: usize,
    config: &CemConfig,
    initial_mean: Option<&Matrix>,
    mut evaluate: E,
    mut observe: O,
) -> Result<(ActionSequencePolicy, ActionSequence, Vec<CemIteration>, Vec<f64>)>
where
    E: FnMut(&[ActionSequence]) -> Result<Vec<f64>>,
    O: FnMut(&CemIteration, &ActionSequencePolicy) -> Result<f64>,
{
    config.validate()?;
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be >= 1"));
    }
    let mut policy = ActionSequencePolicy::isotropic(horizon, config.initial_std)?;
    if let Some(m) = initial_mean {
        if m.shape() != (horizon, 2) {
            return Err(Error::ShapeMismatch {
                expected: (horizon, 2),
                actual: m.shape(),
            });
        }
        policy.mean = m.clone();
    }
    let elites = config.elite_count();
    let segments = horizon.div_ceil(config.segment);
    let mut best: Option<(ActionSequence, f64)> = None;
    let mut iterations = Vec::with_capacity(config.iterations);
    let mut history = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let mut rng = rng::child(config.seed, 0x41, it as u64);
        let fresh = if best.is_some() && config.population > 1 {
            config.population - 1
        } else {
            config.population
        };
        let mut samples = Vec::with_capacity(config.population);
        for _ in 0..fresh {
            let noise: Vec<[f64; 2]> = (0..segments)
                .map(|_| {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    [a, b]
                })
                .collect();
            let seq = (0..horizon)
                .map(|t| {
                    let z = noise[t / config.segment];
                    project(
                        [
                            policy.mean.get(t, 0) + policy.std.get(t, 0) * z[0],
                            policy.mean.get(t, 1) + policy.std.get(t, 1) * z[1],
                        ],
                        config.max_action,
                    )
                })
                .collect();
            samples.push(ActionSequence(seq));
        }
        let mut scores = if samples.is_empty() {
            Vec::new()
        } else {
            evaluate(&samples)?
        };
        if scores.len() != samples.len() {
            return Err(Error::LengthMismatch(samples.len(), scores.len()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite("cem score"));
        }
        if let Some((seq, score)) = &best {
            samples.push(seq.clone());
            scores.push(*score);
        }

        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let top = order[0];
        // refit in sample order so the mean is reproducible from the elite set
        let mut elite = order[..elites.min(order.len())].to_vec();
        elite.sort_unstable();
        if best.as_ref().is_none_or(|(_, s)| scores[top] > *s) {
            best = Some((samples[top].clone(), scores[top]));
        }

        let k = elite.len() as f64;
        for t in 0..horizon {
            for d in 0..2 {
                let mean = elite.iter().map(|&i| samples[i].0[t][d]).sum::<f64>() / k;
                let var = elite
                    .iter()
                    .map(|&i| {
                        let e = samples[i].0[t][d] - mean;
                        e * e
                    })
                    .sum::<f64>()
                    / k;
                policy.mean.set(t, d, mean);
                policy.std.set(t, d, libm::sqrt(var).max(config.min_std));
            }
        }
        let summary = CemIteration {
            iteration: it,
            best_score: best.as_ref().map_or(f64::NEG_INFINITY, |(_, s)| *s),
            elite_mean_score: elite.iter().map(|&i| scores[i]).sum::<f64>() / k,
        };
        history.push(observe(&summary, &policy)?);
        iterations.push(summary);
    }
    let best_seq = best.map(|(s, _)| s).unwrap_or_else(|| policy.mean_actions());
    Ok((policy, best_seq, iterations, history))
}

/// Success thresholds `tau` keyed by task and embodiment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Calibration {
    thresholds: BTreeMap<(TaskKind, &'static str), f64>,
}

/// `tau = mean - 0.1 |mean|` of the demo returns: 90% of expert performance,
/// which equals `0.9 x mean` for positive returns.
pub fn threshold_from_returns(returns: &[f64]) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::EmptyDemos);
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(mean - 0.1 * libm::fabs(mean))
}

impl Calibration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, task: TaskKind, embodiment: &'static str, tau: f64) {
        self.thresholds.insert((task, embodiment), tau);
    }

    /// Calibrates from a demo set, all of which must share task and embodiment.
    pub fn calibrate(&mut self, demos: &[Trajectory]) -> Result<f64> {
        let first = demos.first().ok_or(Error::EmptyDemos)?;
        if demos
            .iter()
            .any(|d| d.task != first.task || d.embodiment != first.embodiment)
        {
            return Err(Error::TaskMismatch);
        }
        let returns: Vec<f64> = demos.iter().map(|d| d.gt_return()).collect();
        let tau = threshold_from_returns(&returns)?;
        self.set(first.task, first.embodiment, tau);
        Ok(tau)
    }

    pub fn tau(&self, task: TaskKind, embodiment: &str) -> Result<f64> {
        self.thresholds
            .iter()
            .find(|((t, e), _)| *t == task && *e == embodiment)
            .map(|(_, v)| *v)
            .ok_or(Error::UncalibratedTask)
    }

    pub fn entries(&self) -> impl Iterator<Item = (TaskKind, &'static str, f64)> + '_ {
        self.thresholds.iter().map(|(&(t, e), &v)| (t, e, v))
    }
}

/// Undiscounted GT return at or above the calibrated threshold.
pub fn success(trajectory: &Trajectory, calibration: &Calibration) -> Result<bool> {
    let tau = calibration.tau(trajectory.task, trajectory.embodiment)?;
    Ok(trajectory.gt_return() >= tau)
}

/// Everything needed to roll a sequence out in a batch of contexts.
#[derive(Debug, Clone)]
pub struct Rollouts<'a> {
    pub task: TaskKind,
    pub embodiment: Embodiment,
    pub lift: &'a FeatureLift,
    pub horizon: usize,
}

impl Rollouts<'_> {
    pub fn run(&self, actions: &ActionSequence, seed: u64) -> Result<Trajectory> {
        env::rollout(&mut &*actions, self.task, &self.embodiment, self.horizon, seed, self.lift)
    }

    /// Mean summed scorer reward over `contexts`.
    pub fn objective<S: Scorer + ?Sized>(
        &self,
        scorer: &S,
        actions: &ActionSequence,
        contexts: &[u64],
    ) -> Result<f64> {
        if contexts.is_empty() {
            return Err(Error::InvalidConfig("at least one context required"));
        }
        let mut total = 0.0;
        for &seed in contexts {
            total += scorer.score(&self.run(actions, seed)?)?.total();
        }
        Ok(total / contexts.len() as f64)
    }

    pub fn success_rate(
        &self,
        actions: &ActionSequence,
        seeds: &[u64],
        calibration: &Calibration,
    ) -> Result<f64> {
        if seeds.is_empty() {
            return Err(Error::InvalidConfig("n_seeds must be >= 1"));
        }
        let mut hits = 0usize;
        for &seed in seeds {
            if success(&self.run(actions, seed)?, calibration)? {
                hits += 1;
            }
        }
        Ok(hits as f64 / seeds.len() as f64)
    }
}

/// Evaluation seeds disjoint from training and demo contexts.
pub fn eval_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| rng::derive(seed, 0x42, i)).collect()
}

/// Success rate of the mean-action rollout over `n_seeds` fresh contexts.
pub fn eval_success_rate(
    policy: &ActionSequencePolicy,
    rollouts: &Rollouts<'_>,
    n_seeds: usize,
    seed: u64,
    calibration: &Calibration,
) -> Result<f64> {
    rollouts.success_rate(&policy.mean_actions(), &eval_seeds(seed, n_seeds), calibration)
}

/// Contexts and evaluation protocol for [`cem_optimize`].
#[derive(Debug, Clone)]
pub struct CemProblem<'a> {
    pub rollouts: Rollouts<'a>,
    /// Initial-state seeds the objective averages over.
    pub train_contexts: Vec<u64>,
    pub eval_contexts: Vec<u64>,
    pub calibration: &'a Calibration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CemOutcome {
    pub policy: ActionSequencePolicy,
    /// Best sequence seen under the scorer objective.
    pub best: ActionSequence,
    /// GT success rate of the mean sequence after each iteration.
    pub history: Vec<f64>,
    pub iterations: Vec<CemIteration>,
}

/// CEM with a caller-supplied population evaluator, e.g. a parallel one.
pub fn cem_optimize_with<E>(evaluate: E, problem: &CemProblem<'_>, config: &CemConfig) -> Result<CemOutcome>
where
    E: FnMut(&[ActionSequence]) -> Result<Vec<f64>>,
{
    problem.calibration.tau(problem.rollouts.task, problem.rollouts.embodiment.name)?;
    let (policy, best, iterations, history) = cem_search(
        problem.rollouts.horizon,
        config,
        None,
        evaluate,
        |_, p| {
            problem
                .rollouts
                .success_rate(&p.mean_actions(), &problem.eval_contexts, problem.calibration)
        },
    )?;
    Ok(CemOutcome {
        policy,
        best,
        history,
        iterations,
    })
}

/// CEM on the mean summed reward of `scorer` over the training contexts.
pub fn cem_optimize<S: Scorer + ?Sized>(
    scorer: &S,
    problem: &CemProblem<'_>,
    config: &CemConfig,
) -> Result<CemOutcome> {
    cem_optimize_with(
        |pop| {
            pop.iter()
                .map(|a| problem.rollouts.objective(scorer, a, &problem.train_contexts))
                .collect()
        },
        problem,
        config,
    )
}

/// Settings for [`generate_expert_demos`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertConfig {
    pub cem: CemConfig,
    /// Extra CEM runs allowed per context after the first.
    pub restarts: usize,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            cem: CemConfig::default(),
            restarts: 3,
        }
    }
}

/// Context seed of expert demo `i`.
pub fn demo_context(seed: u64, i: usize) -> u64 {
    rng::derive(seed, 0x31, i as u64)
}

fn plan_expert(
    rollouts: &Rollouts<'_>,
    context: u64,
    config: &CemConfig,
    attempt: usize,
) -> Result<Trajectory> {
    let cem = CemConfig {
        seed: rng::derive(config.seed ^ context, 0x32, attempt as u64),
        ..*config
    };
    let (_, best, _, _) = cem_search(
        rollouts.horizon,
        &cem,
        None,
        |pop| {
            pop.iter()
                .map(|a| rollouts.objective(&GroundTruth, a, &[context]))
                .collect()
        },
        |_, _| Ok(0.0),
    )?;
    rollouts.run(&best, context)
}

/// GT-optimal demonstrations for `n` distinct contexts derived from `seed`.
///
/// Each context is planned with CEM against the ground-truth reward. The
/// threshold is calibrated from the set; demos under it are re-planned (best
/// of all attempts kept) until all pass or the restart budget runs out.
pub fn generate_expert_demos(
    rollouts: &Rollouts<'_>,
    n: usize,
    seed: u64,
    config: &ExpertConfig,
) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be >= 1"));
    }
    let cem = CemConfig { seed, ..config.cem };
    let contexts: Vec<u64> = (0..n).map(|i| demo_context(seed, i)).collect();
    let mut demos = contexts
        .iter()
        .map(|&c| plan_expert(rollouts, c, &cem, 0))
        .collect::<Result<Vec<_>>>()?;
    for attempt in 1..=config.restarts + 1 {
        let returns: Vec<f64> = demos.iter().map(|d| d.gt_return()).collect();
        let tau = threshold_from_returns(&returns)?;
        let failing: Vec<usize> = (0..n).filter(|&i| returns[i] < tau).collect();
        if failing.is_empty() {
            return Ok(demos);
        }
        if attempt > config.restarts {
            return Err(Error::ExpertSearchFailed(contexts[failing[0]]));
        }
        for i in failing {
            let retry = plan_expert(rollouts, contexts[i], &cem, attempt)?;
            if retry.gt_return() > demos[i].gt_return() {
                demos[i] = retry;
            }
        }
    }
    unreachable!("loop returns on its final attempt")
}

/// Zero-action sequence, handy as a null baseline.
pub fn zero_policy(horizon: usize) -> Result<ActionSequencePolicy> {
    ActionSequencePolicy::isotropic(horizon, 1e-3)
}
