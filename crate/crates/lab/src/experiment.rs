//! Pipeline stages shared by the CLI and the acceptance suite.

use rapl_core::dpo::{self, PreferencePair};
use rapl_core::env::{ActionSequence, Embodiment, FeatureLift, TaskKind, Trajectory, FEATURE_DIM, HORIZON};
use rapl_core::eval::{self, CorrelationReport};
use rapl_core::oracle::{self, TrajectoryPool};
use rapl_core::ot::{self, TransportPlan};
use rapl_core::policy::{self, ActionSequencePolicy, Calibration, CemOutcome, CemProblem, Rollouts};
use rapl_core::representation::{self, LinearEmbedding, PreferenceTriplet, TrainOutcome, LATENT_DIM};
use rapl_core::reward_models::{GoalDistance, GroundTruth, RaplReward, RlhfReward, Scorer};
use rapl_core::rng;

use crate::config::{ExperimentConfig, Stage};
use crate::error::{LabError, LabResult};
use crate::parallel;

/// Scorer names accepted by `train-policy --reward` and `run-dpo --reward`.
pub const REWARDS: [&str; 5] = ["gt", "rapl", "rlhf", "goal", "unaligned-ot"];

/// Resolved configuration plus the frozen lift.
pub struct Lab {
    pub config: ExperimentConfig,
    pub task: TaskKind,
    pub embodiment: Embodiment,
    pub train_embodiment: Embodiment,
    pub lift: FeatureLift,
    pub threads: usize,
}

/// Everything `gen-data` produces.
#[derive(Debug, Clone)]
pub struct Data {
    /// Demos in the evaluation embodiment; they calibrate success.
    pub demos: Vec<Trajectory>,
    /// Demos in the training embodiment when it differs.
    pub source_demos: Option<Vec<Trajectory>>,
    pub pool: TrajectoryPool,
    pub eval_pool: TrajectoryPool,
    pub triplets: Vec<PreferenceTriplet>,
    pub pairs: Vec<(u64, u64)>,
}

impl Data {
    /// Expert set of the OT rewards: demos of the body the labels came from.
    pub fn experts(&self) -> &[Trajectory] {
        self.source_demos.as_deref().unwrap_or(&self.demos)
    }

    pub fn calibration(&self) -> LabResult<Calibration> {
        let mut c = Calibration::new();
        c.calibrate(&self.demos)?;
        Ok(c)
    }
}

#[derive(Debug, Clone)]
pub struct DpoOutcome {
    pub reference: ActionSequencePolicy,
    pub pairs: Vec<PreferencePair>,
    pub policy: ActionSequencePolicy,
    /// Agreement of the synthetic labels with GT labels.
    pub label_agreement: f64,
    pub reference_score: f64,
    pub policy_score: f64,
    pub loss_before: f64,
    pub loss_after: f64,
}

impl Lab {
    pub fn new(config: ExperimentConfig) -> LabResult<Self> {
        config.validate()?;
        let task = config.task_kind()?;
        Ok(Self {
            task,
            embodiment: config.embodiment_spec()?,
            train_embodiment: config.train_embodiment_spec()?,
            lift: FeatureLift::new(task, config.lift_seed),
            threads: parallel::thread_count()?,
            config,
        })
    }

    pub fn rollouts(&self, embodiment: Embodiment) -> Rollouts<'_> {
        Rollouts {
            task: self.task,
            embodiment,
            lift: &self.lift,
            horizon: HORIZON,
        }
    }

    pub fn eval_rollouts(&self) -> Rollouts<'_> {
        self.rollouts(self.embodiment)
    }

    pub fn train_rollouts(&self) -> Rollouts<'_> {
        self.rollouts(self.train_embodiment)
    }

    pub fn hash(&self) -> String {
        self.config.hash()
    }

    pub fn seed(&self, stage: Stage) -> u64 {
        self.config.stage_seed(stage)
    }

    pub fn generate_data(&self) -> LabResult<Data> {
        let c = &self.config;
        let experts = self.config.expert_config();
        let eval = self.eval_rollouts();
        let demos = policy::generate_expert_demos(&eval, c.demos, self.seed(Stage::Demos), &experts)?;
        let source_demos = if c.cross_embodiment() {
            let train = self.train_rollouts();
            Some(policy::generate_expert_demos(
                &train,
                c.demos,
                self.seed(Stage::SourceDemos),
                &experts,
            )?)
        } else {
            None
        };
        let source = source_demos.as_deref().unwrap_or(&demos);
        let pool = oracle::build_pool(
            &self.train_rollouts(),
            source,
            c.pool_size,
            c.bins,
            self.seed(Stage::Pool),
        )?;
        let eval_pool = oracle::build_pool(&eval, &demos, c.pool_size, c.bins, self.seed(Stage::EvalPool))?;
        let triplets = oracle::make_triplets(&pool, c.triplets, self.seed(Stage::Triplets))?;
        let pairs = oracle::make_pairs(&pool, c.pairs, self.seed(Stage::Pairs))?;
        Ok(Data {
            demos,
            source_demos,
            pool,
            eval_pool,
            triplets,
            pairs,
        })
    }

    pub fn initial_embedding(&self) -> LinearEmbedding {
        LinearEmbedding::random(LATENT_DIM, FEATURE_DIM, self.seed(Stage::ReprInit))
    }

    /// Frozen random embedding used by the unaligned and goal baselines.
    pub fn unaligned_embedding(&self) -> LinearEmbedding {
        LinearEmbedding::random(LATENT_DIM, FEATURE_DIM, self.seed(Stage::Unaligned))
    }

    pub fn train_embedding(&self, data: &Data) -> LabResult<TrainOutcome> {
        self.train_embedding_on(&data.triplets, &data.pool)
    }

    pub fn train_embedding_on(
        &self,
        triplets: &[PreferenceTriplet],
        pool: &TrajectoryPool,
    ) -> LabResult<TrainOutcome> {
        Ok(representation::train_representation(
            &self.initial_embedding(),
            triplets,
            pool,
            &self.config.train_config(),
        )?)
    }

    pub fn train_rlhf(&self, data: &Data) -> LabResult<RlhfReward> {
        self.train_rlhf_on(&data.pairs, &data.pool)
    }

    pub fn train_rlhf_on(&self, pairs: &[(u64, u64)], pool: &TrajectoryPool) -> LabResult<RlhfReward> {
        Ok(rapl_core::reward_models::rlhf_train(
            pairs,
            pool.trajectories(),
            &self.config.rlhf_config(),
        )?)
    }

    pub fn rapl(&self, embedding: &LinearEmbedding, data: &Data) -> LabResult<RaplReward> {
        Ok(RaplReward::from_demos(
            embedding.clone(),
            data.experts(),
            self.config.sinkhorn_config(),
        )?)
    }

    pub fn unaligned(&self, data: &Data) -> LabResult<RaplReward> {
        self.rapl(&self.unaligned_embedding(), data)
    }

    /// Goal frame: the last observation of the first expert.
    pub fn goal(&self, data: &Data) -> LabResult<GoalDistance> {
        let expert = data.experts().first().ok_or(rapl_core::Error::EmptyDemos)?;
        let goal = expert.observations.frame(expert.horizon() - 1);
        Ok(GoalDistance::new(self.unaligned_embedding(), goal)?)
    }

    /// Builds the named scorer; `rapl` needs `embedding`, `rlhf` needs `rlhf`.
    pub fn scorer(
        &self,
        name: &str,
        data: &Data,
        embedding: Option<&LinearEmbedding>,
        rlhf: Option<&RlhfReward>,
    ) -> LabResult<Box<dyn Scorer + Sync>> {
        Ok(match name {
            "gt" => Box::new(GroundTruth),
            "rapl" => Box::new(self.rapl(embedding.ok_or(LabError::Config("rapl needs an embedding".into()))?, data)?),
            "rlhf" => Box::new(rlhf.ok_or(LabError::Config("rlhf needs a trained reward".into()))?.clone()),
            "goal" => Box::new(self.goal(data)?),
            "unaligned-ot" => Box::new(self.unaligned(data)?),
            other => return Err(LabError::Config(format!("unknown reward {other:?}"))),
        })
    }

    /// Spearman report on the evaluation pool for the given scorers.
    pub fn correlation(
        &self,
        data: &Data,
        scorers: &[(&str, &(dyn Scorer + Sync))],
    ) -> LabResult<CorrelationReport> {
        let pool = data.eval_pool.trajectories();
        let methods = scorers
            .iter()
            .map(|(name, s)| {
                let traces = parallel::map(pool, self.threads, |t| s.score(t))?;
                eval::correlation_from_traces(name, &traces, pool)
            })
            .collect::<rapl_core::Result<Vec<_>>>()?;
        Ok(CorrelationReport {
            task: self.task,
            embodiment: self.embodiment.name.into(),
            methods,
        })
    }

    pub fn train_contexts(&self) -> Vec<u64> {
        (0..self.config.cem.train_contexts as u64)
            .map(|i| rng::derive(self.seed(Stage::Contexts), 0, i))
            .collect()
    }

    pub fn eval_contexts(&self) -> Vec<u64> {
        policy::eval_seeds(self.seed(Stage::Contexts), self.config.cem.eval_seeds)
    }

    /// CEM on the scorer's mean return over the training contexts.
    pub fn train_policy(
        &self,
        scorer: &(dyn Scorer + Sync),
        calibration: &Calibration,
        run: u64,
    ) -> LabResult<CemOutcome> {
        let rollouts = self.eval_rollouts();
        let problem = CemProblem {
            rollouts: rollouts.clone(),
            train_contexts: self.train_contexts(),
            eval_contexts: self.eval_contexts(),
            calibration,
        };
        let contexts = problem.train_contexts.clone();
        let outcome = policy::cem_optimize_with(
            |population: &[ActionSequence]| {
                parallel::map(population, self.threads, |a| rollouts.objective(scorer, a, &contexts))
            },
            &problem,
            &self.config.cem_config(run),
        )?;
        Ok(outcome)
    }

    /// Reference fitted to the demos replayed at `reference_gain` of their
    /// executed actions.
    pub fn reference_policy(&self, data: &Data) -> LabResult<ActionSequencePolicy> {
        let rollouts = self.eval_rollouts();
        let gain = self.config.dpo.reference_gain;
        let weak = data
            .demos
            .iter()
            .map(|d| {
                let scaled = ActionSequence(
                    d.executed_actions()
                        .0
                        .iter()
                        .map(|a| [a[0] * gain, a[1] * gain])
                        .collect(),
                );
                rollouts.run(&scaled, d.seed)
            })
            .collect::<rapl_core::Result<Vec<_>>>()?;
        Ok(dpo::fit_reference(&weak, self.config.dpo.noise_scale, self.seed(Stage::Dpo))?)
    }

    pub fn run_dpo(&self, data: &Data, scorer: &(dyn Scorer + Sync)) -> LabResult<DpoOutcome> {
        let cfg = &self.config.dpo;
        let calibration = data.calibration()?;
        let rollouts = self.eval_rollouts();
        let reference = self.reference_policy(data)?;
        let seed = self.seed(Stage::Dpo);
        let pairs = dpo::synth_rankings(&reference, scorer, &rollouts, cfg.pairs, seed)?;
        let dpo_cfg = self.config.dpo_config();
        let policy = dpo::dpo_finetune(&reference, &pairs, &dpo_cfg)?;
        let score_seed = rng::derive(seed, 1, 0);
        Ok(DpoOutcome {
            label_agreement: dpo::label_agreement(&pairs, &rollouts)?,
            reference_score: dpo::alignment_score(&reference, &rollouts, &calibration, cfg.n_configs, score_seed)?,
            policy_score: dpo::alignment_score(&policy, &rollouts, &calibration, cfg.n_configs, score_seed)?,
            loss_before: dpo::mean_dpo_loss(&pairs, &reference, &reference, dpo_cfg.alpha)?,
            loss_after: dpo::mean_dpo_loss(&pairs, &policy, &reference, dpo_cfg.alpha)?,
            reference,
            pairs,
            policy,
        })
    }

    /// Plan between `trajectory` and its closest expert under `embedding`.
    pub fn plan(
        &self,
        embedding: &LinearEmbedding,
        experts: &[Trajectory],
        trajectory: &Trajectory,
    ) -> LabResult<(usize, TransportPlan)> {
        let sinkhorn = self.config.sinkhorn_config();
        let robot = embedding.embed(&trajectory.observations)?;
        let expert_seqs = experts
            .iter()
            .map(|e| embedding.embed(&e.observations))
            .collect::<rapl_core::Result<Vec<_>>>()?;
        let index = ot::select_closest_expert(&robot, &expert_seqs, &sinkhorn)?;
        let coupling = ot::couple(&robot, &expert_seqs[index], &sinkhorn)?;
        Ok((index, coupling.plan))
    }
}
