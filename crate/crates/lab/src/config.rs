//! Experiment configuration: one JSON document, every key optional.
//!
//! Precedence is flags > config file > defaults. The resolved document is
//! hashed (SHA-256 of its canonical JSON) and the hash is embedded in every
//! artifact.

use std::path::{Path, PathBuf};

use rapl_core::dpo::DpoConfig;
use rapl_core::env::{Embodiment, TaskKind};
use rapl_core::ot::SinkhornConfig;
use rapl_core::policy::{CemConfig, ExpertConfig};
use rapl_core::representation::TrainConfig;
use rapl_core::reward_models::RlhfConfig;
use rapl_core::rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornSection {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SinkhornSection {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            max_iterations: 10_000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReprSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ReprSection {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 150,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlhfSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
}

impl Default for RlhfSection {
    fn default() -> Self {
        let c = RlhfConfig::default();
        Self {
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            batch_size: c.batch_size,
            l2: c.l2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemSection {
    pub iterations: usize,
    pub population: usize,
    pub elite_fraction: f64,
    pub initial_std: f64,
    pub min_std: f64,
    pub segment: usize,
    pub max_action: f64,
    /// Initial-state contexts averaged in the planning objective.
    pub train_contexts: usize,
    /// Held-out contexts for the success-rate history.
    pub eval_seeds: usize,
}

impl Default for CemSection {
    fn default() -> Self {
        let c = CemConfig::default();
        Self {
            iterations: 30,
            population: 80,
            elite_fraction: c.elite_fraction,
            initial_std: c.initial_std,
            min_std: c.min_std,
            segment: c.segment,
            max_action: c.max_action,
            train_contexts: 3,
            eval_seeds: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoSection {
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub pairs: usize,
    /// Std floor of the reference policy.
    pub noise_scale: f64,
    /// Fraction of the expert actions the reference is fitted to.
    pub reference_gain: f64,
    pub n_configs: usize,
}

impl Default for DpoSection {
    fn default() -> Self {
        let c = DpoConfig::default();
        Self {
            alpha: c.alpha,
            learning_rate: 2e-7,
            epochs: c.epochs,
            batch_size: c.batch_size,
            pairs: 200,
            noise_scale: 0.005,
            reference_gain: 0.95,
            n_configs: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: String,
    /// Embodiment of evaluation pools, planning and DPO.
    pub embodiment: String,
    /// Embodiment of the demos, training pool and labels; defaults to
    /// `embodiment`.
    pub train_embodiment: Option<String>,
    pub seed: u64,
    pub lift_seed: u64,
    pub demos: usize,
    pub expert_restarts: usize,
    pub pool_size: usize,
    pub bins: usize,
    pub triplets: usize,
    pub pairs: usize,
    pub sinkhorn: SinkhornSection,
    pub repr: ReprSection,
    pub rlhf: RlhfSection,
    pub cem: CemSection,
    pub dpo: DpoSection,
    /// Not part of the config hash.
    #[serde(skip_serializing)]
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: "group".into(),
            embodiment: "medium".into(),
            train_embodiment: None,
            seed: 0,
            lift_seed: 7,
            demos: 10,
            expert_restarts: ExpertConfig::default().restarts,
            pool_size: 100,
            bins: 10,
            triplets: 150,
            pairs: 300,
            sinkhorn: SinkhornSection::default(),
            repr: ReprSection::default(),
            rlhf: RlhfSection::default(),
            cem: CemSection::default(),
            dpo: DpoSection::default(),
            output: PathBuf::from("out"),
        }
    }
}

/// Sub-seed streams of the pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Demos = 1,
    Pool = 2,
    EvalPool = 3,
    Triplets = 4,
    Pairs = 5,
    ReprInit = 6,
    ReprShuffle = 7,
    Rlhf = 8,
    Cem = 9,
    Dpo = 10,
    Unaligned = 11,
    Contexts = 12,
    SourceDemos = 13,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks every module precondition without doing any work.
    pub fn validate(&self) -> LabResult<()> {
        let fail = |m: &str| Err(LabError::Config(m.into()));
        self.task_kind()?;
        self.embodiment_spec()?;
        self.train_embodiment_spec()?;
        if self.demos == 0 {
            return fail("demos must be >= 1");
        }
        if self.bins == 0 || self.pool_size < self.bins {
            return fail("pool_size must be >= bins >= 1");
        }
        if self.pool_size < 3 {
            return fail("pool_size must be >= 3");
        }
        if self.pairs == 0 {
            return fail("pairs must be >= 1");
        }
        let check = |r: rapl_core::Result<()>| r.map_err(|e| LabError::Config(e.to_string()));
        check(self.sinkhorn_config().validate())?;
        check(self.train_config().validate())?;
        check(self.cem_config(0).validate())?;
        check(self.dpo_config().validate())?;
        let r = &self.rlhf;
        if !(r.learning_rate > 0.0) || r.batch_size == 0 || !(r.l2 >= 0.0) {
            return fail("rlhf learning_rate, batch_size must be > 0 and l2 >= 0");
        }
        if self.cem.train_contexts == 0 || self.cem.eval_seeds == 0 {
            return fail("cem train_contexts and eval_seeds must be >= 1");
        }
        let d = &self.dpo;
        if d.pairs == 0 || d.n_configs == 0 {
            return fail("dpo pairs and n_configs must be >= 1");
        }
        if !(d.noise_scale > 0.0) || !d.reference_gain.is_finite() {
            return fail("dpo noise_scale must be > 0 and reference_gain finite");
        }
        Ok(())
    }

    pub fn task_kind(&self) -> LabResult<TaskKind> {
        TaskKind::from_name(&self.task)
            .ok_or_else(|| LabError::Config(format!("unknown task {:?}", self.task)))
    }

    pub fn embodiment_spec(&self) -> LabResult<Embodiment> {
        embodiment(&self.embodiment)
    }

    pub fn train_embodiment_spec(&self) -> LabResult<Embodiment> {
        embodiment(self.train_embodiment.as_deref().unwrap_or(&self.embodiment))
    }

    /// True when the representation is trained on a different body.
    pub fn cross_embodiment(&self) -> bool {
        self.train_embodiment
            .as_deref()
            .is_some_and(|e| e != self.embodiment)
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        rng::derive(self.seed, 0x1ab, stage as u64)
    }

    pub fn sinkhorn_config(&self) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: self.sinkhorn.epsilon,
            max_iterations: self.sinkhorn.max_iterations,
            tolerance: self.sinkhorn.tolerance,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.repr.learning_rate,
            epochs: self.repr.epochs,
            batch_size: self.repr.batch_size,
            seed: self.stage_seed(Stage::ReprShuffle),
            sinkhorn: self.sinkhorn_config(),
            ..TrainConfig::default()
        }
    }

    pub fn rlhf_config(&self) -> RlhfConfig {
        RlhfConfig {
            learning_rate: self.rlhf.learning_rate,
            epochs: self.rlhf.epochs,
            batch_size: self.rlhf.batch_size,
            l2: self.rlhf.l2,
            seed: self.stage_seed(Stage::Rlhf),
        }
    }

    pub fn cem_config(&self, run: u64) -> CemConfig {
        let c = &self.cem;
        CemConfig {
            iterations: c.iterations,
            population: c.population,
            elite_fraction: c.elite_fraction,
            seed: rng::derive(self.stage_seed(Stage::Cem), 0, run),
            initial_std: c.initial_std,
            min_std: c.min_std,
            segment: c.segment,
            max_action: c.max_action,
        }
    }

    pub fn expert_config(&self) -> ExpertConfig {
        ExpertConfig {
            restarts: self.expert_restarts,
            ..ExpertConfig::default()
        }
    }

    pub fn dpo_config(&self) -> DpoConfig {
        let d = &self.dpo;
        DpoConfig {
            alpha: d.alpha,
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            seed: self.stage_seed(Stage::Dpo),
            ..DpoConfig::default()
        }
    }

    /// Canonical JSON of everything except the output directory.
    pub fn canonical_json(&self) -> String {
        // serde_json maps keep insertion order of the struct, which is fixed
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn embodiment(name: &str) -> LabResult<Embodiment> {
    Embodiment::from_name(name).ok_or_else(|| LabError::Config(format!("unknown embodiment {name:?}")))
}
