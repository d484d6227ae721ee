//! `rapl-lab` command line. Every subcommand reads and writes artifacts in
//! the output directory; later stages pick up what earlier ones wrote.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rapl_core::oracle::TrajectoryPool;
use rapl_core::representation::LinearEmbedding;
use rapl_core::reward_models::{RlhfReward, Scorer};

use crate::config::ExperimentConfig;
use crate::error::{LabError, LabResult};
use crate::experiment::{Data, Lab, REWARDS};
use crate::io::{self, EmbeddingFile, PolicyFile, PreferencePairRecord, RlhfFile};

#[derive(Debug, Parser)]
#[command(name = "rapl-lab", version, about = "Preference-aligned OT reward experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Args, Default)]
pub struct Common {
    /// JSON experiment config; flags take precedence over its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub task: Option<String>,
    #[arg(long, global = true)]
    pub embodiment: Option<String>,
    /// Body of the demos and labelled training pool.
    #[arg(long, global = true)]
    pub train_embodiment: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training pool size.
    #[arg(long, global = true)]
    pub pool: Option<usize>,
    #[arg(long, global = true)]
    pub triplets: Option<usize>,
    #[arg(long, global = true)]
    pub pairs: Option<usize>,
    #[arg(long, global = true)]
    pub demos: Option<usize>,
    /// Entropic regularisation of every Sinkhorn solve.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub cem_iterations: Option<usize>,
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expert demos, training and evaluation pools, triplets and pairs.
    GenData,
    /// Train the embedding on the triplets.
    TrainRepr,
    /// Train the direct reward-prediction baseline on the pairs.
    TrainRlhf,
    /// Plan with CEM under one reward.
    TrainPolicy {
        #[arg(long, value_parser = REWARDS)]
        reward: String,
    },
    /// Fine-tune a reference policy on synthetic rankings.
    RunDpo {
        #[arg(long, default_value = "rapl", value_parser = REWARDS)]
        reward: String,
    },
    /// Spearman correlation with GT on the evaluation pool.
    EvalCorr {
        /// Comma-separated methods; defaults to every available one.
        #[arg(long, value_delimiter = ',', value_parser = REWARDS)]
        methods: Vec<String>,
    },
    /// Transport plan of one evaluation trajectory against its closest expert.
    DumpPlan {
        /// Index into the evaluation pool.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Use the frozen random embedding in place of the trained one.
        #[arg(long)]
        unaligned: bool,
    },
}

impl Common {
    pub fn resolve(&self) -> LabResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.task {
            c.task = v.clone();
        }
        if let Some(v) = &self.embodiment {
            c.embodiment = v.clone();
        }
        if let Some(v) = &self.train_embodiment {
            c.train_embodiment = Some(v.clone());
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.pool {
            c.pool_size = v;
        }
        if let Some(v) = self.triplets {
            c.triplets = v;
        }
        if let Some(v) = self.pairs {
            c.pairs = v;
        }
        if let Some(v) = self.demos {
            c.demos = v;
        }
        if let Some(v) = self.epsilon {
            c.sinkhorn.epsilon = v;
        }
        if let Some(v) = self.epochs {
            c.repr.epochs = v;
        }
        if let Some(v) = self.cem_iterations {
            c.cem.iterations = v;
        }
        if let Some(v) = &self.output {
            c.output = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> LabResult<()> {
    let lab = Lab::new(cli.common.resolve()?)?;
    let out = lab.config.output.clone();
    fs::create_dir_all(&out).map_err(|e| LabError::io(&out, e))?;
    match &cli.command {
        Command::GenData => gen_data(&lab, &out),
        Command::TrainRepr => train_repr(&lab, &out),
        Command::TrainRlhf => train_rlhf(&lab, &out),
        Command::TrainPolicy { reward } => train_policy(&lab, &out, reward),
        Command::RunDpo { reward } => run_dpo(&lab, &out, reward),
        Command::EvalCorr { methods } => eval_corr(&lab, &out, methods),
        Command::DumpPlan { index, unaligned } => dump_plan(&lab, &out, *index, *unaligned),
    }
}

const GEN: &str = "rapl-lab gen-data";
const REPR: &str = "rapl-lab train-repr";
const RLHF: &str = "rapl-lab train-rlhf";

fn num(x: f64) -> String {
    format!("{x}")
}

fn gen_data(lab: &Lab, out: &Path) -> LabResult<()> {
    let data = lab.generate_data()?;
    let h = lab.hash();
    io::write_trajectories(&out.join("demos.jsonl"), &data.demos, &h)?;
    let source = out.join("source_demos.jsonl");
    match &data.source_demos {
        Some(d) => io::write_trajectories(&source, d, &h)?,
        None if source.exists() => fs::remove_file(&source).map_err(|e| LabError::io(&source, e))?,
        None => {}
    }
    io::write_trajectories(&out.join("pool.jsonl"), data.pool.trajectories(), &h)?;
    io::write_trajectories(&out.join("eval_pool.jsonl"), data.eval_pool.trajectories(), &h)?;
    io::write_triplets(&out.join("triplets.jsonl"), &data.triplets, &h)?;
    io::write_pairs(&out.join("pairs.jsonl"), &data.pairs, &h)?;
    println!(
        "wrote {} demos, {} + {} pool trajectories, {} triplets, {} pairs to {}",
        data.demos.len(),
        data.pool.len(),
        data.eval_pool.len(),
        data.triplets.len(),
        data.pairs.len(),
        out.display()
    );
    Ok(())
}

/// Reloads everything `gen-data` wrote.
pub fn load_data(lab: &Lab, out: &Path) -> LabResult<Data> {
    let bins = lab.config.bins;
    let source = out.join("source_demos.jsonl");
    Ok(Data {
        demos: io::read_trajectories(&out.join("demos.jsonl"), GEN)?,
        source_demos: if source.exists() {
            Some(io::read_trajectories(&source, GEN)?)
        } else {
            None
        },
        pool: TrajectoryPool::new(io::read_trajectories(&out.join("pool.jsonl"), GEN)?, bins),
        eval_pool: TrajectoryPool::new(io::read_trajectories(&out.join("eval_pool.jsonl"), GEN)?, bins),
        triplets: io::read_triplets(&out.join("triplets.jsonl"), GEN)?,
        pairs: io::read_pairs(&out.join("pairs.jsonl"), GEN)?,
    })
}

fn load_embedding(out: &Path) -> LabResult<LinearEmbedding> {
    let f: EmbeddingFile = io::read_json(&out.join("embedding.json"), REPR)?;
    Ok(f.into_embedding()?)
}

fn load_rlhf(out: &Path) -> LabResult<RlhfReward> {
    let f: RlhfFile = io::read_json(&out.join("rlhf.json"), RLHF)?;
    Ok(f.into_reward())
}

fn train_repr(lab: &Lab, out: &Path) -> LabResult<()> {
    let data = load_data(lab, out)?;
    let outcome = lab.train_embedding(&data)?;
    let h = lab.hash();
    io::write_json(&out.join("embedding.json"), &EmbeddingFile::new(&outcome.embedding, &h))?;
    io::write_csv(
        &out.join("repr_loss.csv"),
        &h,
        &["epoch", "loss"],
        outcome
            .loss_history
            .iter()
            .enumerate()
            .map(|(e, l)| [e.to_string(), num(*l)]),
    )?;
    if let (Some(first), Some(last)) = (outcome.loss_history.first(), outcome.loss_history.last()) {
        println!("triplet loss {first:.4} -> {last:.4}");
    }
    Ok(())
}

fn train_rlhf(lab: &Lab, out: &Path) -> LabResult<()> {
    let data = load_data(lab, out)?;
    let reward = lab.train_rlhf(&data)?;
    io::write_json(&out.join("rlhf.json"), &RlhfFile::new(&reward, &lab.hash()))?;
    println!("trained reward on {} pairs", data.pairs.len());
    Ok(())
}

fn scorer(lab: &Lab, out: &Path, data: &Data, name: &str) -> LabResult<Box<dyn Scorer + Sync>> {
    let embedding = if name == "rapl" { Some(load_embedding(out)?) } else { None };
    let rlhf = if name == "rlhf" { Some(load_rlhf(out)?) } else { None };
    lab.scorer(name, data, embedding.as_ref(), rlhf.as_ref())
}

fn train_policy(lab: &Lab, out: &Path, reward: &str) -> LabResult<()> {
    let data = load_data(lab, out)?;
    let scorer = scorer(lab, out, &data, reward)?;
    let outcome = lab.train_policy(scorer.as_ref(), &data.calibration()?, 0)?;
    let h = lab.hash();
    io::write_json(&out.join(format!("policy_{reward}.json")), &PolicyFile::new(&outcome.policy, &h))?;
    io::write_csv(
        &out.join(format!("success_{reward}.csv")),
        &h,
        &["iter", "success_rate"],
        outcome
            .history
            .iter()
            .enumerate()
            .map(|(i, s)| [i.to_string(), num(*s)]),
    )?;
    println!(
        "{reward}: final success rate {}",
        outcome.history.last().copied().unwrap_or(0.0)
    );
    Ok(())
}

fn run_dpo(lab: &Lab, out: &Path, reward: &str) -> LabResult<()> {
    let data = load_data(lab, out)?;
    let scorer = scorer(lab, out, &data, reward)?;
    let r = lab.run_dpo(&data, scorer.as_ref())?;
    let h = lab.hash();
    io::write_jsonl(
        &out.join("dpo_pairs.jsonl"),
        r.pairs.iter().map(|p| PreferencePairRecord::new(p, &h)),
    )?;
    io::write_json(&out.join("reference_policy.json"), &PolicyFile::new(&r.reference, &h))?;
    io::write_json(&out.join("dpo_policy.json"), &PolicyFile::new(&r.policy, &h))?;
    let task = lab.task.name();
    io::write_csv(
        &out.join("alignment.csv"),
        &h,
        &["method", "task", "score"],
        [
            ["reference".to_string(), task.to_string(), num(r.reference_score)],
            [format!("dpo-{reward}"), task.to_string(), num(r.policy_score)],
        ],
    )?;
    println!(
        "alignment {:.3} -> {:.3}; dpo loss {:.4} -> {:.4}; label agreement {:.3}",
        r.reference_score, r.policy_score, r.loss_before, r.loss_after, r.label_agreement
    );
    Ok(())
}

fn eval_corr(lab: &Lab, out: &Path, methods: &[String]) -> LabResult<()> {
    let data = load_data(lab, out)?;
    let methods: Vec<String> = if methods.is_empty() {
        REWARDS
            .iter()
            .filter(|m| match **m {
                "rapl" => out.join("embedding.json").exists(),
                "rlhf" => out.join("rlhf.json").exists(),
                _ => true,
            })
            .map(|m| m.to_string())
            .collect()
    } else {
        methods.to_vec()
    };
    let scorers = methods
        .iter()
        .map(|m| scorer(lab, out, &data, m))
        .collect::<LabResult<Vec<_>>>()?;
    let named: Vec<(&str, &(dyn Scorer + Sync))> = methods
        .iter()
        .zip(&scorers)
        .map(|(m, s)| (m.as_str(), s.as_ref()))
        .collect();
    let report = lab.correlation(&data, &named)?;
    let task = lab.task.name();
    io::write_csv(
        &out.join("correlation.csv"),
        &lab.hash(),
        &["method", "task", "mean_spearman", "n"],
        report
            .methods
            .iter()
            .map(|m| [m.method.clone(), task.to_string(), num(m.mean_spearman), m.n.to_string()]),
    )?;
    for m in &report.methods {
        println!("{:<13} {:.3} (n={})", m.method, m.mean_spearman, m.n);
    }
    Ok(())
}

fn dump_plan(lab: &Lab, out: &Path, index: usize, unaligned: bool) -> LabResult<()> {
    let data = load_data(lab, out)?;
    let trajectory = data
        .eval_pool
        .get(index as u64)
        .ok_or_else(|| LabError::Config(format!("index {index} outside the evaluation pool")))?;
    let embedding = if unaligned {
        lab.unaligned_embedding()
    } else {
        load_embedding(out)?
    };
    let (expert, plan) = lab.plan(&embedding, data.experts(), trajectory)?;
    let h = lab.hash();
    let (rows, cols) = plan.shape();
    io::write_csv(
        &out.join("plan.csv"),
        &h,
        &["t", "tprime", "mass"],
        (0..rows).flat_map(|t| (0..cols).map(move |s| (t, s))).map(|(t, s)| {
            [t.to_string(), s.to_string(), num(plan.get(t, s))]
        }),
    )?;
    let rapl = rapl_core::reward_models::RaplReward::from_demos(
        embedding,
        &data.experts()[expert..=expert],
        lab.config.sinkhorn_config(),
    )?;
    let trace = rapl.score(trajectory)?;
    io::write_csv(
        &out.join("reward.csv"),
        &h,
        &["t", "reward"],
        trace.values().iter().enumerate().map(|(t, r)| [t.to_string(), num(*r)]),
    )?;
    println!("trajectory {index} matched expert {expert}");
    Ok(())
}
