//! Artifact formats. Every JSON record carries a `config_hash` field and
//! every CSV starts with a `# config_hash=<hex>` comment line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rapl_core::dpo::PreferencePair;
use rapl_core::env::{ActionSequence, Embodiment, EnvState, TaskKind, Trajectory};
use rapl_core::frames::FeatureSequence;
use rapl_core::linalg::Matrix;
use rapl_core::policy::ActionSequencePolicy;
use rapl_core::representation::{LinearEmbedding, PreferenceTriplet};
use rapl_core::reward_models::{RewardTrace, RlhfReward};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub config_hash: String,
    pub task: String,
    pub embodiment: String,
    pub seed: u64,
    pub states: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
    pub gt_rewards: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn new(t: &Trajectory, config_hash: &str) -> Self {
        Self {
            config_hash: config_hash.into(),
            task: t.task.name().into(),
            embodiment: t.embodiment.into(),
            seed: t.seed,
            states: t.states.iter().map(EnvState::to_vec).collect(),
            observations: t.observations.frames().map(<[f64]>::to_vec).collect(),
            gt_rewards: t.gt_rewards.values().to_vec(),
        }
    }

    pub fn into_trajectory(self) -> Result<Trajectory, String> {
        let task = TaskKind::from_name(&self.task).ok_or_else(|| format!("unknown task {:?}", self.task))?;
        let embodiment = Embodiment::from_name(&self.embodiment)
            .ok_or_else(|| format!("unknown embodiment {:?}", self.embodiment))?;
        let states = self
            .states
            .iter()
            .map(|v| EnvState::from_vec(task, v))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let dim = self.observations.first().map_or(0, Vec::len);
        let observations =
            FeatureSequence::from_frames(dim, &self.observations).map_err(|e| e.to_string())?;
        if states.len() != observations.len() + 1 || self.gt_rewards.len() != observations.len() {
            return Err("states, observations and gt_rewards lengths disagree".into());
        }
        Ok(Trajectory {
            task,
            embodiment: embodiment.name,
            seed: self.seed,
            states,
            observations,
            gt_rewards: RewardTrace::new(self.gt_rewards),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub config_hash: String,
    pub anchor: u64,
    pub positive: u64,
    pub negative: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub config_hash: String,
    pub preferred: u64,
    pub dispreferred: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePairRecord {
    pub config_hash: String,
    pub context: u64,
    pub preferred: Vec<[f64; 2]>,
    pub dispreferred: Vec<[f64; 2]>,
}

impl PreferencePairRecord {
    pub fn new(p: &PreferencePair, config_hash: &str) -> Self {
        Self {
            config_hash: config_hash.into(),
            context: p.context,
            preferred: p.preferred.0.clone(),
            dispreferred: p.dispreferred.0.clone(),
        }
    }

    pub fn into_pair(self) -> PreferencePair {
        PreferencePair {
            context: self.context,
            preferred: ActionSequence(self.preferred),
            dispreferred: ActionSequence(self.dispreferred),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFile {
    pub config_hash: String,
    pub n_e: usize,
    pub n_b: usize,
    /// Row-major.
    pub weights: Vec<f64>,
}

impl EmbeddingFile {
    pub fn new(e: &LinearEmbedding, config_hash: &str) -> Self {
        Self {
            config_hash: config_hash.into(),
            n_e: e.n_e(),
            n_b: e.n_b(),
            weights: e.weights().as_slice().to_vec(),
        }
    }

    pub fn into_embedding(self) -> rapl_core::Result<LinearEmbedding> {
        LinearEmbedding::new(Matrix::from_vec(self.n_e, self.n_b, self.weights)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlhfFile {
    pub config_hash: String,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub config_hash: String,
    pub horizon: usize,
    /// `horizon x 2`, one row per timestep.
    pub mean: Vec<[f64; 2]>,
    pub std: Vec<[f64; 2]>,
}

fn rows(m: &Matrix) -> Vec<[f64; 2]> {
    (0..m.rows()).map(|t| [m.get(t, 0), m.get(t, 1)]).collect()
}

fn from_rows(r: &[[f64; 2]]) -> rapl_core::Result<Matrix> {
    Matrix::from_vec(r.len(), 2, r.iter().flatten().copied().collect())
}

impl PolicyFile {
    pub fn new(p: &ActionSequencePolicy, config_hash: &str) -> Self {
        Self {
            config_hash: config_hash.into(),
            horizon: p.horizon(),
            mean: rows(p.mean()),
            std: rows(p.std()),
        }
    }

    pub fn into_policy(self) -> rapl_core::Result<ActionSequencePolicy> {
        ActionSequencePolicy::new(from_rows(&self.mean)?, from_rows(&self.std)?)
    }
}

impl RlhfFile {
    pub fn new(r: &RlhfReward, config_hash: &str) -> Self {
        Self {
            config_hash: config_hash.into(),
            weights: r.weights.clone(),
            bias: r.bias,
        }
    }

    pub fn into_reward(self) -> RlhfReward {
        RlhfReward {
            weights: self.weights,
            bias: self.bias,
        }
    }
}

fn create(path: &Path) -> LabResult<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| LabError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> LabResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, value).map_err(|e| LabError::format(path, 1, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| LabError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, producer: &'static str) -> LabResult<T> {
    let text = read_artifact(path, producer)?;
    serde_json::from_str(&text).map_err(|e| LabError::format(path, e.line(), e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> LabResult<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| LabError::format(path, 0, e))?;
        w.write_all(b"\n").map_err(|e| LabError::io(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, producer: &'static str) -> LabResult<Vec<T>> {
    if !path.exists() {
        return Err(LabError::MissingArtifact(path.to_path_buf(), producer));
    }
    let file = fs::File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LabError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LabError::format(path, i + 1, e))?);
    }
    Ok(out)
}

fn read_artifact(path: &Path, producer: &'static str) -> LabResult<String> {
    if !path.exists() {
        return Err(LabError::MissingArtifact(path.to_path_buf(), producer));
    }
    fs::read_to_string(path).map_err(|e| LabError::io(path, e))
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory], config_hash: &str) -> LabResult<()> {
    write_jsonl(path, trajectories.iter().map(|t| TrajectoryRecord::new(t, config_hash)))
}

pub fn read_trajectories(path: &Path, producer: &'static str) -> LabResult<Vec<Trajectory>> {
    read_jsonl::<TrajectoryRecord>(path, producer)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.into_trajectory().map_err(|e| LabError::format(path, i + 1, e)))
        .collect()
}

pub fn write_triplets(path: &Path, triplets: &[PreferenceTriplet], config_hash: &str) -> LabResult<()> {
    write_jsonl(
        path,
        triplets.iter().map(|t| TripletRecord {
            config_hash: config_hash.into(),
            anchor: t.anchor,
            positive: t.positive,
            negative: t.negative,
        }),
    )
}

pub fn read_triplets(path: &Path, producer: &'static str) -> LabResult<Vec<PreferenceTriplet>> {
    read_jsonl::<TripletRecord>(path, producer)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            PreferenceTriplet::new(r.anchor, r.positive, r.negative)
                .map_err(|e| LabError::format(path, i + 1, e))
        })
        .collect()
}

pub fn write_pairs(path: &Path, pairs: &[(u64, u64)], config_hash: &str) -> LabResult<()> {
    write_jsonl(
        path,
        pairs.iter().map(|&(p, n)| PairRecord {
            config_hash: config_hash.into(),
            preferred: p,
            dispreferred: n,
        }),
    )
}

pub fn read_pairs(path: &Path, producer: &'static str) -> LabResult<Vec<(u64, u64)>> {
    Ok(read_jsonl::<PairRecord>(path, producer)?
        .into_iter()
        .map(|r| (r.preferred, r.dispreferred))
        .collect())
}

/// Writes a CSV whose first line is the config-hash comment.
pub fn write_csv<R, I>(path: &Path, config_hash: &str, header: &[&str], records: I) -> LabResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = create(path)?;
    writeln!(w, "# config_hash={config_hash}").map_err(|e| LabError::io(path, e))?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(header)?;
    for r in records {
        csv.write_record(r)?;
    }
    csv.flush().map_err(|e| LabError::io(path, e))
}

/// Header and rows of a CSV written by [`write_csv`].
pub fn read_csv(path: &Path, producer: &'static str) -> LabResult<(Vec<String>, Vec<Vec<String>>)> {
    if !path.exists() {
        return Err(LabError::MissingArtifact(path.to_path_buf(), producer));
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()?;
    Ok((header, rows))
}
