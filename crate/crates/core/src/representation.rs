//! Trainable linear embedding over frozen base features, fitted by maximum
//! likelihood on preference triplets.
//!
//! A triplet `(anchor, positive, negative)` is modelled with a
//! Bradley-Terry choice between the two OT distances to the anchor:
//! `P = exp(-d_pos) / (exp(-d_pos) + exp(-d_neg))`.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::frames::{EmbeddingSequence, FeatureSequence};
use crate::linalg::{self, Matrix};
use crate::ot::{self, Sensitivity, SinkhornConfig, ZERO_GUARD};
use crate::rng;

/// Latent dimension used by the experiments.
pub const LATENT_DIM: usize = 32;

/// `weights` is `n_e x n_b`; frames are mapped as `z = W x` with no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEmbedding {
    weights: Matrix,
}

impl LinearEmbedding {
    pub fn new(weights: Matrix) -> Result<Self> {
        if !weights.is_finite() {
            return Err(Error::NonFinite("embedding weight"));
        }
        Ok(Self { weights })
    }

    /// I.i.d. uniform entries in `[-1/sqrt(n_b), 1/sqrt(n_b)]`.
    pub fn random(n_e: usize, n_b: usize, seed: u64) -> Self {
        let mut rng = rng::child(seed, 0x11, 0);
        let bound = 1.0 / libm::sqrt(n_b as f64);
        let weights = Matrix::from_fn(n_e, n_b, |_, _| rng.random_range(-bound..=bound));
        Self { weights }
    }

    pub fn n_e(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_b(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut weights = self.weights.clone();
        weights.scale(factor);
        Self { weights }
    }

    pub fn embed(&self, features: &FeatureSequence) -> Result<EmbeddingSequence> {
        if features.dim() != self.n_b() {
            return Err(Error::DimensionMismatch {
                expected: self.n_b(),
                actual: features.dim(),
            });
        }
        let mut out = EmbeddingSequence::with_capacity(self.n_e(), features.len());
        let mut z = alloc::vec![0.0; self.n_e()];
        for frame in features.frames() {
            self.weights.mul_vec_into(frame, &mut z);
            out.push(&z)?;
        }
        Ok(out)
    }

    fn step(&mut self, grad: &Matrix, learning_rate: f64) {
        self.weights.axpy(-learning_rate, grad);
    }
}

/// Identifiers of a ranked triplet. All three are distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PreferenceTriplet {
    pub anchor: u64,
    pub positive: u64,
    pub negative: u64,
}

impl PreferenceTriplet {
    pub fn new(anchor: u64, positive: u64, negative: u64) -> Result<Self> {
        if anchor == positive || anchor == negative || positive == negative {
            return Err(Error::InvalidConfig("triplet ids must be distinct"));
        }
        Ok(Self {
            anchor,
            positive,
            negative,
        })
    }
}

/// `exp(-d_pos) / (exp(-d_pos) + exp(-d_neg))`, evaluated as
/// `1 / (1 + exp(d_pos - d_neg))`.
pub fn triplet_preference_prob(d_pos: f64, d_neg: f64) -> f64 {
    sigmoid(d_neg - d_pos)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradientConfig {
    pub sinkhorn: SinkhornConfig,
    pub sensitivity: Sensitivity,
}

impl From<SinkhornConfig> for GradientConfig {
    fn from(sinkhorn: SinkhornConfig) -> Self {
        Self {
            sinkhorn,
            sensitivity: Sensitivity::default(),
        }
    }
}

/// OT distance between two embedded sequences and its gradient with respect
/// to the embedding weights.
struct DistanceGrad {
    distance: f64,
    grad: Matrix,
}

fn distance_and_grad(
    embedding: &LinearEmbedding,
    a: &FeatureSequence,
    b: &FeatureSequence,
    config: &GradientConfig,
) -> Result<DistanceGrad> {
    let za = embedding.embed(a)?;
    let zb = embedding.embed(b)?;
    let coupling = ot::couple(&za, &zb, &config.sinkhorn)?;
    let sens = ot::distance_sensitivity(
        &coupling.cost,
        &coupling.plan,
        config.sinkhorn.epsilon,
        config.sensitivity,
    )?;

    let n_e = embedding.n_e();
    let unit = |seq: &EmbeddingSequence| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut dirs = Vec::with_capacity(seq.len() * n_e);
        let mut norms = Vec::with_capacity(seq.len());
        for f in seq.frames() {
            let n = linalg::norm(f);
            if n < ZERO_GUARD {
                return Err(Error::ZeroVector);
            }
            norms.push(n);
            dirs.extend(f.iter().map(|v| v / n));
        }
        Ok((dirs, norms))
    };
    let (ua, na) = unit(&za)?;
    let (ub, nb) = unit(&zb)?;
    let (ta, tb) = (za.len(), zb.len());

    // dC_kl/dz_k = -(ub_l - cos_kl ua_k) / |z_k|, symmetric for z_l.
    let mut gza = alloc::vec![0.0; ta * n_e];
    let mut gzb = alloc::vec![0.0; tb * n_e];
    for k in 0..ta {
        let uk = &ua[k * n_e..(k + 1) * n_e];
        for l in 0..tb {
            let s = sens.get(k, l);
            if s == 0.0 {
                continue;
            }
            let ul = &ub[l * n_e..(l + 1) * n_e];
            let cos = 1.0 - coupling.cost.get(k, l);
            let ga = &mut gza[k * n_e..(k + 1) * n_e];
            let wa = -s / na[k];
            for ((g, &x), &y) in ga.iter_mut().zip(ul).zip(uk) {
                *g += wa * (x - cos * y);
            }
            let gb = &mut gzb[l * n_e..(l + 1) * n_e];
            let wb = -s / nb[l];
            for ((g, &x), &y) in gb.iter_mut().zip(uk).zip(ul) {
                *g += wb * (x - cos * y);
            }
        }
    }

    let mut grad = Matrix::zeros(n_e, embedding.n_b());
    let mut outer = |gz: &[f64], feats: &FeatureSequence| {
        for (t, x) in feats.frames().enumerate() {
            let g = &gz[t * n_e..(t + 1) * n_e];
            for (r, &gr) in g.iter().enumerate() {
                if gr == 0.0 {
                    continue;
                }
                for (w, &xv) in grad.row_mut(r).iter_mut().zip(x) {
                    *w += gr * xv;
                }
            }
        }
    };
    outer(&gza, a);
    outer(&gzb, b);
    Ok(DistanceGrad {
        distance: coupling.distance,
        grad,
    })
}

/// Feature sequences of one triplet, already resolved from their ids.
#[derive(Debug, Clone, Copy)]
pub struct TripletFeatures<'a> {
    pub anchor: &'a FeatureSequence,
    pub positive: &'a FeatureSequence,
    pub negative: &'a FeatureSequence,
}

/// Negative log-likelihood of one triplet.
pub fn triplet_loss(
    embedding: &LinearEmbedding,
    triplet: TripletFeatures<'_>,
    sinkhorn: &SinkhornConfig,
) -> Result<f64> {
    let anchor = embedding.embed(triplet.anchor)?;
    let d_pos = ot::couple(&anchor, &embedding.embed(triplet.positive)?, sinkhorn)?.distance;
    let d_neg = ot::couple(&anchor, &embedding.embed(triplet.negative)?, sinkhorn)?.distance;
    Ok(softplus(d_pos - d_neg))
}

/// Negative log-likelihood of one triplet and its gradient in `W`.
pub fn triplet_loss_and_grad(
    embedding: &LinearEmbedding,
    triplet: TripletFeatures<'_>,
    config: &GradientConfig,
) -> Result<(f64, Matrix)> {
    let pos = distance_and_grad(embedding, triplet.anchor, triplet.positive, config)?;
    let neg = distance_and_grad(embedding, triplet.anchor, triplet.negative, config)?;
    let margin = pos.distance - neg.distance;
    let loss = softplus(margin);
    // dloss/dd_pos = sigmoid(margin) = 1 - P, dloss/dd_neg = -(1 - P)
    let weight = sigmoid(margin);
    let mut grad = pos.grad;
    grad.axpy(-1.0, &neg.grad);
    grad.scale(weight);
    Ok((loss, grad))
}

/// Lookup of base-feature observations by trajectory id.
pub trait TrajectoryStore {
    fn features(&self, id: u64) -> Option<&FeatureSequence>;
}

impl TrajectoryStore for alloc::collections::BTreeMap<u64, FeatureSequence> {
    fn features(&self, id: u64) -> Option<&FeatureSequence> {
        self.get(&id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub sinkhorn: SinkhornConfig,
    pub sensitivity: Sensitivity,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-2,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            sinkhorn: SinkhornConfig::default(),
            sensitivity: Sensitivity::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1"));
        }
        self.sinkhorn.validate()
    }

    fn gradient(&self) -> GradientConfig {
        GradientConfig {
            sinkhorn: self.sinkhorn,
            sensitivity: self.sensitivity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub embedding: LinearEmbedding,
    /// Mean triplet loss seen during each epoch (pre-update weights per batch).
    pub loss_history: Vec<f64>,
}

fn resolve<'a, S: TrajectoryStore + ?Sized>(
    store: &'a S,
    t: &PreferenceTriplet,
) -> Result<TripletFeatures<'a>> {
    let get = |id| store.features(id).ok_or(Error::UnresolvedTrajectoryId(id));
    Ok(TripletFeatures {
        anchor: get(t.anchor)?,
        positive: get(t.positive)?,
        negative: get(t.negative)?,
    })
}

/// Mean negative log-likelihood over a dataset.
pub fn mean_loss<S: TrajectoryStore + ?Sized>(
    embedding: &LinearEmbedding,
    dataset: &[PreferenceTriplet],
    store: &S,
    sinkhorn: &SinkhornConfig,
) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in dataset {
        total += triplet_loss(embedding, resolve(store, t)?, sinkhorn)?;
    }
    Ok(total / dataset.len() as f64)
}

/// Minibatch gradient descent on the triplet negative log-likelihood.
///
/// The shuffle order of epoch `e` is drawn from a stream derived from
/// `(config.seed, e)`, so runs are bitwise reproducible.
pub fn train_representation<S: TrajectoryStore + ?Sized>(
    initial: &LinearEmbedding,
    dataset: &[PreferenceTriplet],
    store: &S,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let resolved = dataset
        .iter()
        .map(|t| resolve(store, t))
        .collect::<Result<Vec<_>>>()?;
    let mut embedding = initial.clone();
    let mut loss_history = Vec::new();
    if resolved.is_empty() {
        return Ok(TrainOutcome {
            embedding,
            loss_history,
        });
    }
    let grad_config = config.gradient();
    let mut order: Vec<usize> = (0..resolved.len()).collect();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::child(config.seed, 0x12, epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = Matrix::zeros(embedding.n_e(), embedding.n_b());
            for &i in batch {
                let (loss, g) = triplet_loss_and_grad(&embedding, resolved[i], &grad_config)?;
                epoch_loss += loss;
                grad.axpy(1.0, &g);
            }
            grad.scale(1.0 / batch.len() as f64);
            embedding.step(&grad, config.learning_rate);
        }
        loss_history.push(epoch_loss / resolved.len() as f64);
    }
    Ok(TrainOutcome {
        embedding,
        loss_history,
    })
}
