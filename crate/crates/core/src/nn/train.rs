//! Mini-batch training with Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ItemId, Session};
use crate::error::{Error, Result};

use super::adam::{AdamHyper, AdamState};
use super::forward::{session_gradient, session_loss, Workspace};
use super::loss::LossKind;
use super::params::{init_params, Gradient, ModelParams};

/// Sessions per parallel work unit. Fixed so the reduction order, and hence
/// the summed gradient, does not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Negatives drawn per prediction step (ranking loss only).
    pub neg_samples: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamHyper::default();
        TrainConfig {
            loss: LossKind::CrossEntropy,
            embedding_dim: 20,
            hidden_dim: 50,
            batch_size: 64,
            epochs: 25,
            neg_samples: 1024,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self, n_x: usize) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch_size and epochs must be at least 1".into(),
            ));
        }
        if self.embedding_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("layer dimensions must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.loss == LossKind::Bpr && (self.neg_samples == 0 || self.neg_samples >= n_x) {
            return Err(Error::Config(format!(
                "neg_samples must lie in [1, n_x) = [1, {n_x}), got {}",
                self.neg_samples
            )));
        }
        Ok(())
    }
}

/// Negatives for every step of one session: `negatives[t]` belongs to the
/// prediction of item `t + 1`.
pub type SessionNegatives = Vec<Vec<ItemId>>;

/// Uniform draws from the catalog minus `target`, with replacement.
pub fn sample_negatives<R: Rng + ?Sized>(
    rng: &mut R,
    n_x: usize,
    target: ItemId,
    count: usize,
) -> Vec<ItemId> {
    (0..count)
        .map(|_| {
            let u = rng.random_range(0..n_x - 1);
            ItemId(if u >= target.index() { u + 1 } else { u } as u32)
        })
        .collect()
}

fn draw_batch_negatives<R: Rng + ?Sized>(
    rng: &mut R,
    batch: &[&Session],
    n_x: usize,
    count: usize,
) -> Vec<SessionNegatives> {
    batch
        .iter()
        .map(|s| {
            s.items()[1..]
                .iter()
                .map(|&target| sample_negatives(rng, n_x, target, count))
                .collect()
        })
        .collect()
}

fn check_items(session: &Session, n_x: usize) -> Result<()> {
    match session.items().iter().find(|i| i.index() >= n_x) {
        Some(i) => Err(Error::Domain {
            index: i.index(),
            catalog_size: n_x,
        }),
        None => Ok(()),
    }
}

/// Gradient of the summed loss over every prediction step of `batch`, with
/// explicitly supplied negatives (required for the ranking loss, ignored for
/// cross entropy). Returns the gradient and the summed loss.
pub fn grad_with_negatives(
    params: &ModelParams,
    batch: &[&Session],
    loss: LossKind,
    negatives: Option<&[SessionNegatives]>,
) -> Result<(Gradient, f64)> {
    let n_x = params.dims().n_x;
    for s in batch {
        check_items(s, n_x)?;
    }
    if loss == LossKind::Bpr && negatives.map(<[_]>::len) != Some(batch.len()) {
        return Err(Error::Argument(
            "one negative set per session is required".into(),
        ));
    }
    let chunk_results: Vec<Result<(Gradient, f64)>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut g = params.zeros_like();
            let mut ws = Workspace::default();
            let mut total = 0.0;
            for (k, s) in chunk.iter().enumerate() {
                let negs = negatives.map(|n| n[ci * CHUNK + k].as_slice());
                total += session_gradient(params, s.items(), loss, negs, &mut g, &mut ws)?;
            }
            Ok((g, total))
        })
        .collect();

    let mut grad = params.zeros_like();
    let mut total = 0.0;
    for r in chunk_results {
        let (g, l) = r?;
        grad.add_assign(&g);
        total += l;
    }
    Ok((grad, total))
}

/// Gradient of the summed batch loss; ranking-loss negatives are drawn from
/// `rng`, one fresh set per prediction step.
pub fn grad<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &[&Session],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(Gradient, f64)> {
    match config.loss {
        LossKind::CrossEntropy => grad_with_negatives(params, batch, config.loss, None),
        LossKind::Bpr => {
            let negs = draw_batch_negatives(rng, batch, params.dims().n_x, config.neg_samples);
            grad_with_negatives(params, batch, config.loss, Some(&negs))
        }
    }
}

/// Summed loss over a batch with fixed negatives.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[&Session],
    loss: LossKind,
    negatives: Option<&[SessionNegatives]>,
) -> Result<f64> {
    let mut ws = Workspace::default();
    let mut total = 0.0;
    for (k, s) in batch.iter().enumerate() {
        check_items(s, params.dims().n_x)?;
        let negs = negatives.and_then(|n| n.get(k)).map(Vec::as_slice);
        total += session_loss(params, s.items(), loss, negs, &mut ws)?;
    }
    Ok(total)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean per-step training loss of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Trains a freshly initialised model on `sessions`.
pub fn train(sessions: &[Session], n_x: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    if sessions.is_empty() {
        return Err(Error::Size("cannot train on an empty session set".into()));
    }
    config.validate(n_x)?;
    for s in sessions {
        check_items(s, n_x)?;
    }
    let mut params = init_params(n_x, config.embedding_dim, config.hidden_dim, config.seed)?;
    let mut adam = AdamState::new(&params, config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..sessions.len()).collect();
    let steps_per_epoch: usize = sessions.iter().map(|s| s.len() - 1).sum();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch_idx in order.chunks(config.batch_size) {
            let batch: Vec<&Session> = batch_idx.iter().map(|&i| &sessions[i]).collect();
            let (g, l) = grad(&params, &batch, config, &mut rng)?;
            if !l.is_finite() {
                return Err(Error::Numerical(format!(
                    "training loss {l} in epoch {epoch}"
                )));
            }
            adam.step(&mut params, &g);
            epoch_loss += l;
        }
        if !params.is_finite() {
            return Err(Error::Numerical(format!(
                "parameters diverged in epoch {epoch}"
            )));
        }
        loss_trace.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok(TrainOutcome { params, loss_trace })
}
