#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sessrec::nn::{
    batch_loss, grad_with_negatives, init_params, LossKind, ModelParams, SessionNegatives,
};
use sessrec::{ItemId, Session};

/// Xavier-initialised weights with every entry (biases included) jittered,
/// so no gradient coordinate is trivially zero.
pub fn random_params(n_x: usize, n1: usize, n2: usize, seed: u64) -> ModelParams {
    let mut p = init_params(n_x, n1, n2, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    p
}

pub fn random_session<R: Rng>(rng: &mut R, n_x: usize, max_len: usize) -> Session {
    let len = rng.random_range(2..=max_len);
    Session::from_indices((0..len).map(|_| rng.random_range(0..n_x))).unwrap()
}

/// Fixed negatives for every prediction step of every session.
pub fn random_negatives<R: Rng>(
    rng: &mut R,
    sessions: &[Session],
    n_x: usize,
    count: usize,
) -> Vec<SessionNegatives> {
    sessions
        .iter()
        .map(|s| {
            s.items()[1..]
                .iter()
                .map(|&target| sessrec::nn::sample_negatives(rng, n_x, target, count))
                .collect()
        })
        .collect()
}

/// Largest per-coordinate relative error between the analytic gradient and
/// central differences with step `h`. Coordinates where both are below
/// `floor` in magnitude are compared against `floor` instead.
pub fn max_gradient_error(
    params: &ModelParams,
    sessions: &[Session],
    loss: LossKind,
    negatives: Option<&[SessionNegatives]>,
    h: f64,
    floor: f64,
) -> f64 {
    let batch: Vec<&Session> = sessions.iter().collect();
    let (analytic, _) = grad_with_negatives(params, &batch, loss, negatives).unwrap();
    let analytic: Vec<f64> = analytic.tensors().into_iter().flatten().copied().collect();

    let mut worst: f64 = 0.0;
    let mut idx = 0;
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let len = params.tensors()[t].len();
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t][i] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t][i] -= h;
            let lp = batch_loss(&plus, &batch, loss, negatives).unwrap();
            let lm = batch_loss(&minus, &batch, loss, negatives).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    worst
}

pub fn ids(v: &[u32]) -> Vec<ItemId> {
    v.iter().map(|&i| ItemId(i)).collect()
}
