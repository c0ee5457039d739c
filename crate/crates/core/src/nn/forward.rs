//! Forward pass and backpropagation through time.

use crate::dataset::ItemId;
use crate::error::{Error, Result};

use super::loss::{self, sigmoid, softmax_into, LossKind, StepOutput};
use super::params::{Dims, Gate, ModelParams};

/// Recurrent state carried between steps. Starts at zero for every session.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    /// Internal (self-loop) state.
    pub s: Vec<f64>,
    /// Layer output.
    pub h: Vec<f64>,
}

impl LstmState {
    pub fn zeros(n2: usize) -> Self {
        LstmState {
            s: vec![0.0; n2],
            h: vec![0.0; n2],
        }
    }
}

#[inline]
fn gate_into(gate: &Gate, x: &[f64], h_prev: &[f64], out: &mut [f64]) {
    out.copy_from_slice(&gate.bias);
    gate.input.mul_vec_add(x, out);
    gate.recurrent.mul_vec_add(h_prev, out);
    for v in out.iter_mut() {
        *v = sigmoid(*v);
    }
}

/// Gate activations of one step, written in place.
struct StepBuffers<'a> {
    c: &'a mut [f64],
    f: &'a mut [f64],
    g: &'a mut [f64],
    q: &'a mut [f64],
    s: &'a mut [f64],
    tanh_s: &'a mut [f64],
    h: &'a mut [f64],
}

#[inline]
fn step_raw(p: &ModelParams, x: &[f64], h_prev: &[f64], s_prev: &[f64], b: StepBuffers<'_>) {
    gate_into(&p.cell, x, h_prev, b.c);
    gate_into(&p.forget, x, h_prev, b.f);
    gate_into(&p.input_gate, x, h_prev, b.g);
    gate_into(&p.output_gate, x, h_prev, b.q);
    for k in 0..b.s.len() {
        b.s[k] = b.f[k] * s_prev[k] + b.g[k] * b.c[k];
        b.tanh_s[k] = b.s[k].tanh();
        b.h[k] = b.q[k] * b.tanh_s[k];
    }
}

/// One LSTM transition from the embedded input `x` and the previous state.
pub fn lstm_step(params: &ModelParams, x: &[f64], prev: &LstmState) -> LstmState {
    let n2 = params.dims().n2;
    let mut bufs = vec![vec![0.0; n2]; 7];
    let [c, f, g, q, s, tanh_s, h] = bufs.as_mut_slice() else {
        unreachable!()
    };
    step_raw(
        params,
        x,
        &prev.h,
        &prev.s,
        StepBuffers {
            c,
            f,
            g,
            q,
            s,
            tanh_s,
            h,
        },
    );
    LstmState {
        s: std::mem::take(s),
        h: std::mem::take(h),
    }
}

/// Dense softmax output layer.
pub fn output_step(params: &ModelParams, h2: &[f64]) -> StepOutput {
    let mut z = params.output_bias.clone();
    params.output.mul_vec_add(h2, &mut z);
    StepOutput::from_scores(z)
}

/// Runs a session from a zero state; step `t` consumes item `t` and predicts
/// item `t + 1`, so a session of length `L` yields `L - 1` outputs.
pub fn forward_session(params: &ModelParams, items: &[ItemId]) -> Result<Vec<StepOutput>> {
    if items.len() < 2 {
        return Err(Error::Size(format!(
            "forward pass needs at least 2 items, got {}",
            items.len()
        )));
    }
    let mut state = LstmState::zeros(params.dims().n2);
    let mut out = Vec::with_capacity(items.len() - 1);
    for &item in &items[..items.len() - 1] {
        let x = params.embed(item)?;
        state = lstm_step(params, &x, &state);
        out.push(output_step(params, &state.h));
    }
    Ok(out)
}

/// Pre-activation scores after consuming each of `inputs`, written row by row
/// into `scores` (`inputs.len() x n_x`).
pub(crate) fn scores_per_step(
    params: &ModelParams,
    inputs: &[ItemId],
    ws: &mut Workspace,
    scores: &mut Vec<f64>,
) -> Result<()> {
    ws.forward(params, inputs)?;
    scores.clear();
    scores.extend_from_slice(&ws.z[..inputs.len() * params.dims().n_x]);
    Ok(())
}

/// Per-session activation record for backpropagation, reused across sessions.
#[derive(Default)]
pub(crate) struct Workspace {
    dims: Option<Dims>,
    steps: usize,
    x: Vec<f64>,
    // h and s hold steps + 1 rows; row 0 is the zero initial state
    h: Vec<f64>,
    s: Vec<f64>,
    c: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    q: Vec<f64>,
    tanh_s: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    dz: Vec<f64>,
}

impl Workspace {
    fn resize(&mut self, dims: Dims, steps: usize) {
        let Dims { n_x, n1, n2 } = dims;
        self.dims = Some(dims);
        self.steps = steps;
        let grow = |v: &mut Vec<f64>, n: usize| {
            if v.len() < n {
                v.resize(n, 0.0);
            }
        };
        grow(&mut self.x, steps * n1);
        grow(&mut self.h, (steps + 1) * n2);
        grow(&mut self.s, (steps + 1) * n2);
        for v in [
            &mut self.c,
            &mut self.f,
            &mut self.g,
            &mut self.q,
            &mut self.tanh_s,
        ] {
            grow(v, steps * n2);
        }
        grow(&mut self.z, steps * n_x);
        grow(&mut self.y, steps * n_x);
        grow(&mut self.dz, n_x);
        self.h[..n2].iter_mut().for_each(|v| *v = 0.0);
        self.s[..n2].iter_mut().for_each(|v| *v = 0.0);
    }

    /// Forward pass over `inputs`, recording every intermediate.
    pub(crate) fn forward(&mut self, p: &ModelParams, inputs: &[ItemId]) -> Result<()> {
        let dims = p.dims();
        let Dims { n_x, n1, n2 } = dims;
        let steps = inputs.len();
        self.resize(dims, steps);
        for (t, &item) in inputs.iter().enumerate() {
            p.embed_into(item, &mut self.x[t * n1..(t + 1) * n1])?;
            let (h_prev, h_next) = self.h.split_at_mut((t + 1) * n2);
            let (s_prev, s_next) = self.s.split_at_mut((t + 1) * n2);
            let cur = t * n2..(t + 1) * n2;
            step_raw(
                p,
                &self.x[t * n1..(t + 1) * n1],
                &h_prev[t * n2..],
                &s_prev[t * n2..],
                StepBuffers {
                    c: &mut self.c[cur.clone()],
                    f: &mut self.f[cur.clone()],
                    g: &mut self.g[cur.clone()],
                    q: &mut self.q[cur.clone()],
                    s: &mut s_next[..n2],
                    tanh_s: &mut self.tanh_s[cur],
                    h: &mut h_next[..n2],
                },
            );
            let z = &mut self.z[t * n_x..(t + 1) * n_x];
            z.copy_from_slice(&p.output_bias);
            p.output.mul_vec_add(&h_next[..n2], z);
            softmax_into(z, &mut self.y[t * n_x..(t + 1) * n_x]);
        }
        Ok(())
    }

    /// Loss of the recorded forward pass without gradients.
    fn loss_of(
        &self,
        session: &[ItemId],
        kind: LossKind,
        negatives: Option<&[Vec<ItemId>]>,
        n_x: usize,
    ) -> Result<f64> {
        let mut total = 0.0;
        for t in 0..self.steps {
            let target = session[t + 1];
            let y = &self.y[t * n_x..(t + 1) * n_x];
            total += match kind {
                LossKind::CrossEntropy => loss::loss_ce(y, target),
                LossKind::Bpr => {
                    let step = StepOutput {
                        z: self.z[t * n_x..(t + 1) * n_x].to_vec(),
                        y_hat: y.to_vec(),
                    };
                    loss::loss_bpr(&step, target, step_negatives(negatives, t)?)?
                }
            };
        }
        Ok(total)
    }
}

fn step_negatives(negatives: Option<&[Vec<ItemId>]>, t: usize) -> Result<&[ItemId]> {
    negatives
        .and_then(|n| n.get(t))
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Argument(format!("missing negative samples for step {t}")))
}

/// Summed loss of one session (no gradient).
pub(crate) fn session_loss(
    p: &ModelParams,
    session: &[ItemId],
    kind: LossKind,
    negatives: Option<&[Vec<ItemId>]>,
    ws: &mut Workspace,
) -> Result<f64> {
    ws.forward(p, &session[..session.len() - 1])?;
    ws.loss_of(session, kind, negatives, p.dims().n_x)
}

/// Adds the gradient of one session's summed loss to `grad`; returns the loss.
pub(crate) fn session_gradient(
    p: &ModelParams,
    session: &[ItemId],
    kind: LossKind,
    negatives: Option<&[Vec<ItemId>]>,
    grad: &mut ModelParams,
    ws: &mut Workspace,
) -> Result<f64> {
    let Dims { n_x, n1, n2 } = p.dims();
    let steps = session.len() - 1;
    if kind == LossKind::Bpr {
        for t in 0..steps {
            let negs = step_negatives(negatives, t)?;
            if negs.is_empty() || negs.contains(&session[t + 1]) {
                return Err(Error::Argument(format!(
                    "invalid negatives at step {t}: empty or containing the target"
                )));
            }
        }
    }
    ws.forward(p, &session[..steps])?;

    let mut total = 0.0;
    let mut dh_next = vec![0.0; n2];
    let mut ds_next = vec![0.0; n2];
    let mut dh = vec![0.0; n2];
    let mut ds = vec![0.0; n2];
    let mut d_pre = [vec![0.0; n2], vec![0.0; n2], vec![0.0; n2], vec![0.0; n2]];
    let mut dx = vec![0.0; n1];
    let mut dz = std::mem::take(&mut ws.dz);

    for t in (0..steps).rev() {
        let target = session[t + 1];
        let z = &ws.z[t * n_x..(t + 1) * n_x];
        let y = &ws.y[t * n_x..(t + 1) * n_x];
        total += match kind {
            LossKind::CrossEntropy => loss::ce_grad(y, target, &mut dz[..n_x]),
            LossKind::Bpr => {
                loss::bpr_grad(z, y, target, step_negatives(negatives, t)?, &mut dz[..n_x])
            }
        };
        let dz = &dz[..n_x];
        let h_t = &ws.h[(t + 1) * n2..(t + 2) * n2];
        let h_prev = &ws.h[t * n2..(t + 1) * n2];
        let s_prev = &ws.s[t * n2..(t + 1) * n2];
        let x_t = &ws.x[t * n1..(t + 1) * n1];
        let r = t * n2..(t + 1) * n2;
        let (c, f, g, q, tanh_s) = (
            &ws.c[r.clone()],
            &ws.f[r.clone()],
            &ws.g[r.clone()],
            &ws.q[r.clone()],
            &ws.tanh_s[r],
        );

        grad.output.add_outer(dz, h_t);
        for (b, &d) in grad.output_bias.iter_mut().zip(dz) {
            *b += d;
        }
        dh.copy_from_slice(&dh_next);
        p.output.mul_t_vec_add(dz, &mut dh);

        let [d_cell, d_forget, d_input, d_output] = &mut d_pre;
        for k in 0..n2 {
            ds[k] = dh[k] * q[k] * (1.0 - tanh_s[k] * tanh_s[k]) + ds_next[k];
            d_output[k] = dh[k] * tanh_s[k] * q[k] * (1.0 - q[k]);
            d_forget[k] = ds[k] * s_prev[k] * f[k] * (1.0 - f[k]);
            d_input[k] = ds[k] * c[k] * g[k] * (1.0 - g[k]);
            d_cell[k] = ds[k] * g[k] * c[k] * (1.0 - c[k]);
            ds_next[k] = ds[k] * f[k];
        }

        dx.iter_mut().for_each(|v| *v = 0.0);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let gates = [
            (&p.cell, &mut grad.cell),
            (&p.forget, &mut grad.forget),
            (&p.input_gate, &mut grad.input_gate),
            (&p.output_gate, &mut grad.output_gate),
        ];
        for ((gate, ggate), d) in gates.into_iter().zip(d_pre.iter()) {
            ggate.input.add_outer(d, x_t);
            ggate.recurrent.add_outer(d, h_prev);
            for (b, &v) in ggate.bias.iter_mut().zip(d) {
                *b += v;
            }
            gate.input.mul_t_vec_add(d, &mut dx);
            gate.recurrent.mul_t_vec_add(d, &mut dh_next);
        }

        let j = session[t].index();
        for (r, &v) in dx.iter().enumerate() {
            grad.embedding.data[r * n_x + j] += v;
        }
    }
    ws.dz = dz;
    Ok(total)
}
