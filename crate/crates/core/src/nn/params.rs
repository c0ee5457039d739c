use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ItemId;
use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self * x`
    #[inline]
    pub fn mul_vec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += self^T * y`
    #[inline]
    pub fn mul_t_vec_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yr, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yr != 0.0 {
                axpy(yr, row, out);
            }
        }
    }

    /// `self += y * x^T`
    #[inline]
    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (&yr, row) in y.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if yr != 0.0 {
                axpy(yr, x, row);
            }
        }
    }

    fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        // fan_in = cols, fan_out = rows
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes without reassociation
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Input weights, recurrent weights and bias of one LSTM gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    /// `n2 x n1`
    pub input: Matrix,
    /// `n2 x n2`
    pub recurrent: Matrix,
    pub bias: Vec<f64>,
}

impl Gate {
    fn zeros(n1: usize, n2: usize) -> Self {
        Gate {
            input: Matrix::zeros(n2, n1),
            recurrent: Matrix::zeros(n2, n2),
            bias: vec![0.0; n2],
        }
    }

    fn xavier(n1: usize, n2: usize, rng: &mut ChaCha8Rng) -> Self {
        Gate {
            input: Matrix::xavier(n2, n1, rng),
            recurrent: Matrix::xavier(n2, n2, rng),
            bias: vec![0.0; n2],
        }
    }
}

/// Every trainable parameter of the embedding + LSTM + softmax network.
///
/// The same layout doubles as the gradient and as Adam's moment buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Item embedding, `n1 x n_x`; column `j` is the embedding of item `j`.
    pub embedding: Matrix,
    /// Candidate state update.
    pub cell: Gate,
    pub forget: Gate,
    pub input_gate: Gate,
    pub output_gate: Gate,
    /// `n_x x n2`
    pub output: Matrix,
    pub output_bias: Vec<f64>,
}

pub type Gradient = ModelParams;

/// Network dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_x: usize,
    pub n1: usize,
    pub n2: usize,
}

/// Uniform Xavier initialisation; biases start at zero.
pub fn init_params(n_x: usize, n1: usize, n2: usize, seed: u64) -> Result<ModelParams> {
    if n_x == 0 || n1 == 0 || n2 == 0 {
        return Err(Error::Argument(format!(
            "dimensions must be positive, got n_x={n_x} n1={n1} n2={n2}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ModelParams {
        embedding: Matrix::xavier(n1, n_x, &mut rng),
        cell: Gate::xavier(n1, n2, &mut rng),
        forget: Gate::xavier(n1, n2, &mut rng),
        input_gate: Gate::xavier(n1, n2, &mut rng),
        output_gate: Gate::xavier(n1, n2, &mut rng),
        output: Matrix::xavier(n_x, n2, &mut rng),
        output_bias: vec![0.0; n_x],
    })
}

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        let Dims { n_x, n1, n2 } = dims;
        ModelParams {
            embedding: Matrix::zeros(n1, n_x),
            cell: Gate::zeros(n1, n2),
            forget: Gate::zeros(n1, n2),
            input_gate: Gate::zeros(n1, n2),
            output_gate: Gate::zeros(n1, n2),
            output: Matrix::zeros(n_x, n2),
            output_bias: vec![0.0; n_x],
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n_x: self.embedding.cols,
            n1: self.embedding.rows,
            n2: self.cell.bias.len(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.dims())
    }

    /// The four gates in the order (cell, forget, input, output).
    pub fn gates(&self) -> [&Gate; 4] {
        [
            &self.cell,
            &self.forget,
            &self.input_gate,
            &self.output_gate,
        ]
    }

    /// Embedding column of `item`.
    pub fn embed(&self, item: ItemId) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.embedding.rows];
        self.embed_into(item, &mut out)?;
        Ok(out)
    }

    pub(crate) fn embed_into(&self, item: ItemId, out: &mut [f64]) -> Result<()> {
        let n_x = self.embedding.cols;
        let j = item.index();
        if j >= n_x {
            return Err(Error::Domain {
                index: j,
                catalog_size: n_x,
            });
        }
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.embedding.data[r * n_x + j];
        }
        Ok(())
    }

    /// All parameter arrays in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.embedding.data];
        for g in [
            &self.cell,
            &self.forget,
            &self.input_gate,
            &self.output_gate,
        ] {
            v.push(&g.input.data);
            v.push(&g.recurrent.data);
            v.push(&g.bias);
        }
        v.push(&self.output.data);
        v.push(&self.output_bias);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.embedding.data];
        for g in [
            &mut self.cell,
            &mut self.forget,
            &mut self.input_gate,
            &mut self.output_gate,
        ] {
            v.push(&mut g.input.data);
            v.push(&mut g.recurrent.data);
            v.push(&mut g.bias);
        }
        v.push(&mut self.output.data);
        v.push(&mut self.output_bias);
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}
