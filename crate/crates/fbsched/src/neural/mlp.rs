//! The three-layer perceptron and its operation-count model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::dataset::Normalizer;
use super::NeuralError;

/// Basic operations booked per sigmoid evaluation (negate, exponential,
/// add, divide).
pub const SIGMOID_OP_COST: u64 = 4;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Operations performed by one forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    pub mults: u64,
    pub adds: u64,
    pub sigmoid_evals: u64,
}

impl OpCount {
    pub fn total(&self) -> u64 {
        self.mults + self.adds + SIGMOID_OP_COST * self.sigmoid_evals
    }
}

/// Cost of one forward pass for `n_loops` outputs (and `n_loops + 1`
/// inputs) with `m_hidden` hidden units: 4mn + 6m - n basic operations.
///
/// Bookkeeping: each hidden unit spends n+1 multiplies and n+1 adds
/// (bias included) plus a 4-op sigmoid; each output spends m multiplies
/// and m-1 adds, its bias seeding the accumulator for free.
pub fn flop_count(n_loops: usize, m_hidden: usize) -> u64 {
    let (n, m) = (n_loops as u64, m_hidden as u64);
    4 * m * n + 6 * m - n
}

/// Weights of a network with one sigmoid hidden layer and linear output:
/// y = W2 sigma(W1 x + b1) + b2.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// m x n_in
    pub w1: DMatrix<f64>,
    /// m
    pub b1: DVector<f64>,
    /// n_out x m
    pub w2: DMatrix<f64>,
    /// n_out
    pub b2: DVector<f64>,
}

impl MlpParams {
    /// All weights drawn uniformly from [-0.5, 0.5].
    pub fn init<R: Rng>(
        n_in: usize,
        m_hidden: usize,
        n_out: usize,
        rng: &mut R,
    ) -> Result<Self, NeuralError> {
        if m_hidden == 0 {
            return Err(NeuralError::NoHiddenUnits);
        }
        let mut draw = || rng.gen_range(-0.5..=0.5);
        Ok(Self {
            w1: DMatrix::from_fn(m_hidden, n_in, |_, _| draw()),
            b1: DVector::from_fn(m_hidden, |_, _| draw()),
            w2: DMatrix::from_fn(n_out, m_hidden, |_, _| draw()),
            b2: DVector::from_fn(n_out, |_, _| draw()),
        })
    }

    pub fn n_in(&self) -> usize {
        self.w1.ncols()
    }

    pub fn m_hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.w2.nrows()
    }

    /// Forward pass in the normalized domain.
    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = (&self.w1 * x + &self.b1).map(sigmoid);
        &self.w2 * z + &self.b2
    }

    /// Forward pass plus hidden activations, as the trainer needs them.
    pub(super) fn forward_with_hidden(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let z = (&self.w1 * x + &self.b1).map(sigmoid);
        let y = &self.w2 * &z + &self.b2;
        (y, z)
    }

    /// Forward pass written out scalar by scalar, booking every operation;
    /// the count must reproduce [`flop_count`] when n_in = n_out + 1.
    pub fn forward_instrumented(&self, x: &DVector<f64>) -> (DVector<f64>, OpCount) {
        let mut ops = OpCount::default();
        let m = self.m_hidden();
        let n_in = self.n_in();
        let n_out = self.n_out();

        let mut z = DVector::zeros(m);
        for j in 0..m {
            // first product seeds the accumulator; n_in - 1 combining adds
            // plus the bias add follow
            let mut acc = self.w1[(j, 0)] * x[0];
            ops.mults += 1;
            for i in 1..n_in {
                acc += self.w1[(j, i)] * x[i];
                ops.mults += 1;
                ops.adds += 1;
            }
            acc += self.b1[j];
            ops.adds += 1;
            z[j] = sigmoid(acc);
            ops.sigmoid_evals += 1;
        }

        let mut y = DVector::zeros(n_out);
        for k in 0..n_out {
            // The bias seeds the accumulator, so only the m products and
            // the m - 1 combining adds are booked.
            let mut acc = self.b2[k];
            for j in 0..m {
                acc += self.w2[(k, j)] * z[j];
                ops.mults += 1;
            }
            ops.adds += (m as u64).saturating_sub(1);
            y[k] = acc;
        }
        (y, ops)
    }
}

/// A trained period predictor: the network plus the input/output scaling
/// it was fitted under.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodNet {
    pub params: MlpParams,
    pub norm: Normalizer,
}

impl PeriodNet {
    /// Predict sampling periods (seconds) for execution times (seconds)
    /// and an available utilization.
    pub fn predict(&self, exec_times: &[f64], u_budget: f64) -> Result<Vec<f64>, NeuralError> {
        let expected = self.params.n_in();
        if exec_times.len() + 1 != expected {
            return Err(NeuralError::DimensionMismatch {
                what: "network inputs",
                expected,
                got: exec_times.len() + 1,
            });
        }
        let mut raw = Vec::with_capacity(expected);
        raw.extend_from_slice(exec_times);
        raw.push(u_budget);
        let x = self.norm.normalize_input(&raw);
        let y = self.params.forward(&x);
        Ok(self.norm.denormalize_output(&y))
    }
}
