//! Layers shared by the backbone and the generator.

use rand_distr::{Distribution, Normal, Uniform};

use crate::error::Result;
use crate::numcore::{Matrix, Tape, Var};
use crate::rng::Rng;

/// Role of a parameter tensor; bias-only tuning selects on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    Weight,
    Bias,
}

pub(crate) fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Matrix {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

pub(crate) fn normal(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix {
    let dist = Normal::new(0.0, std).expect("positive std");
    Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

/// Single-layer gated recurrent cell, gates packed as `[reset | update | new]`.
///
/// ```text
/// r  = σ(x·Wi_r + bi_r + h·Wh_r + bh_r)
/// z  = σ(x·Wi_z + bi_z + h·Wh_z + bh_z)
/// n  = tanh(x·Wi_n + bi_n + r ⊙ (h·Wh_n + bh_n))
/// h' = n + z ⊙ (h − n)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Gru {
    /// `input × 3·hidden`
    pub w_input: Matrix,
    /// `hidden × 3·hidden`
    pub w_hidden: Matrix,
    pub b_input: Matrix,
    pub b_hidden: Matrix,
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_input: Var,
    pub w_hidden: Var,
    pub b_input: Var,
    pub b_hidden: Var,
}

impl Gru {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Gru {
            w_input: uniform(input, 3 * hidden, bound, rng),
            w_hidden: uniform(hidden, 3 * hidden, bound, rng),
            b_input: uniform(1, 3 * hidden, bound, rng),
            b_hidden: uniform(1, 3 * hidden, bound, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Gru {
            w_input: Matrix::zeros(input, 3 * hidden),
            w_hidden: Matrix::zeros(hidden, 3 * hidden),
            b_input: Matrix::zeros(1, 3 * hidden),
            b_hidden: Matrix::zeros(1, 3 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.rows()
    }

    pub fn param_count(input: usize, hidden: usize) -> usize {
        3 * hidden * (input + hidden + 2)
    }

    pub fn tensors(&self) -> [(&'static str, ParamKind, &Matrix); 4] {
        [
            ("w_input", ParamKind::Weight, &self.w_input),
            ("w_hidden", ParamKind::Weight, &self.w_hidden),
            ("b_input", ParamKind::Bias, &self.b_input),
            ("b_hidden", ParamKind::Bias, &self.b_hidden),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 4] {
        [
            &mut self.w_input,
            &mut self.w_hidden,
            &mut self.b_input,
            &mut self.b_hidden,
        ]
    }

    pub fn from_vars(vars: &[Var]) -> GruVars {
        GruVars {
            w_input: vars[0],
            w_hidden: vars[1],
            b_input: vars[2],
            b_hidden: vars[3],
        }
    }
}

impl GruVars {
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let hidden = tape.value(self.w_hidden).rows();
        let gi = tape.matmul(x, self.w_input)?;
        let gi = tape.add_row(gi, self.b_input)?;
        let gh = tape.matmul(h, self.w_hidden)?;
        let gh = tape.add_row(gh, self.b_hidden)?;

        let ir = tape.slice_cols(gi, 0, hidden)?;
        let iz = tape.slice_cols(gi, hidden, hidden)?;
        let in_ = tape.slice_cols(gi, 2 * hidden, hidden)?;
        let hr = tape.slice_cols(gh, 0, hidden)?;
        let hz = tape.slice_cols(gh, hidden, hidden)?;
        let hn = tape.slice_cols(gh, 2 * hidden, hidden)?;

        let r = tape.add(ir, hr)?;
        let r = tape.sigmoid(r);
        let z = tape.add(iz, hz)?;
        let z = tape.sigmoid(z);
        let rn = tape.mul(r, hn)?;
        let n = tape.add(in_, rn)?;
        let n = tape.tanh(n);
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }

    /// Runs the cell over per-step inputs (each `B×input`) from a zero state
    /// and returns the hidden state after every step.
    pub fn run(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Vec<Var>> {
        let Some(first) = inputs.first() else {
            return Ok(vec![]);
        };
        let batch = tape.value(*first).rows();
        let hidden = tape.value(self.w_hidden).rows();
        let mut h = tape.constant(Matrix::zeros(batch, hidden));
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            h = self.step(tape, x, h)?;
            out.push(h);
        }
        Ok(out)
    }
}
