use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_bound, Parameters};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Vanilla tanh recurrent cell: `h_t = tanh(W_in·x_t + W_hid·h_{t-1} + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnCell {
    w_in: Matrix,
    w_hid: Matrix,
    bias: Vec<f64>,
}

impl RnnCell {
    pub fn new(w_in: Matrix, w_hid: Matrix, bias: Vec<f64>) -> Result<Self> {
        let h = w_hid.rows();
        if w_hid.cols() != h {
            return Err(Error::dim("RnnCell w_hid must be square", h, w_hid.cols()));
        }
        if w_in.rows() != h {
            return Err(Error::dim("RnnCell w_in rows", h, w_in.rows()));
        }
        if bias.len() != h {
            return Err(Error::dim("RnnCell bias", h, bias.len()));
        }
        Ok(RnnCell { w_in, w_hid, bias })
    }

    pub fn glorot<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut draw = |rows: usize, cols: usize| {
            let bound = glorot_bound(cols, rows);
            let data = (0..rows * cols)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            Matrix::from_vec(rows, cols, data).expect("finite glorot weights")
        };
        let w_in = draw(hidden, input);
        let w_hid = draw(hidden, hidden);
        RnnCell {
            w_in,
            w_hid,
            bias: vec![0.0; hidden],
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        RnnCell {
            w_in: Matrix::zeros(hidden, input),
            w_hid: Matrix::zeros(hidden, hidden),
            bias: vec![0.0; hidden],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hid.rows()
    }

    pub fn w_in(&self) -> &Matrix {
        &self.w_in
    }

    pub fn w_hid(&self) -> &Matrix {
        &self.w_hid
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// One unrolled step. Dimensions are the caller's responsibility.
    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
        let a = self.w_in.matvec(x);
        let b = self.w_hid.matvec(h_prev);
        a.iter()
            .zip(&b)
            .zip(&self.bias)
            .map(|((u, v), c)| (u + v + c).tanh())
            .collect()
    }

    /// Hidden response to a single input from the zero state.
    pub fn step_from_zero(&self, x: &[f64]) -> Vec<f64> {
        self.w_in
            .matvec(x)
            .iter()
            .zip(&self.bias)
            .map(|(u, c)| (u + c).tanh())
            .collect()
    }

    pub fn forward(&self, inputs: &[Vec<f64>], h0: &[f64]) -> Result<Vec<Vec<f64>>> {
        rnn_forward(self, inputs, h0)
    }

    /// Backprop through time.
    ///
    /// `hiddens` must come from [`RnnCell::forward`] on the same `inputs` and
    /// `h0`; `upstream[t]` is the loss gradient with respect to `h_t`.
    /// Returns parameter gradients, per-step input gradients and the gradient
    /// with respect to `h0`.
    pub fn backward(
        &self,
        inputs: &[Vec<f64>],
        h0: &[f64],
        hiddens: &[Vec<f64>],
        upstream: &[Vec<f64>],
    ) -> Result<(RnnGrad, Vec<Vec<f64>>, Vec<f64>)> {
        let steps = inputs.len();
        if hiddens.len() != steps {
            return Err(Error::dim("BPTT hidden states", steps, hiddens.len()));
        }
        if upstream.len() != steps {
            return Err(Error::dim("BPTT upstream gradients", steps, upstream.len()));
        }
        let h = self.hidden_dim();
        let mut grad = RnnGrad::zeros_like(self);
        let mut dx = vec![Vec::new(); steps];
        let mut carry = vec![0.0; h];
        for t in (0..steps).rev() {
            if upstream[t].len() != h {
                return Err(Error::dim(format!("upstream gradient at step {t}"), h, upstream[t].len()));
            }
            let h_prev = if t == 0 { h0 } else { &hiddens[t - 1] };
            let dz: Vec<f64> = upstream[t]
                .iter()
                .zip(&carry)
                .zip(&hiddens[t])
                .map(|((u, c), ht)| (u + c) * (1.0 - ht * ht))
                .collect();
            grad.w_in.add_outer(&dz, &inputs[t]);
            grad.w_hid.add_outer(&dz, h_prev);
            for (gb, d) in grad.bias.iter_mut().zip(&dz) {
                *gb += d;
            }
            dx[t] = self.w_in.matvec_t(&dz);
            carry = self.w_hid.matvec_t(&dz);
        }
        Ok((grad, dx, carry))
    }
}

impl Parameters for RnnCell {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.w_in.data(), self.w_hid.data(), &self.bias]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w_in.data_mut(), self.w_hid.data_mut(), &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnGrad {
    pub w_in: Matrix,
    pub w_hid: Matrix,
    pub bias: Vec<f64>,
}

impl RnnGrad {
    pub fn zeros_like(cell: &RnnCell) -> Self {
        RnnGrad {
            w_in: Matrix::zeros(cell.hidden_dim(), cell.input_dim()),
            w_hid: Matrix::zeros(cell.hidden_dim(), cell.hidden_dim()),
            bias: vec![0.0; cell.hidden_dim()],
        }
    }
}

impl Parameters for RnnGrad {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.w_in.data(), self.w_hid.data(), &self.bias]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w_in.data_mut(), self.w_hid.data_mut(), &mut self.bias]
    }
}

/// Runs the cell over `inputs` starting from `h0` and returns every hidden
/// state `h_1..h_len`.
pub fn rnn_forward(cell: &RnnCell, inputs: &[Vec<f64>], h0: &[f64]) -> Result<Vec<Vec<f64>>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("RNN input sequence is empty".into()));
    }
    if h0.len() != cell.hidden_dim() {
        return Err(Error::dim("RNN initial state", cell.hidden_dim(), h0.len()));
    }
    let mut states = Vec::with_capacity(inputs.len());
    let mut h = h0.to_vec();
    for (t, x) in inputs.iter().enumerate() {
        if x.len() != cell.input_dim() {
            return Err(Error::dim(format!("RNN input at step {t}"), cell.input_dim(), x.len()));
        }
        h = cell.step(x, &h);
        states.push(h.clone());
    }
    Ok(states)
}
