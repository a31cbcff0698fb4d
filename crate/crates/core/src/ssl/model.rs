use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::ShuffleSample;
use crate::data::FrameSequence;
use crate::embedding::SharedMlp;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{
    bce_loss, sigmoid, Activation, DenseLayer, LayerGrad, MlpGrad, Parameters, RnnCell, RnnGrad,
    SgdMomentum,
};

/// Shared trunk, vanilla RNN over the trunk outputs, and a logistic readout
/// of the last hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslModel {
    trunk: SharedMlp,
    rnn: RnnCell,
    /// Produces the logit; the sigmoid is applied on top.
    head: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslGrad {
    pub trunk: MlpGrad,
    pub rnn: RnnGrad,
    pub head: LayerGrad,
}

impl SslGrad {
    fn zeros_like(model: &SslModel) -> Self {
        SslGrad {
            trunk: MlpGrad::zeros_like(&model.trunk.read()),
            rnn: RnnGrad::zeros_like(&model.rnn),
            head: LayerGrad::zeros_like(&model.head),
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.trunk.param_slices();
        v.extend(self.rnn.param_slices());
        v.extend(self.head.param_slices());
        v
    }

    fn add_scaled(&mut self, factor: f64, other: &SslGrad) {
        let mut dst = self.trunk.param_slices_mut();
        dst.extend(self.rnn.param_slices_mut());
        dst.extend(self.head.param_slices_mut());
        for (d, s) in dst.into_iter().zip(other.slices()) {
            d.iter_mut().zip(s).for_each(|(x, y)| *x += factor * y);
        }
    }

    /// All buffers concatenated in trunk, RNN, head order.
    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

impl SslModel {
    /// Fresh RNN and head on top of an existing trunk. The RNN's input and
    /// hidden sizes equal the trunk's output width.
    pub fn new<R: Rng + ?Sized>(trunk: SharedMlp, rng: &mut R) -> Self {
        let width = trunk.read().output_dim();
        let rnn = RnnCell::glorot(width, width, rng);
        let head = DenseLayer::glorot(width, 1, Activation::Identity, rng);
        SslModel { trunk, rnn, head }
    }

    pub fn from_parts(trunk: SharedMlp, rnn: RnnCell, head: DenseLayer) -> Result<Self> {
        let width = trunk.read().output_dim();
        if rnn.input_dim() != width {
            return Err(Error::dim("RNN input", width, rnn.input_dim()));
        }
        if head.input_dim() != rnn.hidden_dim() || head.output_dim() != 1 {
            return Err(Error::dim("shuffle head input", rnn.hidden_dim(), head.input_dim()));
        }
        Ok(SslModel { trunk, rnn, head })
    }

    pub fn trunk(&self) -> &SharedMlp {
        &self.trunk
    }

    pub fn rnn(&self) -> &RnnCell {
        &self.rnn
    }

    pub fn rnn_mut(&mut self) -> &mut RnnCell {
        &mut self.rnn
    }

    pub fn head(&self) -> &DenseLayer {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.read().input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.rnn.hidden_dim()
    }

    /// Probability that the frame sequence is in its original order.
    pub fn predict(&self, frames: &[Vec<f64>]) -> Result<f64> {
        let trunk = self.trunk.read();
        let inputs = frames.iter().map(|f| trunk.apply(f)).collect::<Result<Vec<_>>>()?;
        let h0 = vec![0.0; self.rnn.hidden_dim()];
        let hiddens = self.rnn.forward(&inputs, &h0)?;
        let logit = self.head.forward(hiddens.last().expect("non-empty"))?[0];
        Ok(sigmoid(logit))
    }

    /// Binary cross-entropy of one sample and its gradient with respect to
    /// every parameter, backpropagated through head, RNN and trunk.
    pub fn loss_and_grad(&self, sample: &ShuffleSample) -> Result<(f64, SslGrad)> {
        let trunk = self.trunk.read();
        let inputs = sample
            .frames
            .iter()
            .map(|f| trunk.apply(f))
            .collect::<Result<Vec<_>>>()?;
        let h = self.rnn.hidden_dim();
        let h0 = vec![0.0; h];
        let hiddens = self.rnn.forward(&inputs, &h0)?;
        let last = hiddens.last().expect("non-empty");
        let logit = self.head.forward(last)?[0];
        let bce = bce_loss(sigmoid(logit), sample.positive);

        let mut grad = SslGrad {
            trunk: MlpGrad::zeros_like(&trunk),
            rnn: RnnGrad::zeros_like(&self.rnn),
            head: LayerGrad::zeros_like(&self.head),
        };
        grad.head.weight.add_outer(&[bce.logit_grad], last);
        grad.head.bias[0] = bce.logit_grad;
        let mut upstream = vec![vec![0.0; h]; inputs.len()];
        *upstream.last_mut().expect("non-empty") = self.head.weight().matvec_t(&[bce.logit_grad]);
        let (rnn_grad, dx, _) = self.rnn.backward(&inputs, &h0, &hiddens, &upstream)?;
        grad.rnn = rnn_grad;
        for (frame, d) in sample.frames.iter().zip(&dx) {
            trunk.backward_into(frame, d, &mut grad.trunk)?;
        }
        Ok((bce.loss, grad))
    }

    /// Mean loss and mean gradient over a batch.
    pub fn batch_loss_and_grad(&self, samples: &[ShuffleSample]) -> Result<(f64, SslGrad)> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty shuffle batch".into()));
        }
        let mut total = SslGrad::zeros_like(self);
        let mut loss = 0.0;
        let w = 1.0 / samples.len() as f64;
        for s in samples {
            let (l, g) = self.loss_and_grad(s)?;
            loss += w * l;
            total.add_scaled(w, &g);
        }
        Ok((loss, total))
    }

    /// One optimizer step on every parameter, the shared trunk included.
    pub fn apply_gradient(&mut self, optimizer: &mut SgdMomentum, grad: &SslGrad) -> Result<()> {
        let mut trunk = self.trunk.write();
        let mut params = trunk.param_slices_mut();
        params.extend(self.rnn.param_slices_mut());
        params.extend(self.head.param_slices_mut());
        optimizer.step_slices(params, grad.slices())
    }

    /// All parameters in trunk, RNN, head order.
    pub fn flat_params(&self) -> Vec<f64> {
        let trunk = self.trunk.read();
        let mut v = trunk.param_slices().concat();
        v.extend(self.rnn.param_slices().concat());
        v.extend(self.head.param_slices().concat());
        v
    }

    /// Inverse of [`SslModel::flat_params`].
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let mut trunk = self.trunk.write();
        let mut params = trunk.param_slices_mut();
        params.extend(self.rnn.param_slices_mut());
        params.extend(self.head.param_slices_mut());
        let expected: usize = params.iter().map(|s| s.len()).sum();
        if flat.len() != expected {
            return Err(Error::dim("SSL parameters", expected, flat.len()));
        }
        let mut offset = 0;
        for p in params {
            let n = p.len();
            p.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Per-frame action-level embedding: the RNN's hidden response to a single
/// trunk output from the zero state, `tanh(W_in · trunk(x_t) + b)`.
pub fn action_embed_frames(model: &SslModel, video: &FrameSequence) -> Result<Matrix> {
    let trunk = model.trunk.read();
    if video.dim() != trunk.input_dim() {
        return Err(Error::dim(
            format!("features of {}", video.video_id()),
            trunk.input_dim(),
            video.dim(),
        ));
    }
    let h = model.rnn.hidden_dim();
    let mut out = Vec::with_capacity(video.len() * h);
    for t in 0..video.len() {
        let e = trunk.apply(video.frame(t))?;
        out.extend(model.rnn.step_from_zero(&e));
    }
    Matrix::from_vec(video.len(), h, out)
}
