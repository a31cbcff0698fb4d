//! Frame-level temporal embedding.
//!
//! A small MLP is trained to regress every frame's normalised time position
//! `t/T` from its features. The regression head is thrown away afterwards and
//! the 20-d output of the trunk becomes the frame embedding. The trunk lives
//! behind a [`SharedMlp`] handle so the shuffle classifier in [`crate::ssl`]
//! can keep training the very same parameters.

use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{common_dim, normalized_position, FrameSequence};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{
    mlp_backward, Activation, DenseLayer, LayerGrad, Mlp, MlpGrad, Parameters, SgdMomentum,
};

pub const EMBEDDING_DIM: usize = 20;
pub const TRUNK_HIDDEN: usize = 40;

/// A reference-counted MLP. Clones share storage; use
/// [`SharedMlp::deep_clone`] for an independent copy.
#[derive(Debug, Clone)]
pub struct SharedMlp(Arc<RwLock<Mlp>>);

impl SharedMlp {
    pub fn new(mlp: Mlp) -> Self {
        SharedMlp(Arc::new(RwLock::new(mlp)))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Mlp> {
        self.0.read().expect("trunk lock poisoned")
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, Mlp> {
        self.0.write().expect("trunk lock poisoned")
    }

    pub fn snapshot(&self) -> Mlp {
        self.read().clone()
    }

    pub fn deep_clone(&self) -> Self {
        SharedMlp::new(self.snapshot())
    }

    /// True when both handles point at the same parameters.
    pub fn same_storage(&self, other: &SharedMlp) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl PartialEq for SharedMlp {
    fn eq(&self, other: &Self) -> bool {
        self.same_storage(other) || *self.read() == *other.read()
    }
}

impl Serialize for SharedMlp {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.read().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SharedMlp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        Mlp::deserialize(deserializer).map(SharedMlp::new)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    trunk: SharedMlp,
    head: DenseLayer,
}

impl EmbeddingModel {
    /// Randomly initialised `D → 40 → 20` trunk with a `20 → 1` head.
    pub fn glorot(input_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let trunk = Mlp::glorot(
            &[input_dim, TRUNK_HIDDEN, EMBEDDING_DIM],
            Activation::Relu,
            Activation::Relu,
            rng,
        )?;
        let head = DenseLayer::glorot(EMBEDDING_DIM, 1, Activation::Identity, rng);
        Self::from_parts(trunk, head)
    }

    pub fn from_parts(trunk: Mlp, head: DenseLayer) -> Result<Self> {
        if head.input_dim() != trunk.output_dim() || head.output_dim() != 1 {
            return Err(Error::dim("regression head input", trunk.output_dim(), head.input_dim()));
        }
        Ok(EmbeddingModel {
            trunk: SharedMlp::new(trunk),
            head,
        })
    }

    pub fn trunk(&self) -> &SharedMlp {
        &self.trunk
    }

    pub fn head(&self) -> &DenseLayer {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.read().input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.trunk.read().output_dim()
    }

    /// Regression output `≈ t/T` for one frame.
    pub fn predict_position(&self, frame: &[f64]) -> Result<f64> {
        let e = self.trunk.read().apply(frame)?;
        Ok(self.head.forward(&e)?[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            epochs: 50,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEmbedding {
    pub model: EmbeddingModel,
    /// Mean squared error per epoch, accumulated over the epoch's minibatches.
    pub epoch_losses: Vec<f64>,
}

/// Trains a fresh embedding model on `dataset` by regressing `t/T`.
pub fn train_frame_embedding(
    dataset: &[FrameSequence],
    config: &EmbeddingConfig,
) -> Result<TrainedEmbedding> {
    let dim = common_dim(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = EmbeddingModel::glorot(dim, &mut rng)?;
    train_embedding_model(model, dataset, config, &mut rng)
}

/// Continues training an existing model; exposed so tests can start from a
/// hand-built configuration.
pub fn train_embedding_model(
    mut model: EmbeddingModel,
    dataset: &[FrameSequence],
    config: &EmbeddingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainedEmbedding> {
    let dim = common_dim(dataset)?;
    if dim != model.input_dim() {
        return Err(Error::dim("embedding input", model.input_dim(), dim));
    }
    if let Some(v) = dataset.iter().find(|v| v.len() < 2) {
        return Err(Error::InvalidArgument(format!(
            "video {} needs at least 2 frames for position regression",
            v.video_id()
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }

    let mut frames: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(v, video)| (0..video.len()).map(move |t| (v, t)))
        .collect();

    let mut trunk_opt = SgdMomentum::new(config.learning_rate, config.momentum)?;
    let mut head_opt = SgdMomentum::new(config.learning_rate, config.momentum)?;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let trunk_handle = model.trunk.clone();
    let mut trunk = trunk_handle.write();

    for epoch in 0..config.epochs {
        frames.shuffle(rng);
        let mut total = 0.0;
        for batch in frames.chunks(config.batch_size) {
            let mut trunk_grad = MlpGrad::zeros_like(&trunk);
            let mut head_grad = LayerGrad::zeros_like(&model.head);
            let scale = 2.0 / batch.len() as f64;
            for &(v, t) in batch {
                let video = &dataset[v];
                let target = normalized_position(t, video.len());
                let e = trunk.apply(video.frame(t))?;
                let y = model.head.forward(&e)?[0];
                let residual = y - target;
                total += residual * residual;
                let (hg, de) = mlp_backward(std::slice::from_ref(&model.head), &e, &[scale * residual])?;
                crate::nn::axpy(&mut head_grad, 1.0, &hg)?;
                trunk.backward_into(video.frame(t), &de, &mut trunk_grad)?;
            }
            if !total.is_finite() {
                return Err(Error::NonFinite(format!("embedding loss in epoch {epoch}")));
            }
            trunk_opt.step(&mut *trunk, &trunk_grad)?;
            head_opt.step_slices(model.head.param_slices_mut(), head_grad.param_slices())?;
        }
        epoch_losses.push(total / frames.len() as f64);
    }
    drop(trunk);
    Ok(TrainedEmbedding {
        model,
        epoch_losses,
    })
}

/// Applies an MLP to every frame of a video.
pub fn embed_with(mlp: &Mlp, video: &FrameSequence) -> Result<Matrix> {
    if video.dim() != mlp.input_dim() {
        return Err(Error::dim(
            format!("embedding input for video {}", video.video_id()),
            mlp.input_dim(),
            video.dim(),
        ));
    }
    let rows = video
        .features()
        .iter_rows()
        .map(|f| mlp.apply(f))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

/// Frame-level embedding `T × 20`: the trunk applied to every frame.
pub fn embed_frames(model: &EmbeddingModel, video: &FrameSequence) -> Result<Matrix> {
    embed_with(&model.trunk.read(), video)
}
