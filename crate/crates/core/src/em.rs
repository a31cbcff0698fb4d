//! Generalized EM over segmentations, network weights and mean lengths.
//!
//! Each epoch decodes every video with the current model (E-step), scores the
//! decoded segmentations by their per-frame log joint `Q`, and then improves
//! the model against those fixed segmentations (M-step): first the
//! likelihood network, then the shuffle classifier, then the mean lengths.
//! With the guard enabled, an M-step update that would lower `Q` at the
//! current segmentations is rolled back, so the recorded `Q` never drops.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stream_seed, FrameSequence};
use crate::embedding::{embed_with, SharedMlp};
use crate::error::{Error, Result};
use crate::hmm::{
    default_max_len, frame_log_likelihoods, score_segmentation, train_likelihood_mlp,
    viterbi_decode_with, DecodeOptions, DurationModel, HmmParams, LikelihoodModel,
    LikelihoodTraining, Segmentation, TranscriptMode,
};
use crate::linalg::Matrix;
use crate::nn::SgdMomentum;
use crate::ssl::{action_embed_frames, ssl_train_epoch, SslEpoch, SslModel};

/// What the likelihood network sees for each frame.
#[derive(Debug, Clone)]
pub enum FeatureMap {
    /// The stage-one trunk output, frozen.
    Frame(SharedMlp),
    /// The shuffle RNN's single-step hidden state over the shared trunk.
    Action(SslModel),
}

impl FeatureMap {
    pub fn embed(&self, video: &FrameSequence) -> Result<Matrix> {
        match self {
            FeatureMap::Frame(trunk) => embed_with(&trunk.read(), video),
            FeatureMap::Action(model) => action_embed_frames(model, video),
        }
    }

    pub fn embed_all(&self, dataset: &[FrameSequence]) -> Result<Vec<Matrix>> {
        dataset.par_iter().map(|v| self.embed(v)).collect()
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Frame(trunk) => trunk.read().output_dim(),
            FeatureMap::Action(model) => model.embedding_dim(),
        }
    }

    pub fn ssl(&self) -> Option<&SslModel> {
        match self {
            FeatureMap::Action(model) => Some(model),
            FeatureMap::Frame(_) => None,
        }
    }
}

/// Longest segment the decoder may emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxLenPolicy {
    /// `min(T, ⌈6·max λ⌉)`, raised to the longest segment of the video's
    /// previous segmentation so that segmentation stays admissible, and to
    /// `2⌈T / N⌉` so short initial means cannot squeeze the decoding.
    Auto,
    /// Whole video.
    Full,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_epochs: usize,
    /// Convergence threshold on `|ΔQ|`.
    pub epsilon: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub max_len: MaxLenPolicy,
    pub transcript: TranscriptMode,
    pub durations: DurationModel,
    /// Passes over all frames per M-step for the likelihood network.
    pub likelihood_epochs: usize,
    pub likelihood_batch: usize,
    /// Passes over the pseudo-labels when fitting the initial likelihood
    /// network.
    pub init_epochs: usize,
    pub init_learning_rate: f64,
    pub ssl_learning_rate: f64,
    pub ssl_batch_videos: usize,
    /// Train the shuffle classifier in the M-step.
    pub train_ssl: bool,
    pub update_lengths: bool,
    /// Roll back updates that lower `Q`.
    pub guard: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_epochs: 20,
            epsilon: 1e-3,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            max_len: MaxLenPolicy::Auto,
            transcript: TranscriptMode::Monotone,
            durations: DurationModel::Poisson,
            likelihood_epochs: 5,
            likelihood_batch: 32,
            init_epochs: 20,
            init_learning_rate: 0.01,
            ssl_learning_rate: 0.001,
            ssl_batch_videos: 4,
            train_ssl: true,
            update_lengths: true,
            guard: true,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be at least 1".into()));
        }
        if self.likelihood_batch == 0 {
            return Err(Error::InvalidArgument("likelihood batch must be positive".into()));
        }
        SgdMomentum::new(self.learning_rate, self.momentum)?;
        SgdMomentum::new(self.ssl_learning_rate, self.momentum)?;
        SgdMomentum::new(self.init_learning_rate, self.momentum)?;
        Ok(())
    }

    fn decode_options(&self, frames: usize, params: &HmmParams, previous: Option<&Segmentation>) -> DecodeOptions {
        let max_len = match self.max_len {
            MaxLenPolicy::Full => frames,
            MaxLenPolicy::Fixed(l) => l,
            MaxLenPolicy::Auto => {
                let longest = previous.and_then(|s| s.lengths().iter().copied().max()).unwrap_or(0);
                let base = match self.durations {
                    DurationModel::Poisson => default_max_len(frames, params.lambdas()),
                    DurationModel::Uniform => frames,
                };
                let floor = (2 * frames.div_ceil(params.lambdas().len().max(1))).min(frames);
                base.max(longest).max(floor)
            }
        };
        DecodeOptions {
            max_len: Some(max_len),
            transcript: self.transcript,
            durations: self.durations,
        }
    }
}

/// Stage-one outputs the loop starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmInit {
    /// One cluster label per frame, already in temporal order.
    pub pseudo_labels: Vec<Vec<usize>>,
    pub lambdas: Vec<f64>,
}

/// Progress of one epoch, in the form written to the progress log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_q: f64,
    pub lambdas: Vec<f64>,
    pub likelihood_loss: Option<f64>,
    pub ssl_loss: Option<f64>,
    pub accepted_likelihood: bool,
    pub accepted_ssl: bool,
    pub accepted_lengths: bool,
    pub skipped_videos: usize,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub features: FeatureMap,
    pub likelihood: LikelihoodModel,
    pub params: HmmParams,
    /// Completed E-steps.
    pub epoch: usize,
    pub q_history: Vec<f64>,
    /// MAP segmentation from the latest E-step; `None` for skipped videos.
    pub segmentations: Vec<Option<Segmentation>>,
    pub skip_reasons: Vec<Option<String>>,
    pub converged: bool,
    pub records: Vec<EpochRecord>,
    likelihood_opt: SgdMomentum,
    ssl_opt: SgdMomentum,
}

impl TrainState {
    pub fn new(features: FeatureMap, likelihood: LikelihoodModel, params: HmmParams, config: &EmConfig) -> Result<Self> {
        config.validate()?;
        if likelihood.input_dim() != features.dim() {
            return Err(Error::dim("likelihood network input", features.dim(), likelihood.input_dim()));
        }
        if likelihood.n_actions() != params.n_actions() {
            return Err(Error::dim("likelihood network outputs", params.n_actions(), likelihood.n_actions()));
        }
        Ok(TrainState {
            features,
            likelihood,
            params,
            epoch: 0,
            q_history: Vec::new(),
            segmentations: Vec::new(),
            skip_reasons: Vec::new(),
            converged: false,
            records: Vec::new(),
            likelihood_opt: SgdMomentum::new(config.learning_rate, config.momentum)?,
            ssl_opt: SgdMomentum::new(config.ssl_learning_rate, config.momentum)?,
        })
    }

    /// Fits a fresh likelihood network to the pseudo-labels and sets `Λ`.
    pub fn initialize(dataset: &[FrameSequence], features: FeatureMap, init: &EmInit, config: &EmConfig) -> Result<Self> {
        let n = init.lambdas.len();
        let params = HmmParams::with_default_kappa(init.lambdas.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 0, "likelihood-init"));
        let mut likelihood = LikelihoodModel::glorot(features.dim(), n, &mut rng)?;
        let embeddings = features.embed_all(dataset)?;
        let mut opt = SgdMomentum::new(config.init_learning_rate, config.momentum)?;
        train_likelihood_mlp(
            &mut likelihood,
            &embeddings,
            &init.pseudo_labels,
            LikelihoodTraining {
                epochs: config.init_epochs,
                batch_size: config.likelihood_batch,
            },
            &mut opt,
            &mut rng,
        )?;
        Self::new(features, likelihood, params, config)
    }

    /// Refits the likelihood network to new per-frame labels from scratch
    /// optimizer state, keeping its weights as the starting point.
    pub fn refit_likelihood(&mut self, dataset: &[FrameSequence], labels: &[Vec<usize>], config: &EmConfig, round: u64) -> Result<Vec<f64>> {
        let embeddings = self.features.embed_all(dataset)?;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, round, "likelihood-refit"));
        let mut opt = SgdMomentum::new(config.init_learning_rate, config.momentum)?;
        train_likelihood_mlp(
            &mut self.likelihood,
            &embeddings,
            labels,
            LikelihoodTraining {
                epochs: config.init_epochs,
                batch_size: config.likelihood_batch,
            },
            &mut opt,
            &mut rng,
        )
    }

    /// Decodes every video with the current model.
    pub fn decode(&self, dataset: &[FrameSequence], config: &EmConfig) -> Result<EStep> {
        e_step(self, dataset, config)
    }
}

/// Result of decoding the whole dataset.
#[derive(Debug, Clone)]
pub struct EStep {
    pub segmentations: Vec<Option<Segmentation>>,
    pub skip_reasons: Vec<Option<String>>,
    /// `(1/T_m) · log joint` of each decoded video.
    pub per_video_q: Vec<Option<f64>>,
    pub mean_q: f64,
    pub embeddings: Vec<Matrix>,
}

/// MAP segmentation of every video and the mean per-frame log joint.
///
/// A video without any admissible segmentation is skipped with a warning
/// and left out of the mean.
pub fn e_step(state: &TrainState, dataset: &[FrameSequence], config: &EmConfig) -> Result<EStep> {
    let embeddings = state.features.embed_all(dataset)?;
    let decoded = dataset
        .par_iter()
        .zip(&embeddings)
        .enumerate()
        .map(|(i, (video, emb))| {
            let ll = frame_log_likelihoods(&state.likelihood, emb)?;
            let previous = state.segmentations.get(i).and_then(Option::as_ref);
            let options = config.decode_options(video.len(), &state.params, previous);
            match viterbi_decode_with(&ll, &state.params, &options) {
                Ok(d) => Ok(Ok((d.segmentation, d.log_posterior / video.len() as f64))),
                Err(e @ Error::NoAdmissibleSegmentation { .. }) => Ok(Err(e.to_string())),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut segmentations = Vec::with_capacity(dataset.len());
    let mut skip_reasons = Vec::with_capacity(dataset.len());
    let mut per_video_q = Vec::with_capacity(dataset.len());
    for (video, d) in dataset.iter().zip(decoded) {
        match d {
            Ok((seg, q)) => {
                segmentations.push(Some(seg));
                skip_reasons.push(None);
                per_video_q.push(Some(q));
            }
            Err(reason) => {
                log::warn!("skipping {}: {reason}", video.video_id());
                segmentations.push(None);
                skip_reasons.push(Some(reason));
                per_video_q.push(None);
            }
        }
    }
    let kept: Vec<f64> = per_video_q.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::InvalidArgument("no video could be segmented".into()));
    }
    let mean_q = kept.iter().sum::<f64>() / kept.len() as f64;
    Ok(EStep {
        segmentations,
        skip_reasons,
        per_video_q,
        mean_q,
        embeddings,
    })
}

/// Mean of `(1/T_m) · log joint` over the videos that have a segmentation,
/// for the given embeddings, likelihood network and parameters.
pub fn mean_q(
    likelihood: &LikelihoodModel,
    params: &HmmParams,
    embeddings: &[Matrix],
    segmentations: &[Option<Segmentation>],
    config: &EmConfig,
) -> Result<f64> {
    if embeddings.len() != segmentations.len() {
        return Err(Error::dim("segmentations", embeddings.len(), segmentations.len()));
    }
    let scores = embeddings
        .par_iter()
        .zip(segmentations)
        .filter_map(|(emb, seg)| seg.as_ref().map(|s| (emb, s)))
        .map(|(emb, seg)| {
            let ll = frame_log_likelihoods(likelihood, emb)?;
            let options = config.decode_options(emb.rows(), params, Some(seg));
            Ok(score_segmentation(&ll, params, seg, &options)? / emb.rows() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no segmented video to score".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Outcome of the weight half of the M-step.
#[derive(Debug, Clone)]
pub struct WeightUpdate {
    pub likelihood_loss: Option<f64>,
    pub ssl_loss: Option<f64>,
    pub accepted_likelihood: bool,
    pub accepted_ssl: bool,
    /// `Q` at the fixed segmentations after the update.
    pub q: f64,
    /// Frame features after the update.
    pub embeddings: Vec<Matrix>,
}

/// Trains the likelihood network on the decoded frame labels, then the
/// shuffle classifier on samples drawn from the same segmentations.
pub fn m_step_weights(
    state: &mut TrainState,
    dataset: &[FrameSequence],
    estep: &EStep,
    config: &EmConfig,
) -> Result<WeightUpdate> {
    let segs = &estep.segmentations;
    let kept: Vec<usize> = (0..dataset.len()).filter(|&i| segs[i].is_some()).collect();
    let labels: Vec<Vec<usize>> = kept.iter().map(|&i| segs[i].as_ref().expect("kept").frame_labels()).collect();
    let round = state.epoch as u64;

    let train_likelihood = |state: &mut TrainState, embeddings: &[Matrix]| -> Result<f64> {
        let subset: Vec<Matrix> = kept.iter().map(|&i| embeddings[i].clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, round, "likelihood"));
        let losses = train_likelihood_mlp(
            &mut state.likelihood,
            &subset,
            &labels,
            LikelihoodTraining {
                epochs: config.likelihood_epochs,
                batch_size: config.likelihood_batch,
            },
            &mut state.likelihood_opt,
            &mut rng,
        )?;
        Ok(losses.last().copied().unwrap_or(f64::NAN))
    };

    let mut embeddings = estep.embeddings.clone();
    let q0 = mean_q(&state.likelihood, &state.params, &embeddings, segs, config)?;

    let saved = (state.likelihood.clone(), state.likelihood_opt.clone());
    let likelihood_loss = if config.likelihood_epochs > 0 {
        Some(train_likelihood(state, &embeddings)?)
    } else {
        None
    };
    let mut q = mean_q(&state.likelihood, &state.params, &embeddings, segs, config)?;
    let mut accepted_likelihood = true;
    if config.guard && q < q0 {
        (state.likelihood, state.likelihood_opt) = saved;
        q = q0;
        accepted_likelihood = false;
    }

    let mut ssl_loss = None;
    let mut accepted_ssl = false;
    if config.train_ssl && state.features.ssl().is_some() {
        let kept_videos: Vec<FrameSequence>;
        let kept_segs: Vec<Segmentation> = kept.iter().map(|&i| segs[i].clone().expect("kept")).collect();
        let videos: &[FrameSequence] = if kept.len() == dataset.len() {
            dataset
        } else {
            kept_videos = kept.iter().map(|&i| dataset[i].clone()).collect();
            &kept_videos
        };
        let FeatureMap::Action(model) = &mut state.features else {
            unreachable!("checked above")
        };
        let saved_ssl = (model.flat_params(), state.ssl_opt.clone());
        let saved_lik = (state.likelihood.clone(), state.likelihood_opt.clone());
        let schedule = SslEpoch {
            seed: config.seed,
            epoch: round,
            batch_videos: config.ssl_batch_videos,
        };
        match ssl_train_epoch(model, videos, &kept_segs, &mut state.ssl_opt, &schedule) {
            Ok(report) => {
                ssl_loss = Some(report.mean_loss);
                let moved = state.features.embed_all(dataset)?;
                let mut q_ssl = mean_q(&state.likelihood, &state.params, &moved, segs, config)?;
                if config.guard && q_ssl < q && config.likelihood_epochs > 0 {
                    // let the classifier follow the moved features before judging
                    train_likelihood(state, &moved)?;
                    q_ssl = mean_q(&state.likelihood, &state.params, &moved, segs, config)?;
                }
                if config.guard && q_ssl < q {
                    let FeatureMap::Action(model) = &mut state.features else {
                        unreachable!("checked above")
                    };
                    model.set_flat_params(&saved_ssl.0)?;
                    state.ssl_opt = saved_ssl.1;
                    (state.likelihood, state.likelihood_opt) = saved_lik;
                } else {
                    accepted_ssl = true;
                    q = q_ssl;
                    embeddings = moved;
                }
            }
            Err(Error::SslStarved) => log::warn!("epoch {}: no video is eligible for shuffle sampling", state.epoch),
            Err(e) => return Err(e),
        }
    }

    Ok(WeightUpdate {
        likelihood_loss,
        ssl_loss,
        accepted_likelihood,
        accepted_ssl,
        q,
        embeddings,
    })
}

/// Moves every `λ_c` by the mean over videos of `(mean length of c in the
/// video − λ_c)`, where videos without `c` add nothing but still count in
/// the divisor. Returns the new means and the actions seen in no video,
/// whose means are left as they were.
pub fn m_step_lengths(lambdas: &[f64], segmentations: &[Segmentation]) -> Result<(Vec<f64>, Vec<usize>)> {
    if segmentations.is_empty() {
        return Err(Error::InvalidArgument("no segmented video to estimate lengths from".into()));
    }
    let n = lambdas.len();
    let m = segmentations.len() as f64;
    let mut correction = vec![0.0; n];
    let mut seen = vec![false; n];
    for seg in segmentations {
        let mut sum = vec![0usize; n];
        let mut count = vec![0usize; n];
        for (a, _, l) in seg.segments() {
            if a >= n {
                return Err(Error::InvalidArgument(format!("action {a} outside 0..{n}")));
            }
            sum[a] += l;
            count[a] += 1;
        }
        for c in 0..n {
            if count[c] > 0 {
                seen[c] = true;
                correction[c] += sum[c] as f64 / count[c] as f64 - lambdas[c];
            }
        }
    }
    let absent: Vec<usize> = (0..n).filter(|&c| !seen[c]).collect();
    if !absent.is_empty() {
        log::warn!("actions {absent:?} appear in no segmentation; their mean lengths are kept");
    }
    let updated = lambdas.iter().zip(&correction).map(|(l, d)| l + d / m).collect();
    Ok((updated, absent))
}

/// Runs the loop from an initialised state until `|ΔQ| < ε` or the epoch
/// budget is spent.
pub fn run_em(state: &mut TrainState, dataset: &[FrameSequence], config: &EmConfig) -> Result<()> {
    config.validate()?;
    for _ in 0..config.max_epochs {
        let estep = e_step(state, dataset, config)?;
        state.epoch += 1;
        state.q_history.push(estep.mean_q);
        if !estep.mean_q.is_finite() {
            return Err(Error::Diverged {
                epoch: state.epoch,
                q_history: state.q_history.clone(),
            });
        }
        state.segmentations = estep.segmentations.clone();
        state.skip_reasons = estep.skip_reasons.clone();
        let skipped = state.skip_reasons.iter().filter(|r| r.is_some()).count();
        let n = state.q_history.len();
        if n >= 2 && (state.q_history[n - 1] - state.q_history[n - 2]).abs() < config.epsilon {
            state.converged = true;
            state.records.push(EpochRecord {
                epoch: state.epoch,
                mean_q: estep.mean_q,
                lambdas: state.params.lambdas().to_vec(),
                likelihood_loss: None,
                ssl_loss: None,
                accepted_likelihood: false,
                accepted_ssl: false,
                accepted_lengths: false,
                skipped_videos: skipped,
            });
            log::info!("converged after {} epochs, Q = {:.6}", state.epoch, estep.mean_q);
            break;
        }

        let weights = m_step_weights(state, dataset, &estep, config)?;
        let mut accepted_lengths = false;
        if config.update_lengths {
            let segs: Vec<Segmentation> = estep.segmentations.iter().flatten().cloned().collect();
            let (lambdas, _) = m_step_lengths(state.params.lambdas(), &segs)?;
            let previous = state.params.clone();
            state.params.set_lambdas(lambdas)?;
            let q = mean_q(&state.likelihood, &state.params, &weights.embeddings, &estep.segmentations, config)?;
            if config.guard && q < weights.q {
                state.params = previous;
            } else {
                accepted_lengths = true;
            }
        }
        let record = EpochRecord {
            epoch: state.epoch,
            mean_q: estep.mean_q,
            lambdas: state.params.lambdas().to_vec(),
            likelihood_loss: weights.likelihood_loss,
            ssl_loss: weights.ssl_loss,
            accepted_likelihood: weights.accepted_likelihood,
            accepted_ssl: weights.accepted_ssl,
            accepted_lengths,
            skipped_videos: skipped,
        };
        log::info!(
            "epoch {} Q = {:.6} λ = {:?}",
            record.epoch,
            record.mean_q,
            record.lambdas
        );
        state.records.push(record);
    }
    Ok(())
}

/// Initialises from stage-one outputs and runs the loop.
pub fn fit(dataset: &[FrameSequence], features: FeatureMap, init: &EmInit, config: &EmConfig) -> Result<TrainState> {
    let mut state = TrainState::initialize(dataset, features, init, config)?;
    run_em(&mut state, dataset, config)?;
    Ok(state)
}
