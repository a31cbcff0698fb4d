use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Variant};
use crate::clustering::{bag_of_words, cluster_videos, fit_cluster_model, initial_pseudo_labels, kmeans, ClusterModel, PseudoLabels};
use crate::data::{common_dim, stream_seed, FrameSequence};
use crate::em::{e_step, fit, EmConfig, EmInit, EpochRecord, FeatureMap, MaxLenPolicy, TrainState};
use crate::embedding::{embed_with, train_frame_embedding, EmbeddingModel, SharedMlp};
use crate::error::{Error, Result};
use crate::eval::{evaluate, GroundTruth, Metrics};
use crate::hmm::{
    frame_log_likelihoods, viterbi_decode_with, DecodeOptions, DurationModel, HmmParams, LikelihoodModel,
    Segmentation, TranscriptMode,
};
use crate::linalg::{squared_distance, Matrix};
use crate::nn::{Mlp, SgdMomentum};
use crate::ssl::{ssl_train_epoch, SslEpoch, SslModel};

/// Stage one on one set of videos: frame embedding, clustering, temporal
/// ordering, pseudo-labels and initial mean lengths.
#[derive(Debug, Clone)]
pub struct StageOne {
    pub embeddings: Vec<Matrix>,
    pub clusters: ClusterModel,
    pub pseudo_labels: Vec<Vec<usize>>,
    pub lambdas: Vec<f64>,
}

/// Initial mean length of each action: the mean length of its runs in the
/// pseudo-labels. Actions that never occur get `T̄ / N`.
pub fn initial_lambdas(pseudo: &PseudoLabels) -> Vec<f64> {
    let n = pseudo.mean_run_length.len();
    let frames: usize = pseudo.labels.iter().map(Vec::len).sum();
    let fallback = (frames as f64 / pseudo.labels.len().max(1) as f64 / n.max(1) as f64).max(1.0);
    pseudo.mean_run_length.iter().map(|m| m.unwrap_or(fallback)).collect()
}

pub fn stage_one(trunk: &SharedMlp, videos: &[FrameSequence], n_actions: usize, seed: u64, restarts: usize) -> Result<StageOne> {
    let mlp = trunk.read();
    let embeddings = videos.iter().map(|v| embed_with(&mlp, v)).collect::<Result<Vec<_>>>()?;
    drop(mlp);
    let clusters = fit_cluster_model(&embeddings, n_actions, seed, restarts)?;
    let pseudo = initial_pseudo_labels(&embeddings, &clusters);
    let lambdas = initial_lambdas(&pseudo);
    Ok(StageOne {
        embeddings,
        clusters,
        pseudo_labels: pseudo.labels,
        lambdas,
    })
}

/// What a trained activity model decodes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureArtifact {
    Frame { trunk: Mlp },
    Action { model: SslModel },
}

impl FeatureArtifact {
    fn from_map(map: &FeatureMap) -> Self {
        match map {
            FeatureMap::Frame(t) => FeatureArtifact::Frame { trunk: t.snapshot() },
            FeatureMap::Action(m) => FeatureArtifact::Action { model: m.clone() },
        }
    }

    pub fn to_map(&self) -> FeatureMap {
        match self {
            FeatureArtifact::Frame { trunk } => FeatureMap::Frame(SharedMlp::new(trunk.clone())),
            FeatureArtifact::Action { model } => FeatureMap::Action(model.clone()),
        }
    }
}

/// Everything needed to segment new videos of one activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityModel {
    pub activity: usize,
    pub features: FeatureArtifact,
    pub likelihood: LikelihoodModel,
    pub params: HmmParams,
    pub transcript: TranscriptMode,
    pub durations: DurationModel,
}

impl ActivityModel {
    /// MAP segmentation with activity-local labels.
    pub fn segment(&self, video: &FrameSequence) -> Result<Segmentation> {
        let emb = self.features.to_map().embed(video)?;
        let ll = frame_log_likelihoods(&self.likelihood, &emb)?;
        let options = DecodeOptions {
            max_len: Some(video.len()),
            transcript: self.transcript,
            durations: self.durations,
        };
        Ok(viterbi_decode_with(&ll, &self.params, &options)?.segmentation)
    }
}

/// Assigns a video to the nearest activity by its bag-of-words histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityRouter {
    pub trunk: Mlp,
    pub vocabulary: Matrix,
    pub temperature: f64,
    /// Mean histogram of each activity cluster.
    pub centers: Matrix,
}

impl ActivityRouter {
    pub fn route(&self, video: &FrameSequence) -> Result<usize> {
        let emb = embed_with(&self.trunk, video)?;
        let h = bag_of_words(&emb, &self.vocabulary, self.temperature);
        let mut best = (f64::INFINITY, 0);
        for (a, c) in self.centers.iter_rows().enumerate() {
            let d = squared_distance(&h, c);
            if d < best.0 {
                best = (d, a);
            }
        }
        Ok(best.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub n_actions: usize,
    pub variant: Variant,
    pub activities: Vec<ActivityModel>,
    pub router: Option<ActivityRouter>,
}

impl ModelBundle {
    /// Segments a video with global labels `activity · N + action`.
    pub fn segment(&self, video: &FrameSequence) -> Result<Segmentation> {
        let activity = match &self.router {
            Some(r) => r.route(video)?,
            None => 0,
        };
        let model = self
            .activities
            .iter()
            .find(|m| m.activity == activity)
            .ok_or_else(|| Error::InvalidArgument(format!("no model for activity {activity}")))?;
        let seg = model.segment(video)?;
        offset_labels(&seg, activity * self.n_actions)
    }

    pub fn n_labels(&self) -> usize {
        self.n_actions * self.router.as_ref().map_or(1, |r| r.centers.rows())
    }
}

fn offset_labels(seg: &Segmentation, offset: usize) -> Result<Segmentation> {
    Segmentation::new(seg.actions().iter().map(|a| a + offset).collect(), seg.lengths().to_vec())
}

/// Training trace of one activity.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityRun {
    pub activity: usize,
    /// Dataset indices of the activity's videos.
    pub videos: Vec<usize>,
    pub q_history: Vec<f64>,
    pub records: Vec<EpochRecord>,
    pub converged: bool,
    pub lambdas: Vec<f64>,
    pub used_shuffle_model: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Per video, global labels.
    pub segmentations: Vec<Segmentation>,
    pub video_activity: Vec<usize>,
    pub activities: Vec<ActivityRun>,
    pub bundle: ModelBundle,
    pub embedding_losses: Vec<f64>,
    pub metrics: Option<Metrics>,
}

impl RunOutput {
    pub fn frame_labels(&self) -> Vec<Vec<usize>> {
        self.segmentations.iter().map(Segmentation::frame_labels).collect()
    }
}

fn activity_em_config(config: &RunConfig, activity: usize) -> EmConfig {
    let mut em = config.em.clone();
    em.seed = stream_seed(config.seed, activity as u64, "activity");
    match config.variant {
        Variant::Asal => em.train_ssl = true,
        Variant::FteHmm => em.train_ssl = false,
        Variant::ActionShuffleInitHmm => {}
        Variant::ActionShuffleViterbi => {
            em.transcript = TranscriptMode::Fixed;
            em.durations = DurationModel::Uniform;
        }
    }
    em
}

/// Decodes the videos left without a segmentation using the whole video as
/// the length bound.
fn complete(state: &TrainState, videos: &[FrameSequence], em: &EmConfig) -> Result<Vec<Segmentation>> {
    if state.segmentations.iter().all(Option::is_some) && state.segmentations.len() == videos.len() {
        return Ok(state.segmentations.iter().flatten().cloned().collect());
    }
    let relaxed = EmConfig {
        max_len: MaxLenPolicy::Full,
        ..em.clone()
    };
    let e = e_step(state, videos, &relaxed)?;
    e.segmentations
        .into_iter()
        .zip(videos)
        .map(|(s, v)| s.ok_or(Error::NoAdmissibleSegmentation { frames: v.len() }))
        .collect()
}

/// Stage two for one activity's videos, starting from a private copy of the
/// frame trunk.
fn run_activity(
    config: &RunConfig,
    videos: &[FrameSequence],
    trunk: SharedMlp,
    activity: usize,
) -> Result<(ActivityModel, ActivityRun, Vec<Segmentation>)> {
    let n = config.n_actions;
    if videos.is_empty() {
        return Err(Error::InvalidArgument(format!("activity {activity} has no videos")));
    }
    let em = activity_em_config(config, activity);
    let s1 = stage_one(&trunk, videos, n, em.seed, config.kmeans_restarts)?;
    let init = EmInit {
        pseudo_labels: s1.pseudo_labels,
        lambdas: s1.lambdas,
    };
    let features = match config.variant {
        Variant::FteHmm => FeatureMap::Frame(trunk),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(em.seed, 0, "shuffle-init"));
            FeatureMap::Action(SslModel::new(trunk, &mut rng))
        }
    };

    let state = match config.variant {
        Variant::Asal | Variant::FteHmm => fit(videos, features, &init, &em)?,
        Variant::ActionShuffleInitHmm | Variant::ActionShuffleViterbi => {
            let mut state = TrainState::initialize(videos, features, &init, &em)?;
            let first = e_step(&state, videos, &em)?;
            state.q_history.push(first.mean_q);
            state.epoch = 1;
            let kept: Vec<usize> = (0..videos.len()).filter(|&i| first.segmentations[i].is_some()).collect();
            let kept_videos: Vec<FrameSequence> = kept.iter().map(|&i| videos[i].clone()).collect();
            let kept_segs: Vec<Segmentation> = kept.iter().map(|&i| first.segmentations[i].clone().expect("kept")).collect();
            let mut opt = SgdMomentum::new(em.ssl_learning_rate, em.momentum)?;
            if let FeatureMap::Action(model) = &mut state.features {
                for epoch in 0..config.ssl_init_epochs {
                    let schedule = SslEpoch {
                        seed: em.seed,
                        epoch: epoch as u64,
                        batch_videos: em.ssl_batch_videos,
                    };
                    match ssl_train_epoch(model, &kept_videos, &kept_segs, &mut opt, &schedule) {
                        Ok(_) => {}
                        Err(Error::SslStarved) => {
                            log::warn!("activity {activity}: initial decoding leaves nothing to shuffle");
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            state.refit_likelihood(videos, &init.pseudo_labels, &em, 1)?;
            let last = e_step(&state, videos, &em)?;
            state.q_history.push(last.mean_q);
            state.epoch = 2;
            state.segmentations = last.segmentations;
            state.skip_reasons = last.skip_reasons;
            state
        }
    };

    let segs = complete(&state, videos, &em)?;
    let model = ActivityModel {
        activity,
        features: FeatureArtifact::from_map(&state.features),
        likelihood: state.likelihood.clone(),
        params: state.params.clone(),
        transcript: em.transcript,
        durations: em.durations,
    };
    let run = ActivityRun {
        activity,
        videos: Vec::new(),
        q_history: state.q_history.clone(),
        records: state.records.clone(),
        converged: state.converged,
        lambdas: state.params.lambdas().to_vec(),
        used_shuffle_model: state.features.ssl().is_some(),
    };
    Ok((model, run, segs))
}

/// The full method: stage one, optional activity grouping, stage two per
/// group, and evaluation when ground truth is given.
pub fn run_pipeline(config: &RunConfig, videos: &[FrameSequence], truth: Option<&[Vec<usize>]>) -> Result<RunOutput> {
    config.validate()?;
    common_dim(videos)?;
    let mut emb_cfg = config.embedding.clone();
    emb_cfg.seed = config.seed;
    let trained = train_frame_embedding(videos, &emb_cfg)?;
    log::info!(
        "frame embedding trained, final loss {:.6}",
        trained.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    let n = config.n_actions;

    let (video_activity, router) = if config.multi_activity {
        let (assignments, router) = group_videos(config, &trained.model, videos)?;
        (assignments, Some(router))
    } else {
        (vec![0; videos.len()], None)
    };
    let n_groups = if config.multi_activity { config.n_activities } else { 1 };

    let mut segmentations: Vec<Option<Segmentation>> = vec![None; videos.len()];
    let mut models = Vec::new();
    let mut runs = Vec::new();
    for a in 0..n_groups {
        let members: Vec<usize> = (0..videos.len()).filter(|&i| video_activity[i] == a).collect();
        if members.is_empty() {
            log::warn!("activity cluster {a} is empty");
            continue;
        }
        let group: Vec<FrameSequence> = members.iter().map(|&i| videos[i].clone()).collect();
        let trunk = if config.multi_activity {
            trained.model.trunk().deep_clone()
        } else {
            trained.model.trunk().clone()
        };
        let (model, mut run, segs) = run_activity(config, &group, trunk, a)?;
        for (&i, s) in members.iter().zip(&segs) {
            segmentations[i] = Some(offset_labels(s, a * n)?);
        }
        run.videos = members;
        models.push(model);
        runs.push(run);
    }
    let segmentations: Vec<Segmentation> = segmentations.into_iter().map(|s| s.expect("every video belongs to a group")).collect();
    let bundle = ModelBundle {
        n_actions: n,
        variant: config.variant,
        activities: models,
        router,
    };
    let metrics = match truth {
        Some(labels) => {
            let predictions: Vec<Vec<usize>> = segmentations.iter().map(Segmentation::frame_labels).collect();
            Some(evaluate(&predictions, &GroundTruth::new(labels.to_vec()), n * n_groups)?)
        }
        None => None,
    };
    Ok(RunOutput {
        segmentations,
        video_activity,
        activities: runs,
        bundle,
        embedding_losses: trained.epoch_losses,
        metrics,
    })
}

/// Video clustering over soft bag-of-words histograms against an
/// `N · A`-word vocabulary of frame embeddings.
fn group_videos(config: &RunConfig, model: &EmbeddingModel, videos: &[FrameSequence]) -> Result<(Vec<usize>, ActivityRouter)> {
    let trunk = model.trunk().snapshot();
    let embeddings = videos.iter().map(|v| embed_with(&trunk, v)).collect::<Result<Vec<_>>>()?;
    let rows: Vec<&[f64]> = embeddings.iter().flat_map(|m| m.iter_rows()).collect();
    let words = config.n_actions * config.n_activities;
    let vocabulary = kmeans(&Matrix::from_rows(&rows)?, words, config.seed, config.kmeans_restarts)?.centers;
    let grouping = cluster_videos(&embeddings, &vocabulary, config.n_activities, None, config.seed)?;
    let dim = vocabulary.rows();
    let mut centers = Matrix::zeros(config.n_activities, dim);
    let mut counts = vec![0usize; config.n_activities];
    for (h, &a) in grouping.histograms.iter().zip(&grouping.assignments) {
        counts[a] += 1;
        for (j, v) in h.iter().enumerate() {
            centers.set(a, j, centers.get(a, j) + v);
        }
    }
    for a in 0..config.n_activities {
        for j in 0..dim {
            centers.set(a, j, centers.get(a, j) / counts[a].max(1) as f64);
        }
    }
    Ok((
        grouping.assignments,
        ActivityRouter {
            trunk,
            vocabulary,
            temperature: grouping.temperature,
            centers,
        },
    ))
}
