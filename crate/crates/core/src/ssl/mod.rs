//! Action Shuffle self-supervision.
//!
//! Three segments of a video's current segmentation contribute one 5-frame
//! window each. Kept in video order the 15 frames are a positive sample;
//! permuted they are a negative one. An RNN reading the shared trunk's
//! outputs learns to tell the two apart, and its single-step hidden response
//! to a frame becomes that frame's action-level embedding.

mod model;
mod sample;

pub use model::{action_embed_frames, SslGrad, SslModel};
pub use sample::{
    eligible_segments, sample_pair, ShuffleSample, FRAMES_PER_SEGMENT, SAMPLE_LEN,
    SEGMENTS_PER_SAMPLE,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{stream_seed, FrameSequence};
use crate::error::{Error, Result};
use crate::hmm::Segmentation;
use crate::nn::SgdMomentum;

/// Randomness and batching for one pass over the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SslEpoch {
    pub seed: u64,
    /// Mixed into every per-video stream so each epoch draws new windows.
    pub epoch: u64,
    /// Videos whose sample pairs share one optimizer step.
    pub batch_videos: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SslEpochReport {
    pub mean_loss: f64,
    pub samples: usize,
    /// Videos with fewer than three segments of five or more frames.
    pub skipped_videos: usize,
}

/// One positive/negative pair per eligible video, in dataset order, plus
/// the number of skipped videos.
///
/// Each video draws from its own stream keyed by `(seed, round, video_id)`,
/// so the result does not depend on scheduling.
pub fn draw_pairs(
    dataset: &[FrameSequence],
    segmentations: &[Segmentation],
    seed: u64,
    round: u64,
) -> Result<(Vec<(ShuffleSample, ShuffleSample)>, usize)> {
    if dataset.len() != segmentations.len() {
        return Err(Error::dim("segmentations", dataset.len(), segmentations.len()));
    }
    let drawn = dataset
        .par_iter()
        .zip(segmentations)
        .map(|(video, seg)| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, round, video.video_id()));
            sample_pair(video, seg, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = drawn.iter().filter(|d| d.is_none()).count();
    Ok((drawn.into_iter().flatten().collect(), skipped))
}

/// One epoch of shuffle classification: two samples per eligible video,
/// SGD with momentum on trunk, RNN and head.
///
/// Returns the mean BCE over all samples, each measured just before the
/// step that used it.
pub fn ssl_train_epoch(
    model: &mut SslModel,
    dataset: &[FrameSequence],
    segmentations: &[Segmentation],
    optimizer: &mut SgdMomentum,
    schedule: &SslEpoch,
) -> Result<SslEpochReport> {
    let (mut pairs, skipped) = draw_pairs(dataset, segmentations, schedule.seed, schedule.epoch)?;
    if pairs.is_empty() {
        return Err(Error::SslStarved);
    }
    if skipped > 0 {
        log::debug!("shuffle epoch {}: skipped {skipped} videos", schedule.epoch);
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(stream_seed(schedule.seed, schedule.epoch, ""));
    pairs.shuffle(&mut order_rng);

    let mut total = 0.0;
    let mut count = 0;
    for chunk in pairs.chunks(schedule.batch_videos.max(1)) {
        let batch: Vec<ShuffleSample> = chunk
            .iter()
            .flat_map(|(p, n)| [p.clone(), n.clone()])
            .collect();
        let (loss, grad) = model.batch_loss_and_grad(&batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("shuffle classification loss".into()));
        }
        model.apply_gradient(optimizer, &grad)?;
        total += loss * batch.len() as f64;
        count += batch.len();
    }
    Ok(SslEpochReport {
        mean_loss: total / count as f64,
        samples: count,
        skipped_videos: skipped,
    })
}

/// Fraction of samples classified correctly at threshold 0.5.
pub fn shuffle_accuracy(model: &SslModel, samples: &[ShuffleSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to score".into()));
    }
    let correct = samples
        .par_iter()
        .map(|s| model.predict(&s.frames).map(|p| (p > 0.5) == s.positive))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|&c| c)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Mean BCE without updating anything.
pub fn shuffle_loss(model: &SslModel, samples: &[ShuffleSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to score".into()));
    }
    let losses = samples
        .par_iter()
        .map(|s| model.loss_and_grad(s).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingModel;
    use crate::linalg::Matrix;
    use rand::Rng;

    /// Videos whose frames carry a one-hot code of their action plus noise.
    fn coded_dataset(videos: usize, n_actions: usize, seed: u64) -> (Vec<FrameSequence>, Vec<Segmentation>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut segs = Vec::new();
        for v in 0..videos {
            let lengths: Vec<usize> = (0..n_actions).map(|_| rng.gen_range(6..14)).collect();
            let frames: usize = lengths.iter().sum();
            let mut feats = Vec::with_capacity(frames * n_actions);
            for (a, &l) in lengths.iter().enumerate() {
                for _ in 0..l {
                    for j in 0..n_actions {
                        let code = if j == a { 1.0 } else { 0.0 };
                        feats.push(code + rng.gen_range(-0.1..0.1));
                    }
                }
            }
            data.push(FrameSequence::new(format!("v{v}"), Matrix::from_vec(frames, n_actions, feats).unwrap()).unwrap());
            segs.push(Segmentation::new((0..n_actions).collect(), lengths).unwrap());
        }
        (data, segs)
    }

    fn fresh_model(dim: usize, seed: u64) -> SslModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = EmbeddingModel::glorot(dim, &mut rng).unwrap();
        SslModel::new(emb.trunk().clone(), &mut rng)
    }

    fn flatten_pairs(pairs: Vec<(ShuffleSample, ShuffleSample)>) -> Vec<ShuffleSample> {
        pairs.into_iter().flat_map(|(p, n)| [p, n]).collect()
    }

    #[test]
    fn untrained_model_is_near_chance() {
        let (data, segs) = coded_dataset(60, 5, 0);
        let (pairs, _) = draw_pairs(&data, &segs, 1, 0).unwrap();
        let samples = flatten_pairs(pairs);
        let m = fresh_model(5, 2);
        let loss = shuffle_loss(&m, &samples).unwrap();
        assert!((loss - 2f64.ln()).abs() < 0.15 * 2f64.ln(), "{loss}");
    }

    #[test]
    fn learns_to_detect_shuffles() {
        let (train, train_segs) = coded_dataset(120, 5, 10);
        let (test, test_segs) = coded_dataset(60, 5, 11);
        let (pairs, _) = draw_pairs(&test, &test_segs, 99, 0).unwrap();
        let held_out = flatten_pairs(pairs);
        let mut m = fresh_model(5, 3);
        let mut opt = SgdMomentum::new(0.05, 0.9).unwrap();
        let mut acc = 0.0;
        for epoch in 0..30 {
            let schedule = SslEpoch { seed: 7, epoch, batch_videos: 4 };
            ssl_train_epoch(&mut m, &train, &train_segs, &mut opt, &schedule).unwrap();
            acc = shuffle_accuracy(&m, &held_out).unwrap();
            if acc >= 0.9 {
                break;
            }
        }
        assert!(acc >= 0.9, "{acc}");
    }

    #[test]
    fn epochs_are_reproducible_and_balanced() {
        let (data, segs) = coded_dataset(20, 4, 5);
        let run = || {
            let mut m = fresh_model(4, 1);
            let mut opt = SgdMomentum::new(0.01, 0.9).unwrap();
            let r = ssl_train_epoch(&mut m, &data, &segs, &mut opt, &SslEpoch { seed: 3, epoch: 0, batch_videos: 2 }).unwrap();
            (r, m.flat_params())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a.samples, 40);
        let (pairs, _) = draw_pairs(&data, &segs, 3, 0).unwrap();
        assert!(pairs.iter().all(|(p, n)| p.positive && !n.positive));
    }

    #[test]
    fn starved_when_nothing_is_eligible() {
        let (data, _) = coded_dataset(3, 4, 6);
        let segs: Vec<Segmentation> = data
            .iter()
            .map(|v| Segmentation::new(vec![0], vec![v.len()]).unwrap())
            .collect();
        let mut m = fresh_model(4, 0);
        let mut opt = SgdMomentum::default();
        let err = ssl_train_epoch(&mut m, &data, &segs, &mut opt, &SslEpoch { seed: 0, epoch: 0, batch_videos: 1 });
        assert!(matches!(err, Err(Error::SslStarved)));
    }
}
