use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::hmm::Segmentation;

pub const SEGMENTS_PER_SAMPLE: usize = 3;
pub const FRAMES_PER_SEGMENT: usize = 5;
pub const SAMPLE_LEN: usize = SEGMENTS_PER_SAMPLE * FRAMES_PER_SEGMENT;

/// The five orderings of three blocks other than the identity.
const SHUFFLES: [[usize; 3]; 5] = [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Three 5-frame windows taken from three different segments of one video,
/// either in video order (positive) or shuffled (negative).
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffleSample {
    /// 15 feature vectors, block by block.
    pub frames: Vec<Vec<f64>>,
    pub positive: bool,
    pub source_video: String,
    /// Segment label of each block, in block order.
    pub segment_action_labels: [usize; 3],
    /// First video frame of each block, in block order.
    pub window_starts: [usize; 3],
}

impl ShuffleSample {
    pub fn label(&self) -> f64 {
        if self.positive {
            1.0
        } else {
            0.0
        }
    }

    /// Checks shape and ordering: a positive sample has its blocks in
    /// increasing video position, a negative one does not.
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != SAMPLE_LEN {
            return Err(Error::dim("shuffle sample frames", SAMPLE_LEN, self.frames.len()));
        }
        let s = self.window_starts;
        let in_order = s[0] < s[1] && s[1] < s[2];
        if in_order != self.positive {
            return Err(Error::InvalidArgument(format!(
                "sample from {} labelled {} has block starts {s:?}",
                self.source_video, self.positive
            )));
        }
        let mut sorted = s;
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[1] < w[0] + FRAMES_PER_SEGMENT) {
            return Err(Error::InvalidArgument(format!("overlapping windows {s:?}")));
        }
        Ok(())
    }
}

/// Segments long enough to hold a window, as `(action, start, len)`.
pub fn eligible_segments(segmentation: &Segmentation) -> Vec<(usize, usize, usize)> {
    segmentation
        .segments()
        .filter(|&(_, _, l)| l >= FRAMES_PER_SEGMENT)
        .collect()
}

/// Draws one positive and one negative sample from the same three windows.
///
/// Returns `Ok(None)` when fewer than three segments have at least five
/// frames; the caller skips the video.
pub fn sample_pair<R: Rng + ?Sized>(
    video: &FrameSequence,
    segmentation: &Segmentation,
    rng: &mut R,
) -> Result<Option<(ShuffleSample, ShuffleSample)>> {
    if segmentation.total_len() != video.len() {
        return Err(Error::dim(
            format!("segmentation of {}", video.video_id()),
            video.len(),
            segmentation.total_len(),
        ));
    }
    let eligible = eligible_segments(segmentation);
    if eligible.len() < SEGMENTS_PER_SAMPLE {
        return Ok(None);
    }
    let mut picked = index::sample(rng, eligible.len(), SEGMENTS_PER_SAMPLE).into_vec();
    picked.sort_unstable();
    let blocks: Vec<(usize, usize)> = picked
        .iter()
        .map(|&i| {
            let (action, start, len) = eligible[i];
            (action, rng.gen_range(start..=start + len - FRAMES_PER_SEGMENT))
        })
        .collect();
    let order = *SHUFFLES.choose(rng).expect("non-empty");

    let build = |order: [usize; 3], positive: bool| {
        let mut frames = Vec::with_capacity(SAMPLE_LEN);
        let mut labels = [0; 3];
        let mut starts = [0; 3];
        for (slot, &b) in order.iter().enumerate() {
            let (action, start) = blocks[b];
            labels[slot] = action;
            starts[slot] = start;
            frames.extend((start..start + FRAMES_PER_SEGMENT).map(|t| video.frame(t).to_vec()));
        }
        ShuffleSample {
            frames,
            positive,
            source_video: video.video_id().to_string(),
            segment_action_labels: labels,
            window_starts: starts,
        }
    };
    let positive = build([0, 1, 2], true);
    let negative = build(order, false);
    debug_assert!(positive.validate().is_ok() && negative.validate().is_ok());
    Ok(Some((positive, negative)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Feature of frame `t` is just `t`, so windows can be read back.
    fn indexed_video(frames: usize) -> FrameSequence {
        FrameSequence::new("v", Matrix::from_vec(frames, 1, (0..frames).map(|t| t as f64).collect()).unwrap()).unwrap()
    }

    #[test]
    fn positive_keeps_video_order() {
        let video = indexed_video(15);
        let seg = Segmentation::new(vec![0, 1, 2], vec![5, 5, 5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (pos, neg) = sample_pair(&video, &seg, &mut rng).unwrap().unwrap();
        let flat: Vec<f64> = pos.frames.iter().map(|f| f[0]).collect();
        assert_eq!(flat, (0..15).map(|t| t as f64).collect::<Vec<_>>());
        assert_eq!(pos.segment_action_labels, [0, 1, 2]);
        assert!(!neg.positive);
        assert_ne!(neg.segment_action_labels, [0, 1, 2]);
    }

    #[test]
    fn negatives_are_never_the_identity() {
        let video = indexed_video(40);
        let seg = Segmentation::new(vec![0, 1, 2, 3], vec![10, 10, 10, 10]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..10_000 {
            let (pos, neg) = sample_pair(&video, &seg, &mut rng).unwrap().unwrap();
            pos.validate().unwrap();
            neg.validate().unwrap();
            let s = neg.window_starts;
            assert!(!(s[0] < s[1] && s[1] < s[2]));
            let mut rank = [0usize; 3];
            for i in 0..3 {
                rank[i] = s.iter().filter(|&&x| x < s[i]).count();
            }
            *counts.entry(rank).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 5);
        assert!(counts.values().all(|&c| (1700..2300).contains(&c)), "{counts:?}");
    }

    #[test]
    fn short_segments_are_ineligible() {
        let video = indexed_video(14);
        let seg = Segmentation::new(vec![0, 1, 2], vec![5, 5, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(sample_pair(&video, &seg, &mut rng).unwrap().is_none());
        let wrong = Segmentation::new(vec![0], vec![3]).unwrap();
        assert!(sample_pair(&video, &wrong, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn every_sample_is_well_formed(
            lengths in prop::collection::vec(1usize..15, 3..8),
            seed in any::<u64>(),
        ) {
            let frames: usize = lengths.iter().sum();
            let video = indexed_video(frames);
            let seg = Segmentation::new((0..lengths.len()).collect(), lengths.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match sample_pair(&video, &seg, &mut rng).unwrap() {
                None => prop_assert!(lengths.iter().filter(|&&l| l >= 5).count() < 3),
                Some((pos, neg)) => {
                    for s in [&pos, &neg] {
                        prop_assert!(s.validate().is_ok());
                        for (b, &start) in s.window_starts.iter().enumerate() {
                            let action = s.segment_action_labels[b];
                            let seg_start: usize = lengths[..action].iter().sum();
                            prop_assert!(start >= seg_start);
                            prop_assert!(start + 5 <= seg_start + lengths[action]);
                            for k in 0..5 {
                                prop_assert_eq!(s.frames[b * 5 + k][0], (start + k) as f64);
                            }
                        }
                    }
                    let mut a = pos.window_starts;
                    let mut b = neg.window_starts;
                    a.sort_unstable();
                    b.sort_unstable();
                    prop_assert_eq!(a, b);
                }
            }
        }
    }
}
