//! Videos as frame-feature matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// One video: `T × D` frame features plus its identifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence {
    video_id: String,
    features: Matrix,
}

impl FrameSequence {
    pub fn new(video_id: impl Into<String>, features: Matrix) -> Result<Self> {
        let video_id = video_id.into();
        if features.rows() == 0 {
            return Err(Error::InvalidArgument(format!("video {video_id} has no frames")));
        }
        if features.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features of video {video_id}")));
        }
        Ok(FrameSequence { video_id, features })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Frame count `T`.
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    /// Feature dimension `D`.
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.features.row(t)
    }
}

/// Normalised time position of 0-based frame `t` in a video of `len` frames:
/// `(t + 1) / len`, so the last frame maps to exactly 1.
pub fn normalized_position(t: usize, len: usize) -> f64 {
    (t + 1) as f64 / len as f64
}

/// Seed for an independent random stream keyed by `(seed, round, key)`.
///
/// FNV-1a over the three parts, so the stream a video gets does not depend on
/// the order videos are processed in.
pub fn stream_seed(seed: u64, round: u64, key: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed
        .to_le_bytes()
        .into_iter()
        .chain(round.to_le_bytes())
        .chain(key.bytes())
    {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Checks that all videos share one feature dimension and returns it.
pub fn common_dim(videos: &[FrameSequence]) -> Result<usize> {
    let first = videos
        .first()
        .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?;
    for v in videos {
        if v.dim() != first.dim() {
            return Err(Error::dim(
                format!("feature dimension of video {}", v.video_id()),
                first.dim(),
                v.dim(),
            ));
        }
    }
    Ok(first.dim())
}
