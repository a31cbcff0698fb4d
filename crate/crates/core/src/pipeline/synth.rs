use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_videos: usize,
    /// Actions per activity.
    pub n_actions: usize,
    pub dim: usize,
    /// Mean segment length of each action.
    pub lambdas: Vec<f64>,
    /// Segment lengths are clamped into this range.
    pub min_len: usize,
    pub max_len: usize,
    /// Distance between any two action centers, in units of the per-
    /// dimension noise deviation.
    pub separation: f64,
    /// Probability that an action is left out of a video.
    pub skip_prob: f64,
    /// Activities with disjoint action centers; videos are spread over them
    /// round robin.
    pub activities: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 20,
            n_actions: 5,
            dim: 10,
            lambdas: vec![20.0, 30.0, 25.0, 20.0, 30.0],
            min_len: 5,
            max_len: usize::MAX,
            separation: 4.0,
            skip_prob: 0.1,
            activities: 1,
            seed: 7,
        }
    }
}

/// Videos plus everything the generator knows about them.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub videos: Vec<FrameSequence>,
    /// Per video, one label per frame; activity `a`'s action `c` has label
    /// `a · n_actions + c`.
    pub labels: Vec<Vec<usize>>,
    pub activities: Vec<usize>,
    /// Action centers, one row per global label.
    pub centers: Matrix,
}

/// Monotone transcripts with Poisson lengths and Gaussian frames around
/// per-action centers. Features are rounded to `f32` so text and binary
/// storage hold identical values.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthDataset> {
    let n = config.n_actions;
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 actions per activity".into()));
    }
    if config.lambdas.len() != n {
        return Err(Error::dim("synthetic mean lengths", n, config.lambdas.len()));
    }
    if config.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument("mean lengths must be positive".into()));
    }
    if config.min_len == 0 || config.min_len > config.max_len {
        return Err(Error::InvalidArgument(format!(
            "segment length range {}..={} is empty",
            config.min_len, config.max_len
        )));
    }
    if !(0.0..1.0).contains(&config.skip_prob) {
        return Err(Error::InvalidArgument("skip probability must lie in [0, 1)".into()));
    }
    if config.n_videos == 0 || config.dim == 0 || config.activities == 0 {
        return Err(Error::InvalidArgument("videos, dimension and activities must be positive".into()));
    }
    if !(config.separation > 0.0) {
        return Err(Error::InvalidArgument("separation must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total_labels = n * config.activities;
    let centers = spread_centers(total_labels, config.dim, config.separation, &mut rng);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let durations: Vec<Poisson<f64>> = config
        .lambdas
        .iter()
        .map(|&l| Poisson::new(l).map_err(|e| Error::InvalidArgument(e.to_string())))
        .collect::<Result<_>>()?;

    let mut videos = Vec::with_capacity(config.n_videos);
    let mut labels = Vec::with_capacity(config.n_videos);
    let mut activities = Vec::with_capacity(config.n_videos);
    for v in 0..config.n_videos {
        let activity = v % config.activities;
        let transcript = loop {
            let kept: Vec<usize> = (0..n).filter(|_| !rng.gen_bool(config.skip_prob)).collect();
            if kept.len() >= 2 {
                break kept;
            }
        };
        let mut frame_labels = Vec::new();
        for &c in &transcript {
            let len = (durations[c].sample(&mut rng) as usize).clamp(config.min_len, config.max_len);
            frame_labels.extend(std::iter::repeat(activity * n + c).take(len));
        }
        let mut features = Vec::with_capacity(frame_labels.len() * config.dim);
        for &g in &frame_labels {
            for &mu in centers.row(g) {
                features.push((mu + noise.sample(&mut rng)) as f32 as f64);
            }
        }
        let t = frame_labels.len();
        videos.push(FrameSequence::new(format!("video_{v:03}"), Matrix::from_vec(t, config.dim, features)?)?);
        labels.push(frame_labels);
        activities.push(activity);
    }
    Ok(SynthDataset {
        videos,
        labels,
        activities,
        centers,
    })
}

/// `k` centers with pairwise distance exactly `separation` when `k ≤ dim`
/// (a randomly rotated scaled simplex of orthonormal directions), otherwise
/// random points on a sphere of the same radius.
fn spread_centers(k: usize, dim: usize, separation: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let radius = separation / std::f64::consts::SQRT_2;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        if i < dim {
            for r in &rows {
                let proj = dot(&v, r) / (radius * radius);
                v.iter_mut().zip(r).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        rows.push(v.into_iter().map(|x| x / norm * radius).collect());
    }
    Matrix::from_rows(&rows).expect("rectangular")
}
