use serde::{Deserialize, Serialize};

use super::{poisson_log_pmf, start_log_prob, HmmParams, Segmentation, TransitionTable};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Scores closer than this are treated as ties.
const TIE_EPS: f64 = 1e-10;

/// Which transcripts the decoder may return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptMode {
    /// Any strictly increasing subsequence of `0..N`, scored by the skip
    /// penalising transition model.
    Monotone,
    /// Exactly `[0, 1, …, N-1]`.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationModel {
    Poisson,
    /// No length term at all.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Longest admissible segment; `None` picks [`default_max_len`].
    pub max_len: Option<usize>,
    pub transcript: TranscriptMode,
    pub durations: DurationModel,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            max_len: None,
            transcript: TranscriptMode::Monotone,
            durations: DurationModel::Poisson,
        }
    }
}

impl DecodeOptions {
    pub fn exact() -> Self {
        DecodeOptions {
            max_len: Some(usize::MAX),
            ..Default::default()
        }
    }

    fn resolve_max_len(&self, frames: usize, params: &HmmParams) -> usize {
        match (self.max_len, self.durations) {
            (Some(l), _) => l.min(frames),
            (None, DurationModel::Uniform) => frames,
            (None, DurationModel::Poisson) => default_max_len(frames, params.lambdas()),
        }
    }

    fn transitions(&self, params: &HmmParams) -> TransitionTable {
        match self.transcript {
            TranscriptMode::Monotone => TransitionTable::new(params.lambdas()),
            TranscriptMode::Fixed => TransitionTable::fixed_transcript(params.n_actions()),
        }
    }
}

/// `min(T, ⌈6·max λ⌉)`: Poisson mass beyond six means is negligible.
pub fn default_max_len(frames: usize, lambdas: &[f64]) -> usize {
    let max_lambda = lambdas.iter().copied().fold(0.0, f64::max);
    ((6.0 * max_lambda).ceil() as usize).clamp(1, frames.max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub segmentation: Segmentation,
    /// Unnormalised log posterior of `segmentation`, start term `ln κ`
    /// included.
    pub log_posterior: f64,
}

/// Exact MAP segmentation over monotone transcripts with Poisson durations
/// and segments of at most `max_len` frames.
pub fn viterbi_decode(log_likelihoods: &Matrix, params: &HmmParams, max_len: usize) -> Result<Decoded> {
    viterbi_decode_with(
        log_likelihoods,
        params,
        &DecodeOptions {
            max_len: Some(max_len),
            ..Default::default()
        },
    )
}

/// Segment-level dynamic program.
///
/// `score[t][c]` is the best log score of frames `0..t` whose last segment
/// has action `c` and ends at `t`. Ties prefer the smaller label, then the
/// shorter segment, applied from the last segment backwards.
pub fn viterbi_decode_with(
    log_likelihoods: &Matrix,
    params: &HmmParams,
    options: &DecodeOptions,
) -> Result<Decoded> {
    let frames = log_likelihoods.rows();
    let n = params.n_actions();
    if frames == 0 {
        return Err(Error::InvalidArgument("cannot decode an empty sequence".into()));
    }
    if log_likelihoods.cols() != n {
        return Err(Error::dim("log-likelihood columns", n, log_likelihoods.cols()));
    }
    if log_likelihoods.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("log-likelihoods contain NaN".into()));
    }
    let max_len = options.resolve_max_len(frames, params);
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }

    // prefix sums per action: cum[c * (T+1) + t] = Σ_{s<t} ll[s][c]
    let stride = frames + 1;
    let mut cum = vec![0.0; n * stride];
    for c in 0..n {
        for t in 0..frames {
            cum[c * stride + t + 1] = cum[c * stride + t] + log_likelihoods.get(t, c);
        }
    }
    let mut duration = vec![0.0; n * (max_len + 1)];
    if options.durations == DurationModel::Poisson {
        for c in 0..n {
            for l in 1..=max_len {
                duration[c * (max_len + 1) + l] = poisson_log_pmf(l, params.lambdas()[c])?;
            }
        }
    }
    let transitions = options.transitions(params);
    let start = start_log_prob(params.kappa());
    let fixed = options.transcript == TranscriptMode::Fixed;

    const NONE: usize = usize::MAX;
    let mut score = vec![f64::NEG_INFINITY; stride * n];
    let mut back_len = vec![0usize; stride * n];
    let mut back_prev = vec![NONE; stride * n];
    // best_in[t][c] = max_{c' < c} score[t][c'] + ln p(c | c')
    let mut best_in = vec![(f64::NEG_INFINITY, NONE); stride * n];

    for t in 1..=frames {
        for c in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = (0, NONE);
            for l in 1..=max_len.min(t) {
                let begin = t - l;
                let (head, prev) = if begin == 0 {
                    if fixed && c != 0 {
                        continue;
                    }
                    (start, NONE)
                } else {
                    best_in[begin * n + c]
                };
                if head == f64::NEG_INFINITY {
                    continue;
                }
                let cand = head
                    + (cum[c * stride + t] - cum[c * stride + begin])
                    + duration[c * (max_len + 1) + l];
                if cand > best + TIE_EPS || (best == f64::NEG_INFINITY && cand > best) {
                    best = cand;
                    arg = (l, prev);
                }
            }
            score[t * n + c] = best;
            back_len[t * n + c] = arg.0;
            back_prev[t * n + c] = arg.1;
        }
        if t < frames {
            for c in 1..n {
                let mut best = (f64::NEG_INFINITY, NONE);
                for p in 0..c {
                    let s = score[t * n + p];
                    let tr = transitions.log_prob(p, c);
                    if s == f64::NEG_INFINITY || tr == f64::NEG_INFINITY {
                        continue;
                    }
                    let v = s + tr;
                    if v > best.0 + TIE_EPS || (best.0 == f64::NEG_INFINITY && v > best.0) {
                        best = (v, p);
                    }
                }
                best_in[t * n + c] = best;
            }
        }
    }

    let mut best = (f64::NEG_INFINITY, NONE);
    for c in 0..n {
        if fixed && c != n - 1 {
            continue;
        }
        let v = score[frames * n + c];
        if v > best.0 + TIE_EPS || (best.0 == f64::NEG_INFINITY && v > best.0) {
            best = (v, c);
        }
    }
    if best.1 == NONE {
        return Err(Error::NoAdmissibleSegmentation { frames });
    }

    let mut actions = Vec::new();
    let mut lengths = Vec::new();
    let (mut t, mut c) = (frames, best.1);
    loop {
        let l = back_len[t * n + c];
        actions.push(c);
        lengths.push(l);
        let prev = back_prev[t * n + c];
        t -= l;
        if prev == NONE {
            break;
        }
        c = prev;
    }
    debug_assert_eq!(t, 0);
    actions.reverse();
    lengths.reverse();
    Ok(Decoded {
        segmentation: Segmentation::new(actions, lengths)?,
        log_posterior: best.0,
    })
}

/// Unnormalised log posterior of an arbitrary segmentation under the same
/// model the decoder uses (`max_len` is ignored).
pub fn score_segmentation(
    log_likelihoods: &Matrix,
    params: &HmmParams,
    segmentation: &Segmentation,
    options: &DecodeOptions,
) -> Result<f64> {
    segmentation.validate(params.n_actions(), log_likelihoods.rows())?;
    let transitions = options.transitions(params);
    let mut total = start_log_prob(params.kappa());
    for (a, s, l) in segmentation.segments() {
        total += (s..s + l).map(|t| log_likelihoods.get(t, a)).sum::<f64>();
        if options.durations == DurationModel::Poisson {
            total += poisson_log_pmf(l, params.lambdas()[a])?;
        }
    }
    for w in segmentation.actions().windows(2) {
        total += transitions.log_prob(w[0], w[1]);
    }
    if options.transcript == TranscriptMode::Fixed {
        let full: Vec<usize> = (0..params.n_actions()).collect();
        if segmentation.actions() != full.as_slice() {
            return Ok(f64::NEG_INFINITY);
        }
    }
    Ok(total)
}
