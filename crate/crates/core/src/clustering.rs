//! K-means over embedded frames, time-ordered relabelling of the clusters into
//! an initial action ordering, and bag-of-words clustering of whole videos.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::normalized_position;
use crate::error::{Error, Result};
use crate::linalg::{squared_distance, Matrix};

const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centers: Matrix,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

/// Lloyd's algorithm with k-means++ seeding; the best of `restarts` runs by
/// inertia wins. Empty clusters are reseeded at the point farthest from its
/// current center.
pub fn kmeans(points: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k-means needs k >= 1".into()));
    }
    if points.rows() < k {
        return Err(Error::InvalidArgument(format!(
            "k-means with k = {k} needs at least {k} points, got {}",
            points.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, k, &mut rng);
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn kmeans_plus_plus(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let mut centers = Matrix::zeros(k, points.cols());
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut nearest: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_distance(p, points.row(first)))
        .collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a chosen center
            Err(_) => rng.gen_range(0..n),
        };
        centers.row_mut(c).copy_from_slice(points.row(pick));
        for (d, p) in nearest.iter_mut().zip(points.iter_rows()) {
            *d = d.min(squared_distance(p, points.row(pick)));
        }
    }
    centers
}

fn nearest_center(point: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter_rows().enumerate() {
        let d = squared_distance(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &Matrix, centers: &Matrix) -> (Vec<usize>, Vec<f64>) {
    let rows: Vec<&[f64]> = points.iter_rows().collect();
    rows.par_iter()
        .map(|p| nearest_center(p, centers))
        .unzip()
}

fn lloyd(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let dim = points.cols();
    let mut centers = kmeans_plus_plus(points, k, rng);
    let mut history = Vec::new();
    let mut previous: Option<Vec<usize>> = None;
    loop {
        let (assignments, dists) = assign(points, &centers);
        history.push(dists.iter().sum::<f64>());
        if previous.as_ref() == Some(&assignments) || history.len() >= MAX_LLOYD_ITERATIONS {
            return KMeansResult {
                assignments,
                centers,
                inertia: *history.last().expect("non-empty history"),
                inertia_history: history,
            };
        }

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter_rows().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums.row_mut(a).iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut taken = vec![false; points.rows()];
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / n;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed at the farthest point not already used for a reseed
                let far = dists
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken[*i])
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                taken[far] = true;
                centers.row_mut(c).copy_from_slice(points.row(far));
            }
        }
        previous = Some(assignments);
    }
}

/// Raw cluster index → action label, ordered by the mean normalised time
/// position of each cluster's members (ties broken by raw index).
pub fn order_clusters(assignments: &[usize], positions: &[f64], k: usize) -> Result<Vec<usize>> {
    if assignments.len() != positions.len() {
        return Err(Error::dim("cluster ordering positions", assignments.len(), positions.len()));
    }
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&a, &p) in assignments.iter().zip(positions) {
        if a >= k {
            return Err(Error::InvalidArgument(format!("cluster index {a} >= {k}")));
        }
        sums[a] += p;
        counts[a] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("cluster {empty} has no members")));
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    let mut relabel = vec![0; k];
    for (label, raw) in order.into_iter().enumerate() {
        relabel[raw] = label;
    }
    Ok(relabel)
}

/// K-means centers together with the time-ordered relabelling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    centers: Matrix,
    relabel: Vec<usize>,
}

impl ClusterModel {
    pub fn new(centers: Matrix, relabel: Vec<usize>) -> Result<Self> {
        let k = centers.rows();
        if relabel.len() != k {
            return Err(Error::dim("relabelling", k, relabel.len()));
        }
        let mut seen = vec![false; k];
        for &l in &relabel {
            if l >= k || std::mem::replace(&mut seen[l], true) {
                return Err(Error::InvalidArgument("relabelling is not a permutation".into()));
            }
        }
        Ok(ClusterModel { centers, relabel })
    }

    pub fn n_clusters(&self) -> usize {
        self.centers.rows()
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub fn relabel(&self) -> &[usize] {
        &self.relabel
    }

    /// Action label of the nearest center.
    pub fn label(&self, point: &[f64]) -> usize {
        self.relabel[nearest_center(point, &self.centers).0]
    }
}

/// K-means over every frame of every video followed by time ordering.
pub fn fit_cluster_model(
    embeddings: &[Matrix],
    n_actions: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterModel> {
    let rows: Vec<&[f64]> = embeddings.iter().flat_map(|m| m.iter_rows()).collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no frames to cluster".into()));
    }
    let points = Matrix::from_rows(&rows)?;
    let positions: Vec<f64> = embeddings
        .iter()
        .flat_map(|m| {
            let len = m.rows();
            (0..len).map(move |t| normalized_position(t, len))
        })
        .collect();
    let km = kmeans(&points, n_actions, seed, restarts)?;
    let relabel = order_clusters(&km.assignments, &positions, n_actions)?;
    ClusterModel::new(km.centers, relabel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    /// Per video, one action label per frame.
    pub labels: Vec<Vec<usize>>,
    /// Per action, the mean length of its maximal runs over all videos;
    /// `None` when the action never occurs.
    pub mean_run_length: Vec<Option<f64>>,
}

/// Maximal constant runs of a label sequence as `(label, length)`.
pub fn runs(labels: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &l in labels {
        match out.last_mut() {
            Some((last, len)) if *last == l => *len += 1,
            _ => out.push((l, 1)),
        }
    }
    out
}

/// Labels every frame with its nearest (relabelled) center and collects the
/// run-length statistics used to initialise the duration model.
pub fn initial_pseudo_labels(embeddings: &[Matrix], model: &ClusterModel) -> PseudoLabels {
    let k = model.n_clusters();
    let labels: Vec<Vec<usize>> = embeddings
        .par_iter()
        .map(|m| m.iter_rows().map(|p| model.label(p)).collect())
        .collect();
    let mut totals = vec![0usize; k];
    let mut counts = vec![0usize; k];
    for video in &labels {
        for (l, len) in runs(video) {
            totals[l] += len;
            counts[l] += 1;
        }
    }
    let mean_run_length = totals
        .iter()
        .zip(&counts)
        .map(|(&t, &c)| (c > 0).then(|| t as f64 / c as f64))
        .collect();
    PseudoLabels {
        labels,
        mean_run_length,
    }
}

/// Soft assignment weights `∝ exp(−‖p − c_j‖² / temperature)`, summing to 1.
pub fn soft_assign(point: &[f64], centers: &Matrix, temperature: f64) -> Vec<f64> {
    let d: Vec<f64> = centers
        .iter_rows()
        .map(|c| squared_distance(point, c))
        .collect();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = d.iter().map(|x| (-(x - min) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Mean squared distance of every frame to its nearest center.
pub fn default_temperature(embeddings: &[Matrix], centers: &Matrix) -> f64 {
    let (sum, n) = embeddings
        .iter()
        .flat_map(|m| m.iter_rows())
        .fold((0.0, 0usize), |(s, n), p| (s + nearest_center(p, centers).1, n + 1));
    let t = sum / n.max(1) as f64;
    if t > 0.0 {
        t
    } else {
        1.0
    }
}

/// L1-normalised soft bag-of-words histogram of one video.
pub fn bag_of_words(embedding: &Matrix, centers: &Matrix, temperature: f64) -> Vec<f64> {
    let mut hist = vec![0.0; centers.rows()];
    for p in embedding.iter_rows() {
        for (h, w) in hist.iter_mut().zip(soft_assign(p, centers, temperature)) {
            *h += w;
        }
    }
    let total: f64 = hist.iter().sum();
    hist.iter_mut().for_each(|h| *h /= total);
    hist
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoClustering {
    /// Activity cluster per video.
    pub assignments: Vec<usize>,
    pub histograms: Vec<Vec<f64>>,
    pub temperature: f64,
}

/// Groups videos into `n_activities` sets by k-means over their soft
/// bag-of-words histograms against the frame-level `vocabulary` centers.
pub fn cluster_videos(
    embeddings: &[Matrix],
    vocabulary: &Matrix,
    n_activities: usize,
    temperature: Option<f64>,
    seed: u64,
) -> Result<VideoClustering> {
    if n_activities > embeddings.len() {
        return Err(Error::InvalidArgument(format!(
            "{n_activities} activities requested for {} videos",
            embeddings.len()
        )));
    }
    let temperature = match temperature {
        Some(t) if t > 0.0 => t,
        Some(t) => return Err(Error::InvalidArgument(format!("temperature must be positive, got {t}"))),
        None => default_temperature(embeddings, vocabulary),
    };
    let histograms: Vec<Vec<f64>> = embeddings
        .par_iter()
        .map(|m| bag_of_words(m, vocabulary, temperature))
        .collect();
    let km = kmeans(&Matrix::from_rows(&histograms)?, n_activities, seed, 10)?;
    Ok(VideoClustering {
        assignments: km.assignments,
        histograms,
        temperature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};
    use rand_distr::Normal;

    fn column(values: &[f64]) -> Matrix {
        Matrix::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn separated_pairs() {
        let km = kmeans(&column(&[0.0, 0.0, 10.0, 10.0]), 2, 1, 10).unwrap();
        let mut c: Vec<f64> = km.centers.data().to_vec();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.0, 10.0]);
        assert_eq!(km.inertia, 0.0);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let xs = [1.0, 2.0, 4.0, 9.0];
        let km = kmeans(&column(&xs), 1, 0, 3).unwrap();
        let mean = 4.0;
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        assert!((km.centers.get(0, 0) - mean).abs() < 1e-12);
        assert!((km.inertia - ss).abs() < 1e-9);
    }

    #[test]
    fn too_few_points() {
        assert!(kmeans(&column(&[1.0, 2.0]), 3, 0, 1).is_err());
    }

    #[test]
    fn recovers_three_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for i in 0..60 {
            let c = i % 3;
            let center = 4.0 * c as f64;
            rows.push(vec![center + noise.sample(&mut rng), noise.sample(&mut rng)]);
            truth.push(c);
        }
        let km = kmeans(&Matrix::from_rows(&rows).unwrap(), 3, 5, 10).unwrap();
        // purity: every found cluster maps onto a single true class
        for c in 0..3 {
            let members: Vec<usize> = truth
                .iter()
                .zip(&km.assignments)
                .filter(|(_, &a)| a == c)
                .map(|(&t, _)| t)
                .collect();
            assert!(members.windows(2).all(|w| w[0] == w[1]));
            assert_eq!(members.len(), 20);
        }
    }

    #[test]
    fn ordering_examples() {
        // clusters A=0 (0.7), B=1 (0.2), C=2 (0.5)
        let relabel = order_clusters(&[0, 1, 2], &[0.7, 0.2, 0.5], 3).unwrap();
        assert_eq!(relabel, vec![2, 0, 1]);
        assert_eq!(order_clusters(&[0, 1, 2], &[0.1, 0.4, 0.9], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(order_clusters(&[1, 0], &[0.5, 0.5], 2).unwrap(), vec![0, 1]);
        assert!(order_clusters(&[0, 0], &[0.1, 0.2], 2).is_err());
    }

    #[test]
    fn pseudo_labels_and_run_lengths() {
        let centers = Matrix::from_rows(&[[0.0], [10.0]]).unwrap();
        let model = ClusterModel::new(centers, vec![0, 1]).unwrap();
        assert_eq!(model.label(&[10.0]), 1);

        let video = column(&[0.1, 9.9, 0.2, 0.3, 10.1, 10.2, 9.8]);
        let pl = initial_pseudo_labels(std::slice::from_ref(&video), &model);
        assert_eq!(pl.labels[0], vec![0, 1, 0, 0, 1, 1, 1]);
        // oracle: runs are 0:[1,2], 1:[1,3]
        assert_eq!(pl.mean_run_length, vec![Some(1.5), Some(2.0)]);
        let total: usize = runs(&pl.labels[0]).iter().map(|r| r.1).sum();
        assert_eq!(total, 7);
    }

    #[test]
    fn soft_assignment_symmetry() {
        let centers = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [100.0, 100.0]]).unwrap();
        let w = soft_assign(&[0.0, 0.0], &centers, 1.0);
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
        assert!(w[2] < 1e-100);
    }

    #[test]
    fn cold_temperature_reproduces_hard_counts() {
        let centers = Matrix::from_rows(&[[0.0], [1.0], [5.0]]).unwrap();
        let video = column(&[0.1, 0.2, 0.9, 4.0, 6.0, 5.5, 0.4, 1.3]);
        let soft = bag_of_words(&video, &centers, 1e-6);
        // hard-count oracle
        let mut hard = vec![0.0; 3];
        for p in video.iter_rows() {
            hard[nearest_center(p, &centers).0] += 1.0 / 8.0;
        }
        for (s, h) in soft.iter().zip(&hard) {
            assert!((s - h).abs() < 1e-9, "{soft:?} vs {hard:?}");
        }
    }

    #[test]
    fn disjoint_vocabularies_split_videos() {
        let centers = Matrix::from_rows(&[[0.0], [1.0], [10.0], [11.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let videos: Vec<Matrix> = (0..8)
            .map(|v| {
                let base = if v % 2 == 0 { 0.0 } else { 10.0 };
                let xs: Vec<f64> = (0..30).map(|_| base + rng.gen_range(0.0..1.0)).collect();
                column(&xs)
            })
            .collect();
        let vc = cluster_videos(&videos, &centers, 2, None, 3).unwrap();
        for v in 0..8 {
            assert_eq!(vc.assignments[v] == vc.assignments[0], v % 2 == 0);
        }
        assert!(cluster_videos(&videos, &centers, 9, None, 3).is_err());
    }

    proptest! {
        #[test]
        fn lloyd_inertia_never_increases(
            xs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 6..40),
            k in 1usize..5,
            seed in 0u64..1000,
        ) {
            let rows: Vec<Vec<f64>> = xs.iter().map(|&(a, b)| vec![a, b]).collect();
            let km = kmeans(&Matrix::from_rows(&rows).unwrap(), k, seed, 2).unwrap();
            for w in km.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
            let relabel = order_clusters(
                &km.assignments,
                &(0..rows.len()).map(|i| i as f64).collect::<Vec<_>>(),
                k,
            );
            if let Ok(r) = relabel {
                prop_assert!(ClusterModel::new(km.centers.clone(), r).is_ok());
            }
        }

        #[test]
        fn histograms_are_distributions(
            xs in prop::collection::vec(-3.0f64..3.0, 1..30),
            temp in 0.01f64..10.0,
        ) {
            let centers = Matrix::from_rows(&[[-1.0], [0.0], [2.0]]).unwrap();
            for &x in &xs {
                let w = soft_assign(&[x], &centers, temp);
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let h = bag_of_words(&column(&xs), &centers, temp);
            prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
