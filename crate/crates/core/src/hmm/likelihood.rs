use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{log_softmax, softmax_xent, Activation, Mlp, MlpGrad, SgdMomentum};

pub const LIKELIHOOD_HIDDEN: usize = 40;

/// Frame classifier `embedding → 40 → N` whose softmax gives `p(c | x_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodModel {
    mlp: Mlp,
}

impl LikelihoodModel {
    pub fn glorot<R: Rng + ?Sized>(input_dim: usize, n_actions: usize, rng: &mut R) -> Result<Self> {
        let mlp = Mlp::glorot(
            &[input_dim, LIKELIHOOD_HIDDEN, n_actions],
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        Ok(LikelihoodModel { mlp })
    }

    pub fn from_mlp(mlp: Mlp) -> Self {
        LikelihoodModel { mlp }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn n_actions(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }
}

/// `T × N` matrix of `ln p(x_t | c) = ln softmax_c(mlp(x_t)) − ln p(c)` with
/// a uniform prior `p(c) = 1/N`.
pub fn frame_log_likelihoods(model: &LikelihoodModel, embedded: &Matrix) -> Result<Matrix> {
    if embedded.cols() != model.input_dim() {
        return Err(Error::dim("likelihood input", model.input_dim(), embedded.cols()));
    }
    let n = model.n_actions();
    let log_prior = -(n as f64).ln();
    let mut out = Matrix::zeros(embedded.rows(), n);
    for (t, x) in embedded.iter_rows().enumerate() {
        let logits = model.mlp.apply(x)?;
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite(format!("likelihood logits at frame {t}")));
        }
        for (dst, lp) in out.row_mut(t).iter_mut().zip(log_softmax(&logits)) {
            *dst = lp - log_prior;
        }
    }
    Ok(out)
}

/// Mean softmax cross-entropy over every labelled frame.
pub fn mean_frame_nll(
    model: &LikelihoodModel,
    embeddings: &[Matrix],
    labels: &[Vec<usize>],
) -> Result<f64> {
    check_labels(model, embeddings, labels)?;
    let (sum, count) = embeddings
        .par_iter()
        .zip(labels)
        .map(|(emb, lab)| -> Result<(f64, usize)> {
            let mut s = 0.0;
            for (x, &c) in emb.iter_rows().zip(lab) {
                s += softmax_xent(&model.mlp.apply(x)?, c)?.0;
            }
            Ok((s, lab.len()))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((0.0, 0), |(s, n), (a, b)| (s + a, n + b));
    Ok(sum / count.max(1) as f64)
}

fn check_labels(model: &LikelihoodModel, embeddings: &[Matrix], labels: &[Vec<usize>]) -> Result<()> {
    if embeddings.len() != labels.len() {
        return Err(Error::dim("label sequences", embeddings.len(), labels.len()));
    }
    let n = model.n_actions();
    for (v, (emb, lab)) in embeddings.iter().zip(labels).enumerate() {
        if emb.rows() != lab.len() {
            return Err(Error::dim(format!("labels of video {v}"), emb.rows(), lab.len()));
        }
        if let Some(&bad) = lab.iter().find(|&&c| c >= n) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} in video {v} out of range for {n} actions"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodTraining {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for LikelihoodTraining {
    fn default() -> Self {
        LikelihoodTraining {
            epochs: 1,
            batch_size: 32,
        }
    }
}

/// Minibatch cross-entropy training of the frame classifier on per-frame
/// labels. Returns the mean loss of every epoch.
pub fn train_likelihood_mlp<R: Rng + ?Sized>(
    model: &mut LikelihoodModel,
    embeddings: &[Matrix],
    labels: &[Vec<usize>],
    schedule: LikelihoodTraining,
    optimizer: &mut SgdMomentum,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_labels(model, embeddings, labels)?;
    if schedule.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut frames: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .flat_map(|(v, lab)| (0..lab.len()).map(move |t| (v, t)))
        .collect();
    let mut losses = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        frames.shuffle(rng);
        let mut total = 0.0;
        for batch in frames.chunks(schedule.batch_size) {
            let mut grad = MlpGrad::zeros_like(&model.mlp);
            let scale = 1.0 / batch.len() as f64;
            for &(v, t) in batch {
                let x = embeddings[v].row(t);
                let logits = model.mlp.apply(x)?;
                let (loss, mut dlogits) = softmax_xent(&logits, labels[v][t])?;
                total += loss;
                dlogits.iter_mut().for_each(|g| *g *= scale);
                model.mlp.backward_into(x, &dlogits, &mut grad)?;
            }
            optimizer.step(&mut model.mlp, &grad)?;
        }
        let mean = total / frames.len().max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("likelihood loss in epoch {epoch}")));
        }
        losses.push(mean);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::log_sum_exp;
    use crate::nn::{assign, flatten, grad_check, DenseLayer};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_gives_flat_zero_rows() {
        let mlp = Mlp::new(vec![
            DenseLayer::zeros(4, 6, Activation::Relu),
            DenseLayer::zeros(6, 3, Activation::Identity),
        ])
        .unwrap();
        let model = LikelihoodModel::from_mlp(mlp);
        let ll = frame_log_likelihoods(&model, &Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0]]).unwrap()).unwrap();
        for &v in ll.row(0) {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rows_renormalise_after_removing_the_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = LikelihoodModel::glorot(5, 4, &mut rng).unwrap();
        let emb = Matrix::from_rows(&(0..6).map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>()).collect::<Vec<_>>()).unwrap();
        let ll = frame_log_likelihoods(&model, &emb).unwrap();
        for row in ll.iter_rows() {
            let shifted: Vec<f64> = row.iter().map(|v| v - 4f64.ln()).collect();
            assert_abs_diff_eq!(log_sum_exp(&shifted), 0.0, epsilon = 1e-9);
        }
        assert!(frame_log_likelihoods(&model, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn hand_set_logits() {
        // identity output layer on an identity hidden layer: logits = input
        let eye = |act| DenseLayer::new(Matrix::identity(3), vec![0.0; 3], act).unwrap();
        let model = LikelihoodModel::from_mlp(Mlp::new(vec![eye(Activation::Relu), eye(Activation::Identity)]).unwrap());
        let ll = frame_log_likelihoods(&model, &Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap()).unwrap();
        let direct = 3.0 - (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() + 3f64.ln();
        assert_abs_diff_eq!(ll.get(0, 2), direct, epsilon = 1e-12);
        assert_abs_diff_eq!(ll.get(0, 2), 0.691_006_3, epsilon = 1e-6);
    }

    fn two_blobs(rng: &mut ChaCha8Rng) -> (Vec<Matrix>, Vec<Vec<usize>>) {
        let mut embs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..4 {
            let mut rows = Vec::new();
            let mut lab = Vec::new();
            for t in 0..40 {
                let c = usize::from(t >= 20);
                let sign = if c == 0 { -1.0 } else { 1.0 };
                rows.push((0..6).map(|_| sign + rng.gen_range(-0.8..0.8)).collect::<Vec<f64>>());
                lab.push(c);
            }
            embs.push(Matrix::from_rows(&rows).unwrap());
            labels.push(lab);
        }
        (embs, labels)
    }

    fn accuracy(model: &LikelihoodModel, embs: &[Matrix], labels: &[Vec<usize>]) -> f64 {
        let mut hit = 0;
        let mut n = 0;
        for (e, l) in embs.iter().zip(labels) {
            let ll = frame_log_likelihoods(model, e).unwrap();
            for (row, &c) in ll.iter_rows().zip(l) {
                let arg = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                hit += usize::from(arg == c);
                n += 1;
            }
        }
        hit as f64 / n as f64
    }

    #[test]
    fn separable_classes_are_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (embs, labels) = two_blobs(&mut rng);
        let mut model = LikelihoodModel::glorot(6, 2, &mut rng).unwrap();
        let mut opt = SgdMomentum::new(0.01, 0.9).unwrap();
        let schedule = LikelihoodTraining { epochs: 50, batch_size: 16 };
        let losses = train_likelihood_mlp(&mut model, &embs, &labels, schedule, &mut opt, &mut rng).unwrap();
        assert_eq!(losses.len(), 50);
        assert!(accuracy(&model, &embs, &labels) >= 0.99);
        assert!(losses[49] < losses[0]);
    }

    #[test]
    fn single_class_drives_loss_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (embs, labels) = two_blobs(&mut rng);
        let ones: Vec<Vec<usize>> = labels.iter().map(|l| vec![1; l.len()]).collect();
        let mut model = LikelihoodModel::glorot(6, 3, &mut rng).unwrap();
        let mut opt = SgdMomentum::new(0.05, 0.9).unwrap();
        let schedule = LikelihoodTraining { epochs: 40, batch_size: 16 };
        let losses = train_likelihood_mlp(&mut model, &embs, &ones, schedule, &mut opt, &mut rng).unwrap();
        assert!(*losses.last().unwrap() < 1e-2, "{losses:?}");
        assert_eq!(accuracy(&model, &embs, &ones), 1.0);
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (embs, labels) = two_blobs(&mut rng);
        let bad: Vec<Vec<usize>> = labels.iter().map(|l| vec![2; l.len()]).collect();
        let mut model = LikelihoodModel::glorot(6, 2, &mut rng).unwrap();
        let mut opt = SgdMomentum::default();
        let r = train_likelihood_mlp(&mut model, &embs, &bad, LikelihoodTraining::default(), &mut opt, &mut rng);
        assert!(r.is_err());
    }

    #[test]
    fn batch_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (embs, labels) = two_blobs(&mut rng);
        let model = LikelihoodModel::glorot(6, 2, &mut rng).unwrap();
        let frames: Vec<(usize, usize)> = vec![(0, 3), (1, 25), (2, 10), (3, 39)];
        let err = grad_check(
            |flat| {
                let mut m = model.mlp.clone();
                assign(&mut m, flat).unwrap();
                let mut grad = MlpGrad::zeros_like(&m);
                let mut loss = 0.0;
                for &(v, t) in &frames {
                    let x = embs[v].row(t);
                    let (l, d) = softmax_xent(&m.apply(x).unwrap(), labels[v][t]).unwrap();
                    loss += l;
                    m.backward_into(x, &d, &mut grad).unwrap();
                }
                (loss, flatten(&grad))
            },
            &flatten(&model.mlp),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
