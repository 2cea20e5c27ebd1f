//! Contrastive embedding-matching objective: frame-averaged cosine
//! similarity matrix, learnable temperature, and the symmetric
//! diagonal-softmax loss with analytic gradients.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::par;

/// Batch similarity matrix S, N x N.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Mat,
}

impl SimilarityMatrix {
    pub fn new(values: Mat) -> Result<Self> {
        if values.rows() != values.cols() {
            return Err(Error::Shape(format!(
                "similarity matrix must be square, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if values.rows() == 0 {
            return Err(Error::Degenerate("empty similarity matrix".into()));
        }
        Ok(SimilarityMatrix { values })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }
}

/// Softmax temperature, optimized in log domain so it stays positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature {
    pub log_tau: f64,
}

impl Temperature {
    pub fn new(log_tau: f64) -> Self {
        Temperature { log_tau }
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }
}

impl Default for Temperature {
    /// tau = e.
    fn default() -> Self {
        Temperature { log_tau: 1.0 }
    }
}

const NORM_TOL: f64 = 1e-4;

fn check_unit_norm(v: &[f64], what: &str) -> Result<()> {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::Numeric(format!(
            "{what} is not unit-norm (|v| = {norm})"
        )));
    }
    Ok(())
}

/// S[i][j] = (1/K) sum_k <teacher_i, student_{j,k}>: per-chunk cosine of
/// unit vectors, then temporal mean over the K chunk embeddings.
pub fn similarity_matrix(
    teacher: &[Vec<f64>],
    student: &[Vec<Vec<f64>>],
) -> Result<SimilarityMatrix> {
    let n = teacher.len();
    if n == 0 || student.len() != n {
        return Err(Error::Shape(format!(
            "batch sizes disagree: {} teacher vs {} student",
            n,
            student.len()
        )));
    }
    let k = student[0].len();
    if k == 0 {
        return Err(Error::Shape("student sequences are empty".into()));
    }
    let dim = teacher[0].len();
    for (j, seq) in student.iter().enumerate() {
        if seq.len() != k {
            return Err(Error::Shape(format!(
                "ragged student sequences: item {j} has {} chunks, expected {k}",
                seq.len()
            )));
        }
        for m in seq {
            if m.len() != dim {
                return Err(Error::Shape("embedding dimensions disagree".into()));
            }
            check_unit_norm(m, "student embedding")?;
        }
    }
    for e in teacher {
        if e.len() != dim {
            return Err(Error::Shape("embedding dimensions disagree".into()));
        }
        check_unit_norm(e, "teacher embedding")?;
    }

    let inv_k = 1.0 / k as f64;
    let rows: Vec<Vec<f64>> = par::map_range(n, |i| {
        let e = &teacher[i];
        (0..n)
            .map(|j| {
                let mut acc = 0.0;
                for m in &student[j] {
                    acc += e.iter().zip(m).map(|(a, b)| a * b).sum::<f64>();
                }
                acc * inv_k
            })
            .collect()
    });
    let mut values = Mat::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        values.row_mut(i).copy_from_slice(row);
    }
    SimilarityMatrix::new(values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveLoss {
    pub total: f64,
    pub row_loss: f64,
    pub col_loss: f64,
}

fn log_softmax_diag_term(logits: &[f64], diag: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    logits[diag] - lse
}

/// Symmetric cross-entropy on the scaled similarity matrix: the mean of the
/// row-wise loss (each teacher retrieves its student) and the column-wise
/// loss (each student retrieves its teacher).
pub fn contrastive_loss(s: &SimilarityMatrix, tau: f64) -> Result<ContrastiveLoss> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let n = s.n();
    let mut row_loss = 0.0;
    let mut col_loss = 0.0;
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| tau * s.get(i, j)).collect();
        row_loss -= log_softmax_diag_term(&row, i);
        let col: Vec<f64> = (0..n).map(|j| tau * s.get(j, i)).collect();
        col_loss -= log_softmax_diag_term(&col, i);
    }
    row_loss /= n as f64;
    col_loss /= n as f64;
    Ok(ContrastiveLoss {
        total: 0.5 * (row_loss + col_loss),
        row_loss,
        col_loss,
    })
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// d(row_loss)/d(logits): (softmax(row) - I) / N. Each row sums to zero.
pub(crate) fn row_logit_grad(s: &SimilarityMatrix, tau: f64) -> Mat {
    let n = s.n();
    let inv_n = 1.0 / n as f64;
    let mut g = Mat::zeros(n, n);
    for i in 0..n {
        let logits: Vec<f64> = (0..n).map(|j| tau * s.get(i, j)).collect();
        let p = softmax(&logits);
        for j in 0..n {
            g[(i, j)] = (p[j] - if i == j { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    g
}

/// Column-wise counterpart of [`row_logit_grad`].
pub(crate) fn col_logit_grad(s: &SimilarityMatrix, tau: f64) -> Mat {
    let n = s.n();
    let inv_n = 1.0 / n as f64;
    let mut g = Mat::zeros(n, n);
    for j in 0..n {
        let logits: Vec<f64> = (0..n).map(|i| tau * s.get(i, j)).collect();
        let p = softmax(&logits);
        for i in 0..n {
            g[(i, j)] = (p[i] - if i == j { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    g
}

/// Gradients of the symmetric loss: dLoss/dS and dLoss/d(log tau).
pub fn loss_backward(s: &SimilarityMatrix, tau: f64) -> (Mat, f64) {
    let n = s.n();
    let gr = row_logit_grad(s, tau);
    let gc = col_logit_grad(s, tau);
    let mut d_logits = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            d_logits[(i, j)] = 0.5 * (gr[(i, j)] + gc[(i, j)]);
        }
    }
    let mut ds = Mat::zeros(n, n);
    let mut d_tau = 0.0;
    for i in 0..n {
        for j in 0..n {
            ds[(i, j)] = tau * d_logits[(i, j)];
            d_tau += d_logits[(i, j)] * s.get(i, j);
        }
    }
    // log-domain chain rule: d tau / d log_tau = tau
    (ds, tau * d_tau)
}

/// Fraction of rows whose strict argmax sits on the diagonal; ties fail.
pub fn retrieval_accuracy(s: &SimilarityMatrix) -> f64 {
    let n = s.n();
    let mut hits = 0;
    for i in 0..n {
        let diag = s.get(i, i);
        let ok = (0..n).all(|j| j == i || s.get(i, j) < diag);
        if ok {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    fn basis(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn matched_orthogonal_batch_gives_identity() {
        let teacher: Vec<Vec<f64>> = (0..3).map(|i| basis(4, i)).collect();
        let student: Vec<Vec<Vec<f64>>> = (0..3).map(|i| vec![basis(4, i)]).collect();
        let s = similarity_matrix(&teacher, &student).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((s.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn antipodal_students_give_negative_diagonal() {
        let mut rng = StdRng::seed_from_u64(1);
        let teacher: Vec<Vec<f64>> = (0..3).map(|_| unit(&mut rng, 6)).collect();
        let student: Vec<Vec<Vec<f64>>> = teacher
            .iter()
            .map(|e| vec![e.iter().map(|v| -v).collect(), e.iter().map(|v| -v).collect()])
            .collect();
        let s = similarity_matrix(&teacher, &student).unwrap();
        for i in 0..3 {
            assert!((s.get(i, i) + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn similarity_matches_double_loop_oracle() {
        let mut rng = StdRng::seed_from_u64(2);
        let teacher: Vec<Vec<f64>> = (0..3).map(|_| unit(&mut rng, 5)).collect();
        let student: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| (0..2).map(|_| unit(&mut rng, 5)).collect())
            .collect();
        let s = similarity_matrix(&teacher, &student).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut want = 0.0;
                for k in 0..2 {
                    let mut dot = 0.0;
                    for d in 0..5 {
                        dot += teacher[i][d] * student[j][k][d];
                    }
                    want += dot;
                }
                want /= 2.0;
                assert!((s.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn similarity_entries_stay_in_unit_interval() {
        let mut rng = StdRng::seed_from_u64(3);
        let teacher: Vec<Vec<f64>> = (0..5).map(|_| unit(&mut rng, 8)).collect();
        let student: Vec<Vec<Vec<f64>>> = (0..5)
            .map(|_| (0..3).map(|_| unit(&mut rng, 8)).collect())
            .collect();
        let s = similarity_matrix(&teacher, &student).unwrap();
        for v in s.values().data() {
            assert!(*v >= -1.0 - 1e-6 && *v <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn ragged_sequences_are_rejected() {
        let mut rng = StdRng::seed_from_u64(4);
        let teacher: Vec<Vec<f64>> = (0..2).map(|_| unit(&mut rng, 4)).collect();
        let student = vec![
            vec![unit(&mut rng, 4), unit(&mut rng, 4)],
            vec![unit(&mut rng, 4)],
        ];
        assert!(matches!(
            similarity_matrix(&teacher, &student),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn non_normalized_inputs_are_rejected() {
        let mut rng = StdRng::seed_from_u64(5);
        let teacher = vec![unit(&mut rng, 4), vec![0.5, 0.5, 0.5, 0.0]];
        let student: Vec<Vec<Vec<f64>>> =
            (0..2).map(|_| vec![unit(&mut rng, 4)]).collect();
        assert!(matches!(
            similarity_matrix(&teacher, &student),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn single_item_batch_has_zero_loss() {
        let s = SimilarityMatrix::new(Mat::from_vec(1, 1, vec![0.37]).unwrap()).unwrap();
        let l = contrastive_loss(&s, 2.5).unwrap();
        assert_eq!(l.total, 0.0);
        assert_eq!(l.row_loss, 0.0);
        assert_eq!(l.col_loss, 0.0);
    }

    #[test]
    fn identity_similarity_loss_decreases_monotonically_in_tau() {
        let s = SimilarityMatrix::new(Mat::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 }))
            .unwrap();
        let mut prev = f64::INFINITY;
        for tau in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
            let l = contrastive_loss(&s, tau).unwrap().total;
            assert!(l < prev, "loss {l} not below {prev} at tau {tau}");
            assert!(l >= 0.0);
            prev = l;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn two_item_identity_matches_closed_form() {
        // -log(e / (e + 1)) = ln(1 + e) - 1
        let s = SimilarityMatrix::new(Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let l = contrastive_loss(&s, 1.0).unwrap();
        let want = (1.0 + std::f64::consts::E).ln() - 1.0;
        assert!((l.total - want).abs() < 1e-12, "{} vs {want}", l.total);
        assert!((l.row_loss - want).abs() < 1e-12);
        assert!((l.col_loss - want).abs() < 1e-12);
    }

    #[test]
    fn loss_is_invariant_under_joint_permutation() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..20 {
            let n = rng.random_range(2..6);
            let m = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let s = SimilarityMatrix::new(m.clone()).unwrap();
            let tau = rng.random_range(0.5..4.0);
            let base = contrastive_loss(&s, tau).unwrap().total;

            // random permutation applied to both axes
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let pm = Mat::from_fn(n, n, |i, j| m[(perm[i], perm[j])]);
            let ps = SimilarityMatrix::new(pm).unwrap();
            let permuted = contrastive_loss(&ps, tau).unwrap().total;
            assert!((base - permuted).abs() < 1e-12);
        }
    }

    #[test]
    fn row_loss_equals_col_loss_of_transpose() {
        let mut rng = StdRng::seed_from_u64(7);
        let m = Mat::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let mt = Mat::from_fn(5, 5, |i, j| m[(j, i)]);
        let a = contrastive_loss(&SimilarityMatrix::new(m).unwrap(), 1.7).unwrap();
        let b = contrastive_loss(&SimilarityMatrix::new(mt).unwrap(), 1.7).unwrap();
        assert!((a.row_loss - b.col_loss).abs() < 1e-12);
        assert!((a.col_loss - b.row_loss).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(8);
        let h = 1e-4;
        for _ in 0..10 {
            let m = Mat::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let s = SimilarityMatrix::new(m.clone()).unwrap();
            let log_tau: f64 = rng.random_range(-0.5..1.5);
            let tau = log_tau.exp();
            let (ds, d_log_tau) = loss_backward(&s, tau);

            for i in 0..4 {
                for j in 0..4 {
                    let mut lo = m.clone();
                    let mut hi = m.clone();
                    lo[(i, j)] -= h;
                    hi[(i, j)] += h;
                    let flo = contrastive_loss(&SimilarityMatrix::new(lo).unwrap(), tau)
                        .unwrap()
                        .total;
                    let fhi = contrastive_loss(&SimilarityMatrix::new(hi).unwrap(), tau)
                        .unwrap()
                        .total;
                    let fd = (fhi - flo) / (2.0 * h);
                    let rel = (fd - ds[(i, j)]).abs() / fd.abs().max(ds[(i, j)].abs()).max(1e-6);
                    assert!(rel < 1e-4, "dS[{i},{j}]: fd={fd} analytic={}", ds[(i, j)]);
                }
            }
            let flo = contrastive_loss(&s, (log_tau - h).exp()).unwrap().total;
            let fhi = contrastive_loss(&s, (log_tau + h).exp()).unwrap().total;
            let fd = (fhi - flo) / (2.0 * h);
            let rel = (fd - d_log_tau).abs() / fd.abs().max(d_log_tau.abs()).max(1e-6);
            assert!(rel < 1e-4, "dlog_tau: fd={fd} analytic={d_log_tau}");
        }
    }

    #[test]
    fn gradient_vanishes_at_sharp_identity() {
        let s = SimilarityMatrix::new(Mat::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 }))
            .unwrap();
        let (ds, d_log_tau) = loss_backward(&s, 50.0);
        let norm: f64 = ds.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-12, "gradient norm {norm}");
        assert!(d_log_tau.abs() < 1e-12);
    }

    #[test]
    fn row_logit_grad_rows_sum_to_zero() {
        let mut rng = StdRng::seed_from_u64(9);
        let m = Mat::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let s = SimilarityMatrix::new(m).unwrap();
        let g = row_logit_grad(&s, 2.0);
        for i in 0..5 {
            let sum: f64 = g.row(i).iter().sum();
            assert!(sum.abs() < 1e-14);
        }
    }

    #[test]
    fn retrieval_accuracy_cases() {
        let id = SimilarityMatrix::new(Mat::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 }))
            .unwrap();
        assert_eq!(retrieval_accuracy(&id), 1.0);

        // anti-diagonal maxima: every row's argmax is off the diagonal
        let anti = SimilarityMatrix::new(Mat::from_fn(4, 4, |i, j| {
            if i + j == 3 {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap();
        assert_eq!(retrieval_accuracy(&anti), 0.0);

        // ties count as failure
        let tie = SimilarityMatrix::new(Mat::from_vec(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap())
            .unwrap();
        assert_eq!(retrieval_accuracy(&tie), 0.5);
    }

    #[test]
    fn retrieval_accuracy_matches_brute_force() {
        let mut rng = StdRng::seed_from_u64(10);
        for _ in 0..20 {
            let m = Mat::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let s = SimilarityMatrix::new(m.clone()).unwrap();
            let got = retrieval_accuracy(&s);
            let mut hits = 0;
            for i in 0..5 {
                let mut best = f64::NEG_INFINITY;
                let mut best_j = 0;
                for j in 0..5 {
                    if m[(i, j)] > best {
                        best = m[(i, j)];
                        best_j = j;
                    }
                }
                // unique maximum at the diagonal
                let unique = (0..5).filter(|&j| m[(i, j)] == best).count() == 1;
                if best_j == i && unique {
                    hits += 1;
                }
            }
            assert_eq!(got, hits as f64 / 5.0);
        }
    }
}
