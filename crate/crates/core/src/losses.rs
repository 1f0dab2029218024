//! Training objectives over batch similarity matrices and joint embeddings.
//!
//! Every loss returns its value together with the gradient with respect to the
//! student-side input (score grid, distance grid, or embeddings). Teacher inputs
//! are treated as constants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::JointEmbeddings;
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SimilarityMatrix};

pub const DEFAULT_MARGIN: f64 = 0.2;

/// Loss value and its gradient with respect to the student matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueAndGrad {
    pub value: f64,
    pub grad: SimilarityMatrix,
}

/// Loss value and gradients with respect to the student's joint embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingLossValueAndGrad {
    pub value: f64,
    pub grad_video: DenseMatrix<f64>,
    pub grad_text: DenseMatrix<f64>,
}

/// Pointwise penalty used to compare teacher and student entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointLoss {
    Huber,
    L1,
    L2,
}

impl PointLoss {
    /// Value and derivative with respect to `student` of the penalty between `teacher` and `student`.
    pub fn eval(self, teacher: f64, student: f64) -> (f64, f64) {
        let diff = student - teacher;
        match self {
            PointLoss::Huber => {
                if diff.abs() <= 1.0 {
                    (0.5 * diff * diff, diff)
                } else {
                    (diff.abs() - 0.5, sign(diff))
                }
            }
            PointLoss::L1 => (diff.abs(), sign(diff)),
            PointLoss::L2 => (diff * diff, 2.0 * diff),
        }
    }
}

impl fmt::Display for PointLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PointLoss::Huber => "huber",
            PointLoss::L1 => "l1",
            PointLoss::L2 => "l2",
        })
    }
}

impl FromStr for PointLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "huber" => Ok(PointLoss::Huber),
            "l1" => Ok(PointLoss::L1),
            "l2" => Ok(PointLoss::L2),
            other => Err(Error::Config(format!("unknown point loss `{other}`"))),
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Huber penalty with unit threshold.
pub fn huber(x: f64, y: f64) -> f64 {
    PointLoss::Huber.eval(x, y).0
}

fn check_square(s: &SimilarityMatrix, op: &'static str) -> Result<usize> {
    if s.rows() != s.cols() {
        return Err(Error::dims(op, format!("{}x{} is not square", s.rows(), s.cols())));
    }
    if s.rows() == 0 {
        return Err(Error::Empty(op));
    }
    Ok(s.rows())
}

fn check_same_shape(a: &SimilarityMatrix, b: &SimilarityMatrix, op: &'static str) -> Result<usize> {
    let n = check_square(a, op)?;
    if a.shape() != b.shape() {
        return Err(Error::dims(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(n)
}

fn finish(value: f64, n: usize, grad: Vec<f64>, op: &'static str) -> Result<LossValueAndGrad> {
    if !value.is_finite() {
        return Err(Error::NonFinite(op));
    }
    let grad = DenseMatrix::from_vec(n, n, grad).map_err(|_| Error::NonFinite(op))?;
    Ok(LossValueAndGrad { value, grad })
}

/// Bidirectional max-margin ranking loss with positives on the diagonal.
///
/// `(1/B) sum_i sum_{j != i} [max(0, s_ij - s_ii + m) + max(0, s_ji - s_ii + m)]`.
/// Hinges exactly at the kink contribute no gradient.
pub fn ranking_loss(s: &SimilarityMatrix, margin: f64) -> Result<LossValueAndGrad> {
    let b = check_square(s, "ranking_loss")?;
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument(format!("margin must be > 0, got {margin}")));
    }
    let scale = 1.0 / b as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; b * b];
    for i in 0..b {
        let pos = s.get(i, i);
        for j in 0..b {
            if j == i {
                continue;
            }
            let row_hinge = s.get(i, j) - pos + margin;
            if row_hinge > 0.0 {
                value += row_hinge;
                grad[i * b + j] += scale;
                grad[i * b + i] -= scale;
            }
            let col_hinge = s.get(j, i) - pos + margin;
            if col_hinge > 0.0 {
                value += col_hinge;
                grad[j * b + i] += scale;
                grad[i * b + i] -= scale;
            }
        }
    }
    finish(value * scale, b, grad, "ranking_loss")
}

fn masked_point_loss(
    s: &SimilarityMatrix,
    phi: &SimilarityMatrix,
    loss: PointLoss,
    mask: Option<&[bool]>,
    op: &'static str,
) -> Result<LossValueAndGrad> {
    let b = check_same_shape(s, phi, op)?;
    let scale = 1.0 / b as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; b * b];
    for (idx, (&sv, &tv)) in s.data().iter().zip(phi.data()).enumerate() {
        if mask.is_some_and(|m| !m[idx]) {
            continue;
        }
        let (v, g) = loss.eval(tv, sv);
        value += v;
        grad[idx] = g * scale;
    }
    finish(value * scale, b, grad, op)
}

/// Similarity-matrix distillation: `(1/B) sum_ij l(Phi(i,j), S(i,j))`.
pub fn distill_loss(s: &SimilarityMatrix, phi: &SimilarityMatrix, loss: PointLoss) -> Result<LossValueAndGrad> {
    masked_point_loss(s, phi, loss, None, "distill_loss")
}

/// Columns kept per row: the `k` largest teacher scores, ties to the lower column index.
pub fn top_k_mask(phi: &SimilarityMatrix, k: usize) -> Vec<bool> {
    let (rows, cols) = phi.shape();
    let mut mask = vec![false; rows * cols];
    for i in 0..rows {
        let row = phi.row(i);
        let mut order: Vec<usize> = (0..cols).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            mask[i * cols + j] = true;
        }
    }
    mask
}

/// Huber distillation restricted, per row, to the teacher's top-`k` columns.
pub fn rank_k_distill_loss(s: &SimilarityMatrix, phi: &SimilarityMatrix, k: usize) -> Result<LossValueAndGrad> {
    let b = check_same_shape(s, phi, "rank_k_distill_loss")?;
    if k == 0 || k > b {
        return Err(Error::InvalidArgument(format!("rank-k K={k} outside 1..={b}")));
    }
    let mask = top_k_mask(phi, k);
    masked_point_loss(s, phi, PointLoss::Huber, Some(&mask), "rank_k_distill_loss")
}

const DISTANCE_FLOOR: f64 = 1e-8;

/// Cross-modal distances in the weighted joint space, `sqrt(2 - 2 S(i,j))`.
///
/// With unit per-modality vectors and convex mixture weights this equals
/// `||F(x_i) - Q(t_j)||`. A small floor keeps the square root differentiable.
pub fn cross_modal_distances(s: &SimilarityMatrix) -> SimilarityMatrix {
    s.map(|v| ((2.0 - 2.0 * v).max(0.0) + DISTANCE_FLOOR).sqrt())
        .expect("distances of finite scores are finite")
}

/// Chains a gradient on [`cross_modal_distances`] back to the score grid.
pub fn distance_grad_to_scores(s: &SimilarityMatrix, grad_d: &SimilarityMatrix) -> Result<SimilarityMatrix> {
    let d = cross_modal_distances(s);
    let data = s
        .data()
        .iter()
        .zip(d.data())
        .zip(grad_d.data())
        .map(|((&sv, &dv), &g)| if 2.0 - 2.0 * sv > 0.0 { -g / dv } else { 0.0 })
        .collect();
    DenseMatrix::from_vec(s.rows(), s.cols(), data)
}

/// Mean-normalized Huber comparison of two distance sets, restricted to `mask`.
/// Returns the value and the gradient on the student distances.
fn normalized_distance_loss(
    student: &[f64],
    teacher: &[f64],
    mask: &dyn Fn(usize) -> bool,
    op: &'static str,
) -> Result<(f64, Vec<f64>)> {
    let idx: Vec<usize> = (0..student.len()).filter(|&i| mask(i)).collect();
    let count = idx.len() as f64;
    let mean_s = idx.iter().map(|&i| student[i]).sum::<f64>() / count;
    let mean_t = idx.iter().map(|&i| teacher[i]).sum::<f64>() / count;
    if !(mean_s > 0.0 && mean_t > 0.0) {
        return Err(Error::InvalidArgument(format!("{op}: zero mean distance")));
    }
    let mut value = 0.0;
    let mut g_norm = vec![0.0; student.len()];
    let mut weighted = 0.0;
    for &i in &idx {
        let (v, g) = PointLoss::Huber.eval(teacher[i] / mean_t, student[i] / mean_s);
        value += v / count;
        g_norm[i] = g / count;
        weighted += g_norm[i] * student[i];
    }
    // d(D_a / mean)/dD_b = delta_ab / mean - D_a / (count * mean^2)
    let grad = (0..student.len())
        .map(|i| {
            if mask(i) {
                g_norm[i] / mean_s - weighted / (count * mean_s * mean_s)
            } else {
                0.0
            }
        })
        .collect();
    Ok((value, grad))
}

/// Cross-modal pairwise-distance distillation. Each grid is divided by its own
/// mean distance, then compared entrywise with a mean Huber penalty.
pub fn pdist_loss(student: &SimilarityMatrix, teacher: &SimilarityMatrix) -> Result<LossValueAndGrad> {
    let b = check_same_shape(student, teacher, "pdist_loss")?;
    let (value, grad) = normalized_distance_loss(student.data(), teacher.data(), &|_| true, "pdist_loss")?;
    finish(value, b, grad, "pdist_loss")
}

fn pairwise_distances(e: &DenseMatrix<f64>) -> Vec<f64> {
    let n = e.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i * n + j] = e
                    .row(i)
                    .iter()
                    .zip(e.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
            }
        }
    }
    d
}

fn intra_side(student: &DenseMatrix<f64>, teacher: &DenseMatrix<f64>) -> Result<(f64, DenseMatrix<f64>)> {
    let n = student.rows();
    let ds = pairwise_distances(student);
    let dt = pairwise_distances(teacher);
    let (value, gd) = normalized_distance_loss(&ds, &dt, &|i| i / n != i % n, "relational_intra_loss")?;
    let w = student.cols();
    let mut grad = vec![0.0; n * w];
    for i in 0..n {
        for j in 0..n {
            let dij = ds[i * n + j];
            if i == j || dij == 0.0 {
                continue;
            }
            let g = gd[i * n + j] / dij;
            for c in 0..w {
                let diff = student.get(i, c) - student.get(j, c);
                grad[i * w + c] += g * diff;
                grad[j * w + c] -= g * diff;
            }
        }
    }
    Ok((value, DenseMatrix::from_vec(n, w, grad)?))
}

fn check_embeddings(student: &JointEmbeddings, teacher: &JointEmbeddings, op: &'static str) -> Result<()> {
    let shapes = [
        student.video.shape(),
        student.text.shape(),
        teacher.video.shape(),
        teacher.text.shape(),
    ];
    if shapes.iter().any(|&s| s != shapes[0]) {
        return Err(Error::dims(op, format!("embedding shapes {shapes:?}")));
    }
    Ok(())
}

/// Intra-video plus intra-text relational distillation on mean-normalized pairwise distances.
pub fn relational_intra_loss(
    student: &JointEmbeddings,
    teacher: &JointEmbeddings,
) -> Result<EmbeddingLossValueAndGrad> {
    if student.video.rows() != teacher.video.rows() || student.text.rows() != teacher.text.rows() {
        return Err(Error::dims("relational_intra_loss", "batch sizes differ"));
    }
    if student.video.rows() < 2 || student.text.rows() < 2 {
        return Err(Error::InvalidArgument("relational_intra_loss needs B >= 2".into()));
    }
    let (v_value, grad_video) = intra_side(&student.video, &teacher.video)?;
    let (t_value, grad_text) = intra_side(&student.text, &teacher.text)?;
    Ok(EmbeddingLossValueAndGrad {
        value: v_value + t_value,
        grad_video,
        grad_text,
    })
}

/// Direct regression of student joint embeddings onto the teacher's: per-element MSE over both sets.
pub fn embed_regress_loss(student: &JointEmbeddings, teacher: &JointEmbeddings) -> Result<EmbeddingLossValueAndGrad> {
    check_embeddings(student, teacher, "embed_regress_loss")?;
    let count = (student.video.data().len() + student.text.data().len()) as f64;
    if count == 0.0 {
        return Err(Error::Empty("embed_regress_loss"));
    }
    let mut value = 0.0;
    let mut side = |s: &DenseMatrix<f64>, t: &DenseMatrix<f64>| -> Result<DenseMatrix<f64>> {
        let grad = s
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| {
                let diff = a - b;
                value += diff * diff / count;
                2.0 * diff / count
            })
            .collect();
        DenseMatrix::from_vec(s.rows(), s.cols(), grad)
    };
    let grad_video = side(&student.video, &teacher.video)?;
    let grad_text = side(&student.text, &teacher.text)?;
    Ok(EmbeddingLossValueAndGrad {
        value,
        grad_video,
        grad_text,
    })
}

/// Ranking loss plus weighted Huber distillation; gradients add.
pub fn composite_loss(
    s: &SimilarityMatrix,
    phi: &SimilarityMatrix,
    margin: f64,
    distill_weight: f64,
) -> Result<LossValueAndGrad> {
    let rank = ranking_loss(s, margin)?;
    let distill = distill_loss(s, phi, PointLoss::Huber)?;
    let grad = rank
        .grad
        .data()
        .iter()
        .zip(distill.grad.data())
        .map(|(a, b)| a + distill_weight * b)
        .collect();
    finish(
        rank.value + distill_weight * distill.value,
        s.rows(),
        grad,
        "composite_loss",
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error, DEFAULT_FD_STEP};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[Vec<f64>]) -> SimilarityMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix<f64> {
        DenseMatrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn offset(a: &SimilarityMatrix, by: f64) -> SimilarityMatrix {
        a.map(|v| v + by).unwrap()
    }

    // Independent double-loop reference for the ranking loss value.
    fn ranking_oracle(s: &SimilarityMatrix, margin: f64) -> f64 {
        let b = s.rows();
        let mut total = 0.0;
        for i in 0..b {
            for j in 0..b {
                if i != j {
                    total += (s.get(i, j) - s.get(i, i) + margin).max(0.0);
                    total += (s.get(j, i) - s.get(i, i) + margin).max(0.0);
                }
            }
        }
        total / b as f64
    }

    #[test]
    fn ranking_closed_forms() {
        let sep = m(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let r = ranking_loss(&sep, 0.2).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad.data().iter().all(|&g| g == 0.0));
        let flat = m(&[vec![0.3, 0.3], vec![0.3, 0.3]]);
        assert!((ranking_loss(&flat, 0.2).unwrap().value - 0.4).abs() < 1e-15);
    }

    #[test]
    fn ranking_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = random(&mut rng, 5, 5);
        assert!((ranking_loss(&s, 0.2).unwrap().value - ranking_oracle(&s, 0.2)).abs() < 1e-12);
    }

    #[test]
    fn ranking_errors() {
        assert!(matches!(
            ranking_loss(&DenseMatrix::zeros(2, 3), 0.2),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(ranking_loss(&DenseMatrix::zeros(2, 2), 0.0).is_err());
    }

    #[test]
    fn huber_examples() {
        assert_eq!(huber(0.0, 0.0), 0.0);
        assert_eq!(huber(0.5, 0.0), 0.125);
        assert_eq!(huber(2.0, 0.0), 1.5);
        assert_eq!(huber(0.0, -2.0), 1.5);
    }

    #[test]
    fn distill_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = random(&mut rng, 2, 2);
        let same = distill_loss(&phi, &phi, PointLoss::Huber).unwrap();
        assert_eq!(same.value, 0.0);
        assert!(same.grad.data().iter().all(|&g| g == 0.0));
        let far = distill_loss(&offset(&phi, 2.0), &phi, PointLoss::Huber).unwrap();
        assert!((far.value - 3.0).abs() < 1e-12);
        let near = distill_loss(&offset(&phi, 0.5), &phi, PointLoss::Huber).unwrap();
        assert!((near.value - 0.25).abs() < 1e-12);
        let l1 = distill_loss(&offset(&phi, 0.5), &phi, PointLoss::L1).unwrap();
        assert!((l1.value - 1.0).abs() < 1e-12);
        let l2 = distill_loss(&offset(&phi, 0.5), &phi, PointLoss::L2).unwrap();
        assert!((l2.value - 0.5).abs() < 1e-12);
        assert!(distill_loss(&phi, &DenseMatrix::zeros(3, 3), PointLoss::Huber).is_err());
    }

    #[test]
    fn rank_k_full_equals_plain_distill() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random(&mut rng, 4, 4);
        let phi = random(&mut rng, 4, 4);
        assert_eq!(
            rank_k_distill_loss(&s, &phi, 4).unwrap(),
            distill_loss(&s, &phi, PointLoss::Huber).unwrap()
        );
    }

    #[test]
    fn rank_1_keeps_diagonal_when_teacher_peaks_there() {
        let phi = m(&[vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.1], vec![0.0, 0.3, 0.7]]);
        let s = m(&[vec![0.0, 0.5, 0.5], vec![0.5, 0.1, 0.5], vec![0.5, 0.5, 0.2]]);
        let r = rank_k_distill_loss(&s, &phi, 1).unwrap();
        let expected = (huber(0.9, 0.0) + huber(0.8, 0.1) + huber(0.7, 0.2)) / 3.0;
        assert!((r.value - expected).abs() < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r.grad.get(i, j) != 0.0, i == j);
            }
        }
    }

    #[test]
    fn rank_k_matches_masked_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let s = random(&mut rng, 4, 4);
        let phi = random(&mut rng, 4, 4);
        let mut total = 0.0;
        for i in 0..4 {
            // explicit top-2 by scanning for the two largest entries
            let row: Vec<f64> = (0..4).map(|j| phi.get(i, j)).collect();
            let first = (0..4).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            let second = (0..4).filter(|&j| j != first).fold(usize::MAX, |best, j| {
                if best == usize::MAX || row[j] > row[best] {
                    j
                } else {
                    best
                }
            });
            total += huber(phi.get(i, first), s.get(i, first)) + huber(phi.get(i, second), s.get(i, second));
        }
        let r = rank_k_distill_loss(&s, &phi, 2).unwrap();
        assert!((r.value - total / 4.0).abs() < 1e-12);
    }

    #[test]
    fn rank_k_ties_prefer_lower_index() {
        let phi = m(&[vec![0.5, 0.5, 0.5], vec![0.5, 0.5, 0.5], vec![0.1, 0.5, 0.5]]);
        let mask = top_k_mask(&phi, 1);
        assert_eq!(mask, vec![true, false, false, true, false, false, false, true, false]);
        assert!(rank_k_distill_loss(&phi, &phi, 0).is_err());
        assert!(rank_k_distill_loss(&phi, &phi, 4).is_err());
    }

    #[test]
    fn pdist_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let t = random(&mut rng, 3, 3).map(|v| v.abs() + 0.1).unwrap();
        assert_eq!(pdist_loss(&t, &t).unwrap().value, 0.0);
        let scaled = t.map(|v| 2.0 * v).unwrap();
        assert!(pdist_loss(&scaled, &t).unwrap().value.abs() < 1e-15);
        assert!(pdist_loss(&DenseMatrix::zeros(3, 3), &t).is_err());

        let s = random(&mut rng, 3, 3).map(|v| v.abs() + 0.1).unwrap();
        let mean = |a: &SimilarityMatrix| a.data().iter().sum::<f64>() / 9.0;
        let (ms, mt) = (mean(&s), mean(&t));
        let oracle: f64 = s
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| huber(b / mt, a / ms))
            .sum::<f64>()
            / 9.0;
        assert!((pdist_loss(&s, &t).unwrap().value - oracle).abs() < 1e-12);
    }

    fn embeddings(rng: &mut ChaCha8Rng, b: usize, w: usize) -> JointEmbeddings {
        JointEmbeddings {
            video: random(rng, b, w),
            text: random(rng, b, w),
        }
    }

    // Per-side oracle: normalized off-diagonal distances, mean Huber.
    fn intra_oracle(s: &DenseMatrix<f64>, t: &DenseMatrix<f64>) -> f64 {
        let n = s.rows();
        let dist = |e: &DenseMatrix<f64>, i: usize, j: usize| {
            (0..e.cols())
                .map(|c| (e.get(i, c) - e.get(j, c)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .collect();
        let ms = pairs.iter().map(|&(i, j)| dist(s, i, j)).sum::<f64>() / pairs.len() as f64;
        let mt = pairs.iter().map(|&(i, j)| dist(t, i, j)).sum::<f64>() / pairs.len() as f64;
        pairs
            .iter()
            .map(|&(i, j)| huber(dist(t, i, j) / mt, dist(s, i, j) / ms))
            .sum::<f64>()
            / pairs.len() as f64
    }

    #[test]
    fn relational_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let a = embeddings(&mut rng, 3, 4);
        assert_eq!(relational_intra_loss(&a, &a).unwrap().value, 0.0);
        let b = embeddings(&mut rng, 3, 4);
        let r = relational_intra_loss(&a, &b).unwrap();
        let oracle = intra_oracle(&a.video, &b.video) + intra_oracle(&a.text, &b.text);
        assert!((r.value - oracle).abs() < 1e-12);

        // permuting student texts leaves the video-side gradient alone
        let permuted = JointEmbeddings {
            video: a.video.clone(),
            text: a.text.select_rows(&[2, 0, 1]),
        };
        let rp = relational_intra_loss(&permuted, &b).unwrap();
        assert_eq!(rp.grad_video, r.grad_video);

        let one = embeddings(&mut rng, 1, 4);
        assert!(relational_intra_loss(&one, &one).is_err());
    }

    #[test]
    fn embed_regress_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let t = embeddings(&mut rng, 3, 4);
        assert_eq!(embed_regress_loss(&t, &t).unwrap().value, 0.0);
        let s = JointEmbeddings {
            video: offset(&t.video, 1.0),
            text: offset(&t.text, 1.0),
        };
        assert!((embed_regress_loss(&s, &t).unwrap().value - 1.0).abs() < 1e-12);
        let r = embeddings(&mut rng, 3, 4);
        let oracle = (r
            .video
            .data()
            .iter()
            .zip(t.video.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            + r.text
                .data()
                .iter()
                .zip(t.text.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>())
            / 24.0;
        assert!((embed_regress_loss(&r, &t).unwrap().value - oracle).abs() < 1e-12);
        let narrow = embeddings(&mut rng, 3, 2);
        assert!(embed_regress_loss(&narrow, &t).is_err());
    }

    #[test]
    fn composite_sums_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let s = random(&mut rng, 4, 4);
        let phi = random(&mut rng, 4, 4);
        let rank = ranking_loss(&s, 0.2).unwrap();
        assert_eq!(composite_loss(&s, &phi, 0.2, 0.0).unwrap().value, rank.value);
        assert_eq!(composite_loss(&s, &s, 0.2, 1.0).unwrap(), rank);
        let expected = ranking_oracle(&s, 0.2)
            + 0.7 * s.data().iter().zip(phi.data()).map(|(a, b)| huber(*b, *a)).sum::<f64>() / 4.0;
        assert!((composite_loss(&s, &phi, 0.2, 0.7).unwrap().value - expected).abs() < 1e-12);
    }

    #[test]
    fn distance_chain_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let s = random(&mut rng, 3, 3).map(|v| 0.8 * v).unwrap();
        let t = random(&mut rng, 3, 3).map(|v| v.abs() + 0.2).unwrap();
        let f = |p: &[f64]| {
            let sm = DenseMatrix::from_vec(3, 3, p.to_vec()).unwrap();
            pdist_loss(&cross_modal_distances(&sm), &t).unwrap().value
        };
        let d = cross_modal_distances(&s);
        let g = distance_grad_to_scores(&s, &pdist_loss(&d, &t).unwrap().grad).unwrap();
        let numeric = finite_diff_grad(f, s.data(), DEFAULT_FD_STEP).unwrap();
        for (a, n) in g.data().iter().zip(&numeric) {
            assert!(relative_error(*a, *n, 1e-2) < 1e-4, "{a} vs {n}");
        }
    }

    proptest! {
        #[test]
        fn ranking_is_shift_invariant(seed in any::<u64>(), b in 1usize..6, shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random(&mut rng, b, b);
            let a = ranking_loss(&s, 0.2).unwrap();
            let c = ranking_loss(&offset(&s, shift), 0.2).unwrap();
            prop_assert!((a.value - c.value).abs() < 1e-9);
            prop_assert!(a.value >= 0.0);
        }

        #[test]
        fn ranking_zero_iff_margins_hold(seed in any::<u64>(), b in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random(&mut rng, b, b);
            let satisfied = (0..b).all(|i| (0..b).filter(|&j| j != i).all(|j| {
                s.get(i, j) - s.get(i, i) + 0.2 <= 0.0 && s.get(j, i) - s.get(i, i) + 0.2 <= 0.0
            }));
            prop_assert_eq!(ranking_loss(&s, 0.2).unwrap().value == 0.0, satisfied);
        }

        #[test]
        fn huber_gradient_zero_at_match(seed in any::<u64>(), b in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random(&mut rng, b, b);
            let r = distill_loss(&s, &s, PointLoss::Huber).unwrap();
            prop_assert!(r.grad.data().iter().all(|&g| g == 0.0));
        }

        #[test]
        fn relational_ignores_teacher_scale(seed in any::<u64>(), scale in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = embeddings(&mut rng, 4, 3);
            let t = embeddings(&mut rng, 4, 3);
            let scaled = JointEmbeddings { video: t.video.map(|v| v * scale).unwrap(), text: t.text.map(|v| v * scale).unwrap() };
            let a = relational_intra_loss(&s, &t).unwrap().value;
            let b = relational_intra_loss(&s, &scaled).unwrap().value;
            prop_assert!((a - b).abs() < 1e-9);

            let sd = random(&mut rng, 4, 4).map(|v| v.abs() + 0.1).unwrap();
            let td = random(&mut rng, 4, 4).map(|v| v.abs() + 0.1).unwrap();
            let a = pdist_loss(&sd, &td).unwrap().value;
            let b = pdist_loss(&sd, &td.map(|v| v * scale).unwrap()).unwrap().value;
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
