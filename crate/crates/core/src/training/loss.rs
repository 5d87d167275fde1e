use crate::error::{Error, Result};
use crate::numerics::{log_softmax_rows, softmax_rows, Matrix, Real, Tensor2D};

/// What the logits are trained against.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a, T> {
    /// Hard-label cross-entropy.
    CrossEntropy { labels: &'a [u32] },
    /// Soft cross-entropy against teacher logits, temperature 1.
    Distill { teacher_logits: &'a Matrix<T> },
}

impl<T: Real> Objective<'_, T> {
    /// Mean loss over the batch and its gradient with respect to `logits`.
    pub fn loss_and_grad(&self, logits: &Matrix<T>) -> Result<(T, Matrix<T>)> {
        match self {
            Objective::CrossEntropy { labels } => cross_entropy(logits, labels),
            Objective::Distill { teacher_logits } => soft_cross_entropy(logits, teacher_logits),
        }
    }

    pub fn batch_len(&self) -> usize {
        match self {
            Objective::CrossEntropy { labels } => labels.len(),
            Objective::Distill { teacher_logits } => teacher_logits.rows(),
        }
    }
}

/// Mean `-log p[label]` and `(softmax - onehot) / batch`.
pub fn cross_entropy<T: Real>(logits: &Matrix<T>, labels: &[u32]) -> Result<(T, Matrix<T>)> {
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows of logits",
            labels.len(),
            logits.rows()
        )));
    }
    let classes = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let n = T::of(logits.rows() as f64);
    let logp = log_softmax_rows(logits);
    let mut grad = softmax_rows(logits);
    let mut loss = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        let l = label as usize;
        loss -= logp.get(r, l);
        let g = grad.row_mut(r);
        g[l] -= T::one();
        for v in g.iter_mut() {
            *v /= n;
        }
    }
    Ok((loss / n, grad))
}

/// Mean `-sum_c softmax(teacher)_c * log_softmax(student)_c` and its gradient
/// `(softmax(student) - softmax(teacher)) / batch`.
pub fn soft_cross_entropy<T: Real>(
    student: &Matrix<T>,
    teacher: &Matrix<T>,
) -> Result<(T, Matrix<T>)> {
    if student.shape() != teacher.shape() {
        return Err(Error::Shape(format!(
            "student logits {:?} vs teacher logits {:?}",
            student.shape(),
            teacher.shape()
        )));
    }
    let n = T::of(student.rows() as f64);
    let pt = softmax_rows(teacher);
    let logq = log_softmax_rows(student);
    let mut grad = softmax_rows(student);
    let mut loss = T::zero();
    for r in 0..student.rows() {
        for c in 0..student.cols() {
            loss -= pt.get(r, c) * logq.get(r, c);
        }
        for (g, &p) in grad.row_mut(r).iter_mut().zip(pt.row(r)) {
            *g = (*g - p) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Distillation loss between student and teacher logits (temperature 1),
/// averaged over rows.
pub fn kd_loss(student_logits: &Tensor2D, teacher_logits: &Tensor2D) -> Result<f32> {
    soft_cross_entropy(student_logits, teacher_logits).map(|(l, _)| l)
}
