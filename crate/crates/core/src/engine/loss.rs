use super::error::{EngineError, Result};
use super::real::Real;
use super::tape::PROB_FLOOR;
use super::tensor::Tensor;

/// Max-subtracted softmax of a finite slice.
pub(crate) fn softmax_slice<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn softmax<T: Real>(z: &Tensor<T>) -> Result<Tensor<T>> {
    if !z.is_finite() {
        return Err(EngineError::NumericInput { op: "softmax" });
    }
    Tensor::new(z.shape().to_vec(), softmax_slice(z.data()))
}

/// `-ln q[label]` with `q` clamped below at [`PROB_FLOOR`].
pub fn cross_entropy<T: Real>(q: &Tensor<T>, label: usize) -> Result<T> {
    if label >= q.len() {
        return Err(EngineError::Index {
            index: label,
            len: q.len(),
        });
    }
    if !q.is_finite() {
        return Err(EngineError::NumericInput { op: "cross_entropy" });
    }
    Ok(-q.data()[label].max(T::from_f64(PROB_FLOOR)).ln())
}
