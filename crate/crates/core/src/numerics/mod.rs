//! Dense tensors, a reverse-mode computation record, and the primitives the
//! language models are assembled from.

mod graph;
mod gradcheck;
mod lstm;
pub mod rng;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, relative_error};
pub use graph::{log_sum_exp, sigmoid, Gradients, Graph, Var};
pub use lstm::{lstm_cell, LstmParams, LstmVars};
pub(crate) use lstm::set_forget_bias;
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Numerically stable softmax. Entries equal to `-inf` are treated as masked
/// and receive exactly zero probability.
pub fn softmax_row<T: Scalar>(x: &[T]) -> Result<Vec<T>> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return Err(Error::InvalidArgument(
            "softmax over a row with every entry masked".into(),
        ));
    }
    let mut out: Vec<T> = x
        .iter()
        .map(|&z| if z == T::neg_infinity() { T::zero() } else { (z - max).exp() })
        .collect();
    let total: T = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v = *v / total);
    Ok(out)
}

/// `-log softmax(logits)[target]` and its gradient `softmax(logits) - onehot(target)`.
pub fn cross_entropy<T: Scalar>(logits: &[T], target: usize) -> Result<(T, Vec<T>)> {
    if target >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {} classes",
            logits.len()
        )));
    }
    let lse = log_sum_exp(logits);
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - lse).exp()).collect();
    grad[target] = grad[target] - T::one();
    Ok((lse - logits[target], grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_cases() {
        let u = softmax_row(&[0.0f64, 0.0, 0.0]).unwrap();
        u.iter().for_each(|&p| assert!((p - 1.0 / 3.0).abs() < 1e-15));

        let big = softmax_row(&[1e4f64, 0.0]).unwrap();
        assert!(big.iter().all(|p| p.is_finite()));
        assert!((big[0] - 1.0).abs() < 1e-12 && big[1] < 1e-12);

        let logs = softmax_row(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        for (p, want) in logs.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((p - want).abs() < 1e-12);
        }

        let masked = softmax_row(&[1.0f64, f64::NEG_INFINITY, 1.0]).unwrap();
        assert_eq!(masked[1], 0.0);
        assert!((masked[0] - 0.5).abs() < 1e-15);

        assert!(softmax_row(&[f64::NEG_INFINITY; 2]).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let (loss, grad) = cross_entropy(&[0.0f64; 10], 3).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((grad.iter().sum::<f64>()).abs() < 1e-12);

        let mut logits = vec![0.0f64; 5];
        logits[2] = 1e4;
        let (loss, _) = cross_entropy(&logits, 2).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-12);

        assert!(cross_entropy(&[0.0f64; 4], 4).is_err());
    }
}
