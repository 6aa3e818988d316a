use crate::numerics::tensor::Tensor;

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares analytic gradients against central differences.
///
/// `f` evaluates the scalar function at the given parameters and returns its
/// value together with the analytic gradient of every parameter tensor.
/// Returns the maximum relative error over all coordinates.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> f64
where
    F: Fn(&[Tensor<f64>]) -> (f64, Vec<Vec<f64>>),
{
    let (_, analytic) = f(params);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut worst = 0.0f64;
    for (p, grads) in analytic.iter().enumerate() {
        for i in 0..work[p].len() {
            let orig = work[p].values()[i];
            work[p].values_mut()[i] = orig + eps;
            let (plus, _) = f(&work);
            work[p].values_mut()[i] = orig - eps;
            let (minus, _) = f(&work);
            work[p].values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grads[i], numeric));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let theta = [Tensor::vector(vec![3.0])];
        let err = grad_check(
            |p| {
                let x = p[0].values()[0];
                (x * x, vec![vec![2.0 * x]])
            },
            &theta,
            1e-5,
        );
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_is_exact() {
        let theta = [Tensor::vector(vec![1.0, -2.0])];
        let err = grad_check(|_| (4.2, vec![vec![0.0, 0.0]]), &theta, 1e-5);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let theta = [Tensor::vector(vec![1.5])];
        let err = grad_check(
            |p| {
                let x = p[0].values()[0];
                (x * x * x, vec![vec![2.0 * x]])
            },
            &theta,
            1e-5,
        );
        assert!(err > 0.1);
    }
}
