use super::Tensor;
use crate::{Error, Result};

/// Central-difference gradient of `f` at `theta`.
///
/// Each coordinate is perturbed by ±`eps` in f32; the quotient uses the
/// actually representable step so rounding of `θ ± ε` does not bias the
/// estimate. `f` may evaluate in any precision and returns f64.
pub fn finite_difference_gradient<F>(mut f: F, theta: &Tensor, eps: f32) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidHyperparameter(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut probe = theta.clone();
    let mut grad = Vec::with_capacity(theta.numel());
    for i in 0..theta.numel() {
        let x = theta.data()[i];
        let (hi, lo) = (x + eps, x - eps);
        probe.data_mut()[i] = hi;
        let f_hi = f(&probe)?;
        probe.data_mut()[i] = lo;
        let f_lo = f(&probe)?;
        probe.data_mut()[i] = x;
        grad.push(((f_hi - f_lo) / (hi as f64 - lo as f64)) as f32);
    }
    Tensor::new(theta.shape().to_vec(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_quadratics() {
        let x = Tensor::new(vec![1], vec![3.0]).unwrap();
        let g = finite_difference_gradient(|t| Ok((t.data()[0] as f64).powi(2)), &x, 1e-3).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6, "{}", g.data()[0]);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.3]).unwrap();
        let g = finite_difference_gradient(|_| Ok(4.2), &x, 1e-3).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::scalar(1.0);
        assert!(finite_difference_gradient(|_| Ok(0.0), &x, 0.0).is_err());
    }
}
