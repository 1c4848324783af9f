use super::tape::huber_elem;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Mean elementwise Huber loss of `pred - target`.
pub fn huber(pred: &Tensor, target: &Tensor, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::param(format!("huber delta must be positive, got {delta}")));
    }
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!("huber: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    let s: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| huber_elem(p - t, delta)).sum();
    Ok(s / pred.len() as f64)
}

/// Mean squared error over all elements.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!("mse: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    let s: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(e: f64, d: f64) -> f64 {
        huber(&Tensor::scalar(e), &Tensor::scalar(0.0), d).unwrap()
    }

    #[test]
    fn branches() {
        assert_eq!(h(0.0, 1.0), 0.0);
        assert_eq!(h(0.5, 1.0), 0.125);
        assert_eq!(h(2.0, 1.0), 1.5);
        assert_eq!(h(-2.0, 1.0), 1.5);
    }

    #[test]
    fn non_positive_delta_rejected() {
        assert!(matches!(
            huber(&Tensor::scalar(1.0), &Tensor::scalar(0.0), 0.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn continuous_and_smooth_at_the_knot() {
        for &d in &[0.3, 1.0, 2.5] {
            let left = h(d - 1e-12, d);
            let right = h(d + 1e-12, d);
            assert!((left - right).abs() < 1e-9);
            // one-sided slopes from the two closed forms at |e| = delta
            let quad_slope = d;
            let lin_slope = d;
            let fd_left = (h(d, d) - h(d - 1e-6, d)) / 1e-6;
            let fd_right = (h(d + 1e-6, d) - h(d, d)) / 1e-6;
            assert!((quad_slope - lin_slope).abs() < 1e-9);
            assert!((fd_left - fd_right).abs() < 1e-5);
        }
    }
}
