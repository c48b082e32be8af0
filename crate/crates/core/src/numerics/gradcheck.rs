//! Finite-difference gradient oracle and analytic-vs-numeric comparison.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function of a tensor.
///
/// Each coordinate is probed with `(f(x + h·e_i) − f(x − h·e_i)) / (2h)`.
pub fn finite_diff_grad<T, F>(mut f: F, x: &Tensor<T>, h: T) -> Result<Tensor<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    if h <= T::zero() {
        return Err(Error::Config(format!("finite_diff_grad: h must be > 0, got {h}")));
    }
    let two_h = h + h;
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        let slope = (plus - minus) / two_h;
        if !slope.is_finite() {
            return Err(Error::Numeric(format!(
                "finite_diff_grad: non-finite difference quotient at coordinate {i}"
            )));
        }
        grad.push(slope);
    }
    Tensor::from_vec(x.shape().to_vec(), grad)
}

/// Outcome of comparing an analytic gradient against a numeric one.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probe_count: usize,
    pub passed: bool,
}

/// Compares gradients coordinate-wise with the symmetric relative error
/// `|a−n| / max(1e-12, |a|+|n|)`.
pub fn grad_check<T: Scalar>(
    analytic: &Tensor<T>,
    numeric: &Tensor<T>,
    tol: f64,
) -> Result<GradCheckReport> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::shape(
            "grad_check",
            format!("{:?}", analytic.shape()),
            format!("{:?}", numeric.shape()),
        ));
    }
    let mut max_rel_error = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data().iter()) {
        let a = a.to_f64().unwrap_or(f64::NAN);
        let n = n.to_f64().unwrap_or(f64::NAN);
        let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-12);
        if rel > max_rel_error {
            max_rel_error = rel;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        probe_count: analytic.numel(),
        passed: max_rel_error < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dot;

    #[test]
    fn gradient_of_squared_norm() {
        let x = Tensor::from_vec(vec![2], vec![1.0f64, 2.0]).unwrap();
        let grad = finite_diff_grad(|v| dot(v, v), &x, 1e-5).unwrap();
        assert!((grad.data()[0] - 2.0).abs() < 1e-8);
        assert!((grad.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let x = Tensor::from_vec(vec![3], vec![0.5f64, -1.0, 2.0]).unwrap();
        let grad = finite_diff_grad(|_| Ok(7.0), &x, 1e-5).unwrap();
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_positive_h_rejected() {
        let x = Tensor::from_vec(vec![1], vec![1.0f64]).unwrap();
        assert!(finite_diff_grad(|v| Ok(v.data()[0]), &x, 0.0).is_err());
    }

    #[test]
    fn grad_check_identical_passes_with_zero_error() {
        let v = Tensor::from_vec(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let report = grad_check(&v, &v, 1e-4).unwrap();
        assert!(report.passed);
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.probe_count, 3);
    }

    #[test]
    fn grad_check_detects_offset() {
        let v = Tensor::from_vec(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let off = v.map(|x| x + 1e-2).unwrap();
        assert!(!grad_check(&v, &off, 1e-4).unwrap().passed);
    }

    #[test]
    fn grad_check_rejects_shape_mismatch() {
        let a = Tensor::from_vec(vec![2], vec![1.0f64, 2.0]).unwrap();
        let b = Tensor::from_vec(vec![3], vec![1.0f64, 2.0, 3.0]).unwrap();
        assert!(grad_check(&a, &b, 1e-4).is_err());
    }
}
