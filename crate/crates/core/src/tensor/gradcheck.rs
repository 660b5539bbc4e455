//! Finite-difference gradient checking.

use super::{Tape, Tensor, TensorError, VarId};

/// Worst relative discrepancy between two gradient estimates, entrywise
/// `|a - n| / (|a| + |n| + 1e-12)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs() + 1e-12))
        .fold(0.0, f64::max)
}

/// Compare the tape gradient of a scalar-valued computation `f` with central
/// finite differences around `x`, returning the max relative error.
///
/// `f` receives a fresh tape and the leaf id of `x` and must return the id of
/// a scalar node. The computation should be twice differentiable at `x`;
/// callers keep inputs away from kinks.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, VarId) -> Result<VarId, TensorError>,
{
    let mut tape = Tape::new();
    let id = tape.leaf(x.clone().with_grad());
    let loss = f(&mut tape, id)?;
    tape.backward(loss)?;
    let analytic = tape
        .grad(id)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |data: Vec<f64>| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let id = tape.leaf(Tensor::new(x.shape().to_vec(), data)?);
        let loss = f(&mut tape, id)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut numeric = vec![0.0; x.numel()];
    for i in 0..x.numel() {
        let mut plus = x.data().to_vec();
        plus[i] += eps;
        let mut minus = x.data().to_vec();
        minus[i] -= eps;
        numeric[i] = (eval(plus)? - eval(minus)?) / (2.0 * eps);
    }
    Ok(max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let x = Tensor::new(vec![6], vec![0.3, -1.2, 0.9, 2.0, -0.4, 0.05]).unwrap();
        let err = grad_check(
            |tape, x| {
                let y = tape.mul_scalar(x, 3.25)?;
                tape.sum_all(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-9, "linear gradient error {err}");
    }

    #[test]
    fn conv_sigmoid_composite_within_tolerance() {
        let data: Vec<f64> = (0..18).map(|i| ((i * 7 % 13) as f64 - 6.0) / 5.0).collect();
        let x = Tensor::new(vec![1, 2, 3, 3], data).unwrap();
        let kdata: Vec<f64> = (0..18).map(|i| ((i * 5 % 11) as f64 - 5.0) / 9.0).collect();
        let err = grad_check(
            |tape, x| {
                let k = tape.leaf(Tensor::new(vec![1, 2, 3, 3], kdata.clone())?);
                let c = tape.conv2d(x, k, None, 1, 1)?;
                let s = tape.sigmoid(c)?;
                tape.sum_all(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "conv+sigmoid gradient error {err}");
    }

    #[test]
    fn doubled_gradient_is_flagged_near_one_third() {
        // If the analytic gradient is exactly twice the true one, the relative
        // error |2g - g| / (|2g| + |g|) is 1/3 for every entry.
        let x = Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let mut tape = Tape::new();
        let id = tape.leaf(x.clone().with_grad());
        let y = tape.mul(id, id).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        let truth = tape.grad(id).unwrap();
        let doubled: Vec<f64> = truth.data().iter().map(|g| 2.0 * g).collect();
        let err = max_relative_error(&doubled, truth.data());
        assert!((err - 1.0 / 3.0).abs() < 1e-12, "expected ~1/3, got {err}");
    }
}
