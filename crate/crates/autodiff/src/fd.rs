//! Central finite differences, the oracle every adjoint is checked against.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate of `x`.
pub fn finite_difference_grad(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    if !(h > 0.0) {
        return Err(TensorError::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(TensorError::NonFinite(format!(
                "objective at coordinate {i}"
            )));
        }
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// `||a - b|| / max(||a||, ||b||)`, or the absolute difference norm when both
/// are tiny.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a.norm().max(b.norm());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g =
            finite_difference_grad(|x| x.item() * x.item(), &Tensor::scalar(3.0), 1e-5).unwrap();
        assert!((g.item() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn sum_gives_ones() {
        let x = Tensor::row(vec![0.3, -1.0, 7.5]);
        let g = finite_difference_grad(Tensor::sum, &x, 1e-5).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_objective_errors() {
        let x = Tensor::scalar(0.0);
        assert!(finite_difference_grad(|x| x.item().ln(), &x, 1e-5).is_err());
        assert!(finite_difference_grad(|x| x.item(), &x, 0.0).is_err());
    }
}
