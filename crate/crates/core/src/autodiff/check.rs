//! Central finite differences for verifying analytic gradients.

use crate::error::Result;
use crate::matrix::Matrix;

/// `∂f/∂x` by central differences with step `h`, one coordinate at a time.
pub fn numeric_gradient<F>(f: F, x: &Matrix, h: f64) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Result<f64>,
{
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let up = f(&probe)?;
        probe.as_mut_slice()[k] = orig - h;
        let down = f(&probe)?;
        probe.as_mut_slice()[k] = orig;
        grad.as_mut_slice()[k] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, or 0 when both are (numerically) zero.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale < 1e-300 {
        return 0.0;
    }
    a.zip_map(b, |x, y| x - y).norm() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_derivative() {
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5]]);
        let g = numeric_gradient(|m| Ok(m.as_slice().iter().map(|v| v * v * v).sum()), &x, 1e-4).unwrap();
        let exact = x.map(|v| 3.0 * v * v);
        assert!(relative_error(&g, &exact) < 1e-7);
        assert_eq!(relative_error(&Matrix::zeros(1, 1), &Matrix::zeros(1, 1)), 0.0);
    }
}
