//! Central finite differences for gradient verification.
//!
//! The oracle only ever calls the forward evaluation closure, so it stays
//! independent of the backward pass it is used to check.

use crate::real::Real;

/// Central difference d f / d x_i at the given coordinates.
///
/// `f` evaluates the full forward pass from a flat parameter vector.
pub fn central_difference<T: Real>(
    f: &mut dyn FnMut(&[T]) -> f64,
    x: &[T],
    coords: &[usize],
    h: f64,
) -> Vec<f64> {
    let mut xs = x.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = xs[i];
        xs[i] = orig + T::of(h);
        let fp = f(&xs);
        xs[i] = orig - T::of(h);
        let fm = f(&xs);
        xs[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Relative error with an absolute floor for near-zero references.
pub fn relative_error(got: f64, want: f64) -> f64 {
    let denom = want.abs().max(got.abs());
    if denom < 1e-12 {
        (got - want).abs()
    } else {
        (got - want).abs() / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{Graph, Tensor};

    #[test]
    fn normalize_mse_gradient_matches_finite_differences() {
        // loss = || normalize(x) - t ||^2 with fixed random-ish x, t.
        let x0 = vec![0.3, -1.2, 0.8, 0.05];
        let t = vec![0.5, 0.5, -0.5, 0.5];

        let mut forward = |xs: &[f64]| -> f64 {
            let mut g = Graph::<f64>::new();
            let x = g.constant(Tensor::from_rows(1, 4, xs.to_vec()).unwrap());
            let tv = g.constant(Tensor::from_rows(1, 4, t.clone()).unwrap());
            let n = g.l2_normalize_rows(x, 1e-12).unwrap();
            let loss = g.squared_error(n, tv).unwrap();
            g.value(loss).item()
        };

        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_rows(1, 4, x0.clone()).unwrap());
        let tv = g.constant(Tensor::from_rows(1, 4, t.clone()).unwrap());
        let n = g.l2_normalize_rows(x, 1e-12).unwrap();
        let loss = g.squared_error(n, tv).unwrap();
        g.backward(loss).unwrap();
        let analytic = g.grad(x);

        let fd = central_difference(&mut forward, &x0, &[0, 1, 2, 3], 1e-6);
        for (i, &want) in fd.iter().enumerate() {
            let got = analytic.data()[i];
            assert!(
                relative_error(got, want) < 1e-6,
                "coord {i}: analytic {got} vs fd {want}"
            );
        }
    }
}
