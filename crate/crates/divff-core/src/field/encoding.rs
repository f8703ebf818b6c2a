//! Sinusoidal input encoding: [sin(2^k pi x), cos(2^k pi x)] per coordinate
//! for k = 0..L, giving 2L values per input dimension.

use crate::numkit::Tensor;
use crate::real::Real;

pub fn encoding_dim(input_dim: usize, frequencies: usize) -> usize {
    input_dim * 2 * frequencies
}

fn encode_into<T: Real>(out: &mut Vec<T>, value: f64, frequencies: usize) {
    let mut freq = std::f64::consts::PI;
    for _ in 0..frequencies {
        let a = freq * value;
        out.push(T::of(a.sin()));
        out.push(T::of(a.cos()));
        freq *= 2.0;
    }
}

/// Encode N points (world or camera space) into an [N, 6L] tensor.
pub fn encode_positions<T: Real>(points: &[[f64; 3]], frequencies: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(points.len() * 6 * frequencies);
    for p in points {
        for &c in p {
            encode_into(&mut data, c, frequencies);
        }
    }
    Tensor::new(&[points.len(), 6 * frequencies], data).expect("encoding shape")
}

/// Encode N unit directions into an [N, 6L] tensor.
pub fn encode_directions<T: Real>(dirs: &[[f64; 3]], frequencies: usize) -> Tensor<T> {
    encode_positions(dirs, frequencies)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions_match_contract() {
        assert_eq!(encoding_dim(3, 10), 60);
        assert_eq!(encoding_dim(3, 4), 24);
        let t: Tensor<f64> = encode_positions(&[[0.5, 0.0, -1.0]], 4);
        assert_eq!(t.shape(), &[1, 24]);
    }

    #[test]
    fn zero_encodes_to_alternating_sin_cos() {
        let t: Tensor<f64> = encode_positions(&[[0.0, 0.0, 0.0]], 2);
        for pair in t.data().chunks_exact(2) {
            assert_eq!(pair[0], 0.0);
            assert_eq!(pair[1], 1.0);
        }
    }

    #[test]
    fn frequencies_double() {
        let x = 0.3;
        let t: Tensor<f64> = encode_positions(&[[x, 0.0, 0.0]], 3);
        let pi = std::f64::consts::PI;
        assert!((t.data()[0] - (pi * x).sin()).abs() < 1e-15);
        assert!((t.data()[2] - (2.0 * pi * x).sin()).abs() < 1e-15);
        assert!((t.data()[4] - (4.0 * pi * x).sin()).abs() < 1e-15);
    }
}
