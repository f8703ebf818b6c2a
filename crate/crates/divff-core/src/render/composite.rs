//! Alpha compositing of the summed three-stream field along one ray, plus
//! top-K feature compositing.
//!
//! Per sample k: sigma_k = sum of enabled stream densities; alpha_k =
//! 1 - exp(-sigma_k * delta_k); w_k = T_k * alpha_k with T the running
//! transmittance. Colors and uncertainties mix per sample in proportion to
//! each stream's density share. Weights plus residual transmittance sum to 1
//! by construction.

use crate::real::Real;

/// Composited ray: color, uncertainty, depth, per-stream mass and the raw
/// weight profile.
#[derive(Clone, Debug)]
pub struct CompositeOutput<T> {
    pub color: [T; 3],
    pub beta: T,
    pub depth: T,
    /// Per-sample compositing weights.
    pub weights: Vec<T>,
    /// Transmittance left after the last sample.
    pub residual: T,
    /// Weight mass attributed to each stream (persistent, dynamic, actor).
    pub stream_mass: [T; 3],
}

/// Composite one ray from per-stream per-sample outputs. Disabled streams
/// simply pass empty slices. `beta` of streams without an uncertainty head
/// should be filled with the floor value by the caller.
///
/// `sigma[s]`, `color[s]` (len 3N), `beta[s]` are per-stream arrays over the
/// same N sorted depths.
pub fn composite<T: Real>(
    depths: &[f64],
    far: f64,
    sigma: [&[T]; 3],
    color: [&[T]; 3],
    beta: [&[T]; 3],
    enabled: [bool; 3],
) -> CompositeOutput<T> {
    let n = depths.len();
    let mut weights = Vec::with_capacity(n);
    let mut trans = T::one();
    let mut out_color = [T::zero(); 3];
    let mut out_beta = T::zero();
    let mut depth = T::zero();
    let mut stream_mass = [T::zero(); 3];

    for k in 0..n {
        let delta = if k + 1 < n { depths[k + 1] - depths[k] } else { far - depths[k] };
        let delta = T::of(delta.max(0.0));
        let mut sigma_tot = T::zero();
        for s in 0..3 {
            if enabled[s] && !sigma[s].is_empty() {
                sigma_tot += sigma[s][k];
            }
        }
        if sigma_tot <= T::zero() {
            weights.push(T::zero());
            continue;
        }
        let alpha = T::one() - (-sigma_tot * delta).exp();
        let w = trans * alpha;
        trans = trans * (T::one() - alpha);
        weights.push(w);
        depth += w * T::of(depths[k]);

        let inv = T::one() / sigma_tot;
        for s in 0..3 {
            if !enabled[s] || sigma[s].is_empty() {
                continue;
            }
            let share = sigma[s][k] * inv;
            if share > T::zero() {
                let ws = w * share;
                for c in 0..3 {
                    out_color[c] += ws * color[s][3 * k + c];
                }
                out_beta += ws * beta[s][k];
                stream_mass[s] += ws;
            }
        }
    }
    depth += trans * T::of(far);

    CompositeOutput {
        color: out_color,
        beta: out_beta,
        depth,
        weights,
        residual: trans,
        stream_mass,
    }
}

/// Blend features over the strongest samples: take the `top_k` samples by
/// weight (positive weights only), renormalize the selected weights, mix
/// per-stream features by density share, sum and L2-normalize.
///
/// Returns unit vectors, or zero vectors for rays with no positive weight.
/// Also returns the selected sample indices.
#[allow(clippy::too_many_arguments)]
pub fn composite_features<T: Real>(
    weights: &[T],
    sigma: [&[T]; 3],
    phi: [&[T]; 3],
    psi: [&[T]; 3],
    phi_dim: usize,
    psi_dim: usize,
    enabled: [bool; 3],
    top_k: usize,
) -> (Vec<T>, Vec<T>, Vec<usize>) {
    let selected = top_weight_indices(weights, top_k);
    let mut phi_acc = vec![T::zero(); phi_dim];
    let mut psi_acc = vec![T::zero(); psi_dim];
    if selected.is_empty() {
        return (phi_acc, psi_acc, selected);
    }
    let wsum: T = selected.iter().map(|&k| weights[k]).sum();
    if wsum <= T::zero() {
        return (phi_acc, psi_acc, selected);
    }

    for &k in &selected {
        let mut sigma_tot = T::zero();
        for s in 0..3 {
            if enabled[s] && !sigma[s].is_empty() {
                sigma_tot += sigma[s][k];
            }
        }
        if sigma_tot <= T::zero() {
            continue;
        }
        let w = weights[k] / wsum;
        let inv = T::one() / sigma_tot;
        for s in 0..3 {
            if !enabled[s] || sigma[s].is_empty() {
                continue;
            }
            let ws = w * sigma[s][k] * inv;
            if ws > T::zero() {
                for (acc, &v) in phi_acc.iter_mut().zip(&phi[s][k * phi_dim..(k + 1) * phi_dim]) {
                    *acc += ws * v;
                }
                for (acc, &v) in psi_acc.iter_mut().zip(&psi[s][k * psi_dim..(k + 1) * psi_dim]) {
                    *acc += ws * v;
                }
            }
        }
    }
    normalize_in_place(&mut phi_acc);
    normalize_in_place(&mut psi_acc);
    (phi_acc, psi_acc, selected)
}

/// Indices of the (at most) `top_k` largest positive weights, ascending.
pub fn top_weight_indices<T: Real>(weights: &[T], top_k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).filter(|&k| weights[k] > T::zero()).collect();
    idx.sort_by(|&a, &b| {
        weights[b].partial_cmp(&weights[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    idx.truncate(top_k);
    idx.sort_unstable();
    idx
}

fn normalize_in_place<T: Real>(v: &mut [T]) {
    let n = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x = *x / n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_stream_inputs(
        sigma: Vec<f64>,
        color: Vec<f64>,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let beta = vec![0.01; sigma.len()];
        (sigma, color, beta)
    }

    #[test]
    fn single_opaque_sample_takes_full_weight() {
        let depths = vec![1.0];
        let (sigma, color, beta) = one_stream_inputs(vec![1e6], vec![0.2, 0.5, 0.8]);
        let out = composite::<f64>(
            &depths,
            2.0,
            [&sigma, &[], &[]],
            [&color, &[], &[]],
            [&beta, &[], &[]],
            [true, false, false],
        );
        assert!((out.weights[0] - 1.0).abs() < 1e-12);
        assert!((out.color[0] - 0.2).abs() < 1e-9);
        assert!((out.color[2] - 0.8).abs() < 1e-9);
        assert!(out.residual < 1e-12);
    }

    #[test]
    fn empty_ray_is_black_with_full_residual() {
        let depths = vec![1.0, 1.5, 2.0];
        let (sigma, color, beta) = one_stream_inputs(vec![0.0; 3], vec![0.5; 9]);
        let out = composite::<f64>(
            &depths,
            3.0,
            [&sigma, &[], &[]],
            [&color, &[], &[]],
            [&beta, &[], &[]],
            [true, false, false],
        );
        assert_eq!(out.color, [0.0; 3]);
        assert_eq!(out.residual, 1.0);
        assert!((out.depth - 3.0).abs() < 1e-12);
    }

    #[test]
    fn weights_plus_residual_conserve_unity() {
        let depths: Vec<f64> = (0..64).map(|k| 0.5 + 0.1 * k as f64).collect();
        let sigma: Vec<f64> = (0..64).map(|k| ((k * 37) % 11) as f64 * 0.3).collect();
        let color = vec![0.4; 64 * 3];
        let beta = vec![0.05; 64];
        let out = composite::<f64>(
            &depths,
            8.0,
            [&sigma, &sigma, &[]],
            [&color, &color, &[]],
            [&beta, &beta, &[]],
            [true, true, false],
        );
        let total: f64 = out.weights.iter().sum::<f64>() + out.residual;
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn disabled_stream_contributes_exactly_zero_mass() {
        let depths = vec![1.0, 2.0];
        let sigma_p = vec![0.5, 0.5];
        let sigma_d = vec![2.0, 2.0];
        let color = vec![0.5; 6];
        let beta = vec![0.01; 2];
        let on = composite::<f64>(
            &depths,
            3.0,
            [&sigma_p, &sigma_d, &[]],
            [&color, &color, &[]],
            [&beta, &beta, &[]],
            [true, true, false],
        );
        let off = composite::<f64>(
            &depths,
            3.0,
            [&sigma_p, &sigma_d, &[]],
            [&color, &color, &[]],
            [&beta, &beta, &[]],
            [true, false, false],
        );
        assert!(on.stream_mass[1] > 0.0);
        assert_eq!(off.stream_mass[1], 0.0);
        assert!(off.stream_mass[0] <= on.stream_mass[0] + on.stream_mass[1]);
    }

    #[test]
    fn constant_feature_region_returns_that_feature() {
        let weights = vec![0.1, 0.4, 0.2, 0.05];
        let sigma = vec![1.0; 4];
        let mut phi = vec![0.0; 4 * 3];
        for k in 0..4 {
            phi[k * 3] = 0.6;
            phi[k * 3 + 1] = 0.8;
        }
        let psi = vec![1.0; 4 * 2];
        let (phi_out, psi_out, sel) = composite_features::<f64>(
            &weights,
            [&sigma, &[], &[]],
            [&phi, &[], &[]],
            [&psi, &[], &[]],
            3,
            2,
            [true, false, false],
            32,
        );
        assert_eq!(sel.len(), 4);
        assert!((phi_out[0] - 0.6).abs() < 1e-12);
        assert!((phi_out[1] - 0.8).abs() < 1e-12);
        let n: f64 = psi_out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn features_are_unit_norm() {
        let weights: Vec<f64> = (0..40).map(|k| ((k * 7) % 13) as f64 * 0.01).collect();
        let sigma = vec![0.7; 40];
        let phi: Vec<f64> = (0..40 * 5).map(|i| ((i * 31) % 17) as f64 * 0.1 - 0.8).collect();
        let psi: Vec<f64> = (0..40 * 4).map(|i| ((i * 13) % 19) as f64 * 0.1 - 0.9).collect();
        let (phi_out, psi_out, sel) = composite_features::<f64>(
            &weights,
            [&sigma, &[], &[]],
            [&phi, &[], &[]],
            [&psi, &[], &[]],
            5,
            4,
            [true, false, false],
            32,
        );
        assert_eq!(sel.len(), 32);
        let np: f64 = phi_out.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nq: f64 = psi_out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((np - 1.0).abs() < 1e-9);
        assert!((nq - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tail_samples_outside_top_k_do_not_matter() {
        let mut weights: Vec<f64> = (0..40).map(|k| 1.0 / (k + 1) as f64).collect();
        let sigma = vec![1.0; 40];
        let phi: Vec<f64> = (0..40 * 3).map(|i| (i % 5) as f64).collect();
        let psi = vec![1.0; 40 * 2];
        let args = |w: &Vec<f64>, p: &Vec<f64>| {
            composite_features::<f64>(
                &w.clone(),
                [&sigma, &[], &[]],
                [&p.clone(), &[], &[]],
                [&psi, &[], &[]],
                3,
                2,
                [true, false, false],
                8,
            )
        };
        let (a, _, _) = args(&weights, &phi);
        // Perturb the tail (weights beyond the top 8 and their features).
        let mut phi2 = phi.clone();
        for k in 20..40 {
            weights[k] *= 0.5;
            for c in 0..3 {
                phi2[k * 3 + c] = 99.0;
            }
        }
        let (b, _, _) = args(&weights, &phi2);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fewer_positive_weights_than_top_k_uses_all() {
        let weights = vec![0.0, 0.3, 0.0, 0.2];
        let sigma = vec![1.0; 4];
        let phi = vec![1.0; 4 * 2];
        let psi = vec![1.0; 4 * 2];
        let (_, _, sel) = composite_features::<f64>(
            &weights,
            [&sigma, &[], &[]],
            [&phi, &[], &[]],
            [&psi, &[], &[]],
            2,
            2,
            [true, false, false],
            32,
        );
        assert_eq!(sel, vec![1, 3]);
    }
}
