//! Stratified coarse sampling and inverse-CDF hierarchical sampling.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// One stratified depth per stratum over [near, far); `rng = None` places
/// samples at stratum midpoints (zero-jitter test mode).
pub fn sample_coarse(near: f64, far: f64, k: usize, mut rng: Option<&mut ChaCha12Rng>) -> Vec<f64> {
    let width = (far - near) / k as f64;
    (0..k)
        .map(|i| {
            let u = match rng.as_deref_mut() {
                Some(r) => r.gen_range(0.0..1.0),
                None => 0.5,
            };
            near + (i as f64 + u) * width
        })
        .collect()
}

/// Importance sampling over the coarse weights: piecewise-constant pdf over
/// the strata implied by the coarse depths, inverted per uniform draw.
/// Degenerate all-zero weights fall back to uniform sampling.
pub fn sample_fine(
    near: f64,
    far: f64,
    coarse_depths: &[f64],
    coarse_weights: &[f64],
    k: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<f64> {
    debug_assert_eq!(coarse_depths.len(), coarse_weights.len());
    let n = coarse_depths.len();
    let total: f64 = coarse_weights.iter().filter(|w| w.is_finite()).sum();
    if n == 0 || total <= 0.0 {
        return sample_coarse(near, far, k, Some(rng));
    }

    // Bin edges: near, midpoints between consecutive depths, far.
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(near);
    for pair in coarse_depths.windows(2) {
        edges.push(0.5 * (pair[0] + pair[1]));
    }
    edges.push(far);

    // Max-blur the weights so bins adjacent to a density ramp also receive
    // samples, then build the CDF (small floor keeps every bin reachable).
    let blurred: Vec<f64> = (0..n)
        .map(|i| {
            let prev = if i > 0 { coarse_weights[i - 1] } else { 0.0 };
            let next = if i + 1 < n { coarse_weights[i + 1] } else { 0.0 };
            coarse_weights[i].max(prev).max(next).max(0.0)
        })
        .collect();
    let floor = 1e-6 * total / n as f64;
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for &w in &blurred {
        acc += w + floor;
        cdf.push(acc);
    }
    let norm = acc;

    (0..k)
        .map(|_| {
            let u: f64 = rng.gen_range(0.0..1.0) * norm;
            // Binary search for the bin.
            let mut lo = 0usize;
            let mut hi = n;
            while lo + 1 < hi {
                let mid = (lo + hi) / 2;
                if cdf[mid] <= u {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let bin = lo.min(n - 1);
            let span = cdf[bin + 1] - cdf[bin];
            let frac = if span > 0.0 { (u - cdf[bin]) / span } else { 0.5 };
            edges[bin] + frac * (edges[bin + 1] - edges[bin])
        })
        .collect()
}

/// Merge two depth lists into one sorted list.
pub fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out.sort_by(|x, y| x.partial_cmp(y).unwrap());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_jitter_gives_midpoints() {
        let d = sample_coarse(1.0, 3.0, 4, None);
        assert_eq!(d, vec![1.25, 1.75, 2.25, 2.75]);
    }

    #[test]
    fn all_depths_in_bounds() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..100 {
            for &d in &sample_coarse(0.5, 9.5, 32, Some(&mut rng)) {
                assert!((0.5..9.5).contains(&d));
            }
        }
    }

    #[test]
    fn seeded_sampling_is_byte_stable() {
        let mut r1 = ChaCha12Rng::seed_from_u64(7);
        let mut r2 = ChaCha12Rng::seed_from_u64(7);
        let a = sample_coarse(1.0, 2.0, 16, Some(&mut r1));
        let b = sample_coarse(1.0, 2.0, 16, Some(&mut r2));
        assert_eq!(a, b);
    }

    #[test]
    fn concentrated_weights_pull_fine_samples() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let depths = sample_coarse(0.0, 10.0, 20, None);
        // All mass in stratum 7 (depth around 3.75).
        let mut weights = vec![0.0; 20];
        weights[7] = 1.0;
        let fine = sample_fine(0.0, 10.0, &depths, &weights, 200, &mut rng);
        let lo = 0.5 * (depths[6] + depths[7]);
        let hi = 0.5 * (depths[7] + depths[8]);
        let inside = fine.iter().filter(|&&d| d >= lo && d <= hi).count();
        assert!(
            inside as f64 >= 0.8 * fine.len() as f64,
            "{inside}/{} samples in the hot stratum",
            fine.len()
        );
    }

    #[test]
    fn uniform_weights_sample_uniformly() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let depths = sample_coarse(0.0, 1.0, 16, None);
        let weights = vec![1.0; 16];
        let mut fine = sample_fine(0.0, 1.0, &depths, &weights, 10_000, &mut rng);
        fine.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Kolmogorov-Smirnov statistic against U(0,1).
        let mut ks: f64 = 0.0;
        for (i, &x) in fine.iter().enumerate() {
            let empirical = (i + 1) as f64 / fine.len() as f64;
            ks = ks.max((empirical - x).abs());
        }
        assert!(ks < 0.1, "KS statistic {ks}");
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let depths = sample_coarse(2.0, 4.0, 8, None);
        let weights = vec![0.0; 8];
        let fine = sample_fine(2.0, 4.0, &depths, &weights, 64, &mut rng);
        assert_eq!(fine.len(), 64);
        assert!(fine.iter().all(|&d| (2.0..4.0).contains(&d)));
        // Spread across the whole range rather than collapsed.
        assert!(fine.iter().filter(|&&d| d < 3.0).count() > 10);
        assert!(fine.iter().filter(|&&d| d >= 3.0).count() > 10);
    }

    #[test]
    fn merge_is_sorted() {
        let merged = merge_sorted(&[1.0, 3.0, 5.0], &[2.0, 2.5, 6.0]);
        assert_eq!(merged, vec![1.0, 2.0, 2.5, 3.0, 5.0, 6.0]);
    }
}
