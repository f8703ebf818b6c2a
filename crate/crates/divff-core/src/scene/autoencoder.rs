//! Per-scene feature autoencoder compressing 512-d image descriptors to the
//! 128-d code the field distills. Two linear-ReLU-linear halves, fit with
//! Adam on reconstruction MSE.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::io::Array;
use crate::numkit::{Adam, Graph, Tensor};
use crate::seeding;

#[derive(Debug, Error)]
pub enum AutoencoderError {
    #[error("corpus too small: {0} vectors (need at least 100)")]
    CorpusTooSmall(usize),
    #[error("corpus vector {0} is not unit norm (|v| = {1:.4})")]
    NotUnitNorm(usize, f64),
    #[error("autodiff: {0}")]
    Num(#[from] crate::numkit::NumError),
}

#[derive(Clone, Copy, Debug)]
pub struct AutoencoderConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub latent: usize,
    /// Base step budget; training continues in chunks (up to 4x) until
    /// `target_cosine` is reached on the corpus.
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub target_cosine: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 512,
            hidden: 256,
            latent: 128,
            steps: 400,
            batch: 128,
            lr: 1e-3,
            target_cosine: 0.99,
            seed: 0,
        }
    }
}

/// Trained encoder/decoder weights (f64).
#[derive(Clone, Debug)]
pub struct FeatureAutoencoder {
    pub enc_w1: Tensor<f64>,
    pub enc_b1: Tensor<f64>,
    pub enc_w2: Tensor<f64>,
    pub enc_b2: Tensor<f64>,
    pub dec_w1: Tensor<f64>,
    pub dec_b1: Tensor<f64>,
    pub dec_w2: Tensor<f64>,
    pub dec_b2: Tensor<f64>,
    /// Mean reconstruction cosine on the training corpus.
    pub corpus_cosine: f64,
}

fn affine_relu(x: &[f64], rows: usize, w: &Tensor<f64>, b: &Tensor<f64>, relu: bool) -> Vec<f64> {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; rows * n];
    crate::numkit::gemm_nn(rows, k, n, x, w.data(), &mut out);
    for row in out.chunks_exact_mut(n) {
        for (o, &bv) in row.iter_mut().zip(b.data()) {
            *o += bv;
            if relu && *o < 0.0 {
                *o = 0.0;
            }
        }
    }
    out
}

impl FeatureAutoencoder {
    pub fn latent_dim(&self) -> usize {
        self.enc_w2.shape()[1]
    }

    pub fn input_dim(&self) -> usize {
        self.enc_w1.shape()[0]
    }

    pub fn encode_batch(&self, vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let rows = vs.len();
        if rows == 0 {
            return Vec::new();
        }
        let flat: Vec<f64> = vs.iter().flatten().copied().collect();
        let h = affine_relu(&flat, rows, &self.enc_w1, &self.enc_b1, true);
        let z = affine_relu(&h, rows, &self.enc_w2, &self.enc_b2, false);
        z.chunks_exact(self.latent_dim()).map(|c| c.to_vec()).collect()
    }

    pub fn decode_batch(&self, zs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let rows = zs.len();
        if rows == 0 {
            return Vec::new();
        }
        let flat: Vec<f64> = zs.iter().flatten().copied().collect();
        let h = affine_relu(&flat, rows, &self.dec_w1, &self.dec_b1, true);
        let y = affine_relu(&h, rows, &self.dec_w2, &self.dec_b2, false);
        y.chunks_exact(self.input_dim()).map(|c| c.to_vec()).collect()
    }

    pub fn encode(&self, v: &[f64]) -> Vec<f64> {
        self.encode_batch(&[v.to_vec()]).pop().unwrap()
    }

    /// Encode and L2-normalize (queries and targets live on the unit sphere).
    pub fn encode_unit(&self, v: &[f64]) -> Vec<f64> {
        let mut z = self.encode(v);
        let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            z.iter_mut().for_each(|x| *x /= n);
        }
        z
    }

    pub fn to_arrays(&self) -> Vec<Array> {
        let t = |name: &str, t: &Tensor<f64>| Array::f64(name, t.shape(), t.data().to_vec());
        vec![
            t("enc_w1", &self.enc_w1),
            t("enc_b1", &self.enc_b1),
            t("enc_w2", &self.enc_w2),
            t("enc_b2", &self.enc_b2),
            t("dec_w1", &self.dec_w1),
            t("dec_b1", &self.dec_b1),
            t("dec_w2", &self.dec_w2),
            t("dec_b2", &self.dec_b2),
            Array::f64("corpus_cosine", &[1], vec![self.corpus_cosine]),
        ]
    }

    pub fn from_arrays(arrays: &[Array]) -> crate::io::Result<Self> {
        let t = |name: &str| -> crate::io::Result<Tensor<f64>> {
            let a = crate::io::find_array(arrays, name)?;
            Ok(Tensor::new(&a.dims, a.as_f64()?.to_vec()).expect("array dims"))
        };
        Ok(Self {
            enc_w1: t("enc_w1")?,
            enc_b1: t("enc_b1")?,
            enc_w2: t("enc_w2")?,
            enc_b2: t("enc_b2")?,
            dec_w1: t("dec_w1")?,
            dec_b1: t("dec_b1")?,
            dec_w2: t("dec_w2")?,
            dec_b2: t("dec_b2")?,
            corpus_cosine: crate::io::find_array(arrays, "corpus_cosine")?.as_f64()?[0],
        })
    }
}

fn he_init(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let scale = (2.0 / rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
    Tensor::new(&[rows, cols], data).unwrap()
}

pub fn mean_cosine(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dot: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
        let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx > 0.0 && ny > 0.0 {
            acc += dot / (nx * ny);
        }
    }
    acc / a.len().max(1) as f64
}

/// Fit the per-scene autoencoder on unit 512-d descriptors.
pub fn fit_autoencoder(
    corpus: &[Vec<f64>],
    cfg: &AutoencoderConfig,
) -> Result<FeatureAutoencoder, AutoencoderError> {
    if corpus.len() < 100 {
        return Err(AutoencoderError::CorpusTooSmall(corpus.len()));
    }
    for (i, v) in corpus.iter().enumerate() {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(AutoencoderError::NotUnitNorm(i, n));
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seeding::derive(cfg.seed, "autoencoder", &[]));
    let mut params = vec![
        he_init(&mut rng, cfg.input_dim, cfg.hidden),
        Tensor::zeros(&[cfg.hidden]),
        he_init(&mut rng, cfg.hidden, cfg.latent),
        Tensor::zeros(&[cfg.latent]),
        he_init(&mut rng, cfg.latent, cfg.hidden),
        Tensor::zeros(&[cfg.hidden]),
        he_init(&mut rng, cfg.hidden, cfg.input_dim),
        Tensor::zeros(&[cfg.input_dim]),
    ];
    let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
    let mut adam = Adam::new(&shapes);

    let build = |params: &[Tensor<f64>]| -> FeatureAutoencoder {
        FeatureAutoencoder {
            enc_w1: params[0].clone(),
            enc_b1: params[1].clone(),
            enc_w2: params[2].clone(),
            enc_b2: params[3].clone(),
            dec_w1: params[4].clone(),
            dec_b1: params[5].clone(),
            dec_w2: params[6].clone(),
            dec_b2: params[7].clone(),
            corpus_cosine: 0.0,
        }
    };

    let chunk = cfg.steps.max(1);
    let max_steps = cfg.steps * 4;
    let mut done = 0usize;
    let mut cosine = 0.0;
    while done < max_steps.max(1) {
        for _step in 0..chunk {
            let batch: Vec<usize> =
                (0..cfg.batch.min(corpus.len())).map(|_| rng.gen_range(0..corpus.len())).collect();
            let flat: Vec<f64> = batch.iter().flat_map(|&i| corpus[i].iter().copied()).collect();

            let mut g = Graph::<f64>::new();
            let x = g.constant(Tensor::new(&[batch.len(), cfg.input_dim], flat).unwrap());
            let vars: Vec<_> = params.iter().map(|p| g.param(p.clone())).collect();
            let h1m = g.matmul(x, vars[0])?;
            let h1b = g.add_bias(h1m, vars[1])?;
            let h1 = g.relu(h1b);
            let zm = g.matmul(h1, vars[2])?;
            let z = g.add_bias(zm, vars[3])?;
            let h2m = g.matmul(z, vars[4])?;
            let h2b = g.add_bias(h2m, vars[5])?;
            let h2 = g.relu(h2b);
            let ym = g.matmul(h2, vars[6])?;
            let y = g.add_bias(ym, vars[7])?;
            let d = g.sub(y, x)?;
            let sq = g.mul(d, d)?;
            let loss = g.mean(sq);
            g.backward(loss)?;
            let grads: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad(v)).collect();
            adam.step(&mut params, &grads, cfg.lr)?;
        }
        done += chunk;
        let ae = build(&params);
        let recon = ae.decode_batch(&ae.encode_batch(corpus));
        cosine = mean_cosine(corpus, &recon);
        if cosine >= cfg.target_cosine {
            break;
        }
    }

    let mut ae = build(&params);
    ae.corpus_cosine = cosine;
    Ok(ae)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    /// Corpus spanning a 10-d subspace of R^64 (shrunk dims keep the test fast).
    fn subspace_corpus(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let basis: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..64).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        span_samples(&basis, n, &mut rng)
    }

    fn span_samples(basis: &[Vec<f64>], n: usize, rng: &mut ChaCha12Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let mut acc = vec![0.0; basis[0].len()];
                for b in basis {
                    let c: f64 = rng.sample::<f64, _>(StandardNormal);
                    for (a, &x) in acc.iter_mut().zip(b) {
                        *a += c * x;
                    }
                }
                unit(acc)
            })
            .collect()
    }

    fn small_cfg() -> AutoencoderConfig {
        AutoencoderConfig {
            input_dim: 64,
            hidden: 64,
            latent: 32,
            steps: 800,
            batch: 64,
            lr: 2e-3,
            target_cosine: 0.999,
            seed: 1,
        }
    }

    #[test]
    fn subspace_corpus_reconstructs_nearly_exactly() {
        let corpus = subspace_corpus(160, 3);
        let ae = fit_autoencoder(&corpus, &small_cfg()).unwrap();
        assert!(ae.corpus_cosine >= 0.999, "corpus cosine {}", ae.corpus_cosine);
    }

    #[test]
    fn held_out_mixtures_reconstruct() {
        // Held out: fresh mixtures of corpus vectors, never seen in training.
        let corpus = subspace_corpus(160, 3);
        let ae = fit_autoencoder(&corpus, &small_cfg()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let held_out = span_samples(&corpus[0..20].to_vec(), 40, &mut rng);
        let recon = ae.decode_batch(&ae.encode_batch(&held_out));
        let c = mean_cosine(&held_out, &recon);
        assert!(c >= 0.98, "held-out cosine {c}");
    }

    #[test]
    fn corpus_too_small_is_rejected() {
        let corpus = subspace_corpus(50, 3);
        assert!(matches!(
            fit_autoencoder(&corpus, &small_cfg()),
            Err(AutoencoderError::CorpusTooSmall(50))
        ));
    }

    #[test]
    fn zero_vector_is_rejected() {
        let mut corpus = subspace_corpus(120, 3);
        corpus[17] = vec![0.0; 64];
        assert!(matches!(
            fit_autoencoder(&corpus, &small_cfg()),
            Err(AutoencoderError::NotUnitNorm(17, _))
        ));
    }

    #[test]
    fn round_trips_through_arrays() {
        let corpus = subspace_corpus(120, 3);
        let mut cfg = small_cfg();
        cfg.steps = 50;
        let ae = fit_autoencoder(&corpus, &cfg).unwrap();
        let back = FeatureAutoencoder::from_arrays(&ae.to_arrays()).unwrap();
        assert_eq!(ae.enc_w1, back.enc_w1);
        assert_eq!(ae.dec_b2, back.dec_b2);
        let v = &corpus[0];
        assert_eq!(ae.encode(v), back.encode(v));
    }
}
