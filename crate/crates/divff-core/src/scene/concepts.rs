//! Concept vectors standing in for frozen language/vision encoders.
//!
//! Image concepts live in R^512 (pre-autoencoder), video concepts in R^64.
//! Canonical phrase vectors mirror the two fixed comparison lists used by
//! relevancy scoring: five image phrases and four video phrases. The "hands"
//! image canonical shares the actor's concept vector and the "background"
//! video canonical shares the ambient concept, so rendered features of those
//! regions score low against unrelated queries.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use super::spec::SceneSpec;
use crate::io::Array;
use crate::seeding;

pub const CANONICAL_IMAGE: [&str; 5] = ["object", "thing", "stuff", "texture", "hands"];
pub const CANONICAL_VIDEO: [&str; 4] =
    ["general task", "indistinct movement", "unclear action", "background"];

/// Unit concept vectors for a scene, plus the canonical phrase vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptBank {
    pub image_dim: usize,
    pub video_dim: usize,
    pub image_names: Vec<String>,
    pub image_vectors: Vec<Vec<f64>>,
    pub video_names: Vec<String>,
    pub video_vectors: Vec<Vec<f64>>,
    pub canonical_image: Vec<Vec<f64>>,
    pub canonical_video: Vec<Vec<f64>>,
}

fn unit_gaussian(rng: &mut ChaCha12Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draw unit vectors with pairwise cosine below the cap, by rejection.
fn draw_distinct(rng: &mut ChaCha12Rng, dim: usize, count: usize, cos_cap: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let v = unit_gaussian(rng, dim);
        if out.iter().all(|u| cos(u, &v).abs() <= cos_cap) {
            out.push(v);
        }
    }
    out
}

fn ordered_unique(names: impl Iterator<Item = String>) -> Vec<String> {
    let mut seen = Vec::new();
    for n in names {
        if !seen.contains(&n) {
            seen.push(n);
        }
    }
    seen
}

pub fn build_concept_bank(spec: &SceneSpec, seed: u64) -> ConceptBank {
    let image_names = ordered_unique(spec.all_primitives().map(|p| p.image_concept.clone()));
    let video_names = ordered_unique(spec.all_primitives().map(|p| p.video_concept.clone()));

    let mut rng = ChaCha12Rng::seed_from_u64(seeding::derive(seed, "concept-bank", &[]));
    let image_vectors = draw_distinct(&mut rng, spec.teacher.image_dim, image_names.len(), 0.5);
    let video_vectors = draw_distinct(&mut rng, spec.teacher.video_dim, video_names.len(), 0.5);

    let mut canonical_image = draw_distinct(&mut rng, spec.teacher.image_dim, CANONICAL_IMAGE.len(), 0.5);
    if let Some(hands) = image_names.iter().position(|n| n == "hands") {
        let slot = CANONICAL_IMAGE.iter().position(|&c| c == "hands").unwrap();
        canonical_image[slot] = image_vectors[hands].clone();
    }
    let mut canonical_video = draw_distinct(&mut rng, spec.teacher.video_dim, CANONICAL_VIDEO.len(), 0.5);
    if let Some(ambient) = video_names.iter().position(|n| n == "ambient") {
        let slot = CANONICAL_VIDEO.iter().position(|&c| c == "background").unwrap();
        canonical_video[slot] = video_vectors[ambient].clone();
    }

    ConceptBank {
        image_dim: spec.teacher.image_dim,
        video_dim: spec.teacher.video_dim,
        image_names,
        image_vectors,
        video_names,
        video_vectors,
        canonical_image,
        canonical_video,
    }
}

impl ConceptBank {
    pub fn image_concept(&self, name: &str) -> Option<&[f64]> {
        self.image_names.iter().position(|n| n == name).map(|i| self.image_vectors[i].as_slice())
    }

    pub fn video_concept(&self, name: &str) -> Option<&[f64]> {
        self.video_names.iter().position(|n| n == name).map(|i| self.video_vectors[i].as_slice())
    }

    /// Tilt direction used by the teacher simulator for small crops.
    pub fn texture_canonical(&self) -> &[f64] {
        let slot = CANONICAL_IMAGE.iter().position(|&c| c == "texture").unwrap();
        &self.canonical_image[slot]
    }

    pub fn to_arrays(&self) -> Vec<Array> {
        let flat = |vs: &[Vec<f64>]| -> Vec<f32> {
            vs.iter().flat_map(|v| v.iter().map(|&x| x as f32)).collect()
        };
        vec![
            Array::f32("image_concepts", &[self.image_vectors.len(), self.image_dim], flat(&self.image_vectors)),
            Array::f32("video_concepts", &[self.video_vectors.len(), self.video_dim], flat(&self.video_vectors)),
            Array::f32(
                "canonical_image",
                &[self.canonical_image.len(), self.image_dim],
                flat(&self.canonical_image),
            ),
            Array::f32(
                "canonical_video",
                &[self.canonical_video.len(), self.video_dim],
                flat(&self.canonical_video),
            ),
        ]
    }

    pub fn from_arrays(
        arrays: &[Array],
        image_names: Vec<String>,
        video_names: Vec<String>,
    ) -> crate::io::Result<Self> {
        let unflat = |a: &Array| -> crate::io::Result<Vec<Vec<f64>>> {
            let dim = a.dims[1];
            Ok(a.as_f32()?
                .chunks_exact(dim)
                .map(|c| c.iter().map(|&x| x as f64).collect())
                .collect())
        };
        let img = crate::io::find_array(arrays, "image_concepts")?;
        let vid = crate::io::find_array(arrays, "video_concepts")?;
        let ci = crate::io::find_array(arrays, "canonical_image")?;
        let cv = crate::io::find_array(arrays, "canonical_video")?;
        Ok(Self {
            image_dim: img.dims[1],
            video_dim: vid.dims[1],
            image_names,
            image_vectors: unflat(img)?,
            video_names,
            video_vectors: unflat(vid)?,
            canonical_image: unflat(ci)?,
            canonical_video: unflat(cv)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::spec::kitchen_toy;

    #[test]
    fn bank_is_deterministic_and_unit_norm() {
        let spec = kitchen_toy();
        let a = build_concept_bank(&spec, 7);
        let b = build_concept_bank(&spec, 7);
        assert_eq!(a, b);
        let c = build_concept_bank(&spec, 8);
        assert_ne!(a.image_vectors, c.image_vectors);
        for v in a.image_vectors.iter().chain(&a.canonical_image) {
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn distinct_concepts_have_bounded_cosine() {
        let spec = kitchen_toy();
        let bank = build_concept_bank(&spec, 3);
        for (i, u) in bank.video_vectors.iter().enumerate() {
            for v in bank.video_vectors.iter().skip(i + 1) {
                assert!(cos(u, v).abs() <= 0.5);
            }
        }
    }

    #[test]
    fn hands_canonical_is_tied_to_actor_concept() {
        let spec = kitchen_toy();
        let bank = build_concept_bank(&spec, 3);
        let hands = bank.image_concept("hands").unwrap();
        let slot = CANONICAL_IMAGE.iter().position(|&c| c == "hands").unwrap();
        assert_eq!(hands, bank.canonical_image[slot].as_slice());
    }
}
