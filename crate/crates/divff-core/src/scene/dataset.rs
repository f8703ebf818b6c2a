//! On-disk fixture datasets: rendered frames, exact ground truth, teacher
//! targets, concept bank and autoencoder, with a content-hashed manifest.
//!
//! Layout under the dataset root:
//!
//! ```text
//! manifest.json
//! frames/NNNN.ppm        rendered RGB
//! gt/NNNN.masks          DVFF: stream, object, depth, hotspot, stream_mass
//! teacher/NNNN.targets   DVFF: phi (128-d), phi_cov, psi_patch (64-d), psi_global
//! teacher/bank.bin       concept + canonical vectors
//! teacher/autoencoder.bin
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::autoencoder::{fit_autoencoder, AutoencoderConfig, FeatureAutoencoder};
use super::camera::Pose;
use super::concepts::{build_concept_bank, ConceptBank, CANONICAL_IMAGE, CANONICAL_VIDEO};
use super::oracle::{render_ground_truth_frame, FrameGroundTruth, OracleOptions};
use super::spec::SceneSpec;
use super::teacher::{
    extract_masks, filter_masks, make_image_targets, make_video_targets, video_window,
    FrameTeacherTargets, ImageTargetMode,
};
use crate::io::{self, Array};

pub const DATASET_SCHEMA: &str = "divff_dataset_v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] io::IoError),
    #[error("scene: {0}")]
    Scene(#[from] super::spec::SceneError),
    #[error("oracle: {0}")]
    Oracle(#[from] super::oracle::OracleError),
    #[error("teacher: {0}")]
    Teacher(#[from] super::teacher::TeacherError),
    #[error("autoencoder: {0}")]
    Autoencoder(#[from] super::autoencoder::AutoencoderError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dataset: {0}")]
    Invalid(String),
    #[error("fs: {0}")]
    Fs(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub name: String,
    pub seed: u64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub scene: SceneSpec,
    pub image_concept_names: Vec<String>,
    pub video_concept_names: Vec<String>,
    pub canonical_image_names: Vec<String>,
    pub canonical_video_names: Vec<String>,
    /// Hash over frames/ and gt/ (seed-independent geometry).
    pub geometry_hash: String,
    /// Hash over teacher/ (depends on the seed).
    pub teacher_hash: String,
    /// Hash over everything except the manifest itself.
    pub content_hash: String,
}

/// Everything the trainer and evaluator need for one frame.
#[derive(Clone, Debug)]
pub struct FrameData {
    pub frame: usize,
    pub pose: Pose,
    pub rgb: Vec<f32>,
    pub depth: Vec<f32>,
    pub stream_label: Vec<u8>,
    pub object_id: Vec<u16>,
    pub hotspot: Vec<u8>,
    pub stream_mass: Vec<f32>,
    /// H*W*128 unit-norm encoded image targets.
    pub phi: Vec<f32>,
    pub phi_cov: Vec<u8>,
    /// H*W*64 unit-norm video patch targets.
    pub psi_patch: Vec<f32>,
    /// 64-d unit global window descriptor.
    pub psi_global: Vec<f32>,
}

#[derive(Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub spec: SceneSpec,
    pub bank: ConceptBank,
    pub autoencoder: FeatureAutoencoder,
    pub frames: Vec<FrameData>,
}

impl Dataset {
    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn pixel_count(&self) -> usize {
        self.spec.width * self.spec.height
    }

    /// Train/test split: every `holdout_stride`-th frame is held out.
    pub fn train_frames(&self, holdout_stride: usize) -> Vec<usize> {
        (0..self.spec.frames).filter(|t| !is_holdout(*t, holdout_stride)).collect()
    }

    pub fn test_frames(&self, holdout_stride: usize) -> Vec<usize> {
        (0..self.spec.frames).filter(|t| is_holdout(*t, holdout_stride)).collect()
    }

    /// Image-side query embedding for a concept, in the encoded 128-d space.
    pub fn encoded_image_concept(&self, name: &str) -> Option<Vec<f64>> {
        self.bank.image_concept(name).map(|v| self.autoencoder.encode_unit(v))
    }

    pub fn encoded_image_canonicals(&self) -> Vec<Vec<f64>> {
        self.bank.canonical_image.iter().map(|v| self.autoencoder.encode_unit(v)).collect()
    }
}

fn is_holdout(t: usize, stride: usize) -> bool {
    stride > 0 && (t + 1) % stride == 0
}

fn frame_name(t: usize) -> String {
    format!("{t:04}")
}

/// Encode distinct descriptors and scatter them to pixels; unit-norm output.
fn encode_targets(
    ae: &FeatureAutoencoder,
    targets: &FrameTeacherTargets,
    width: usize,
    height: usize,
    latent: usize,
) -> (Vec<f32>, Vec<u8>) {
    let encoded: Vec<Vec<f64>> = targets
        .descriptors
        .iter()
        .map(|d| {
            let mut z = ae.encode(d);
            let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                z.iter_mut().for_each(|x| *x /= n);
            }
            z
        })
        .collect();
    let mut phi = vec![0.0f32; width * height * latent];
    let mut cov = vec![0u8; width * height];
    for p in 0..width * height {
        let d = targets.pixel_desc[p];
        if d >= 0 {
            cov[p] = 1;
            let z = &encoded[d as usize];
            for (o, &v) in phi[p * latent..(p + 1) * latent].iter_mut().zip(z) {
                *o = v as f32;
            }
        }
    }
    (phi, cov)
}

/// Average supersampled per-pixel targets down to base resolution.
fn downsample_targets(
    phi: &[f32],
    cov: &[u8],
    width: usize,
    height: usize,
    factor: usize,
    latent: usize,
) -> (Vec<f32>, Vec<u8>) {
    if factor <= 1 {
        return (phi.to_vec(), cov.to_vec());
    }
    let (bw, bh) = (width / factor, height / factor);
    let mut out = vec![0.0f32; bw * bh * latent];
    let mut out_cov = vec![0u8; bw * bh];
    for br in 0..bh {
        for bc in 0..bw {
            let mut acc = vec![0.0f64; latent];
            let mut covered = 0usize;
            for dr in 0..factor {
                for dc in 0..factor {
                    let p = (br * factor + dr) * width + (bc * factor + dc);
                    if cov[p] != 0 {
                        covered += 1;
                        for (a, &v) in acc.iter_mut().zip(&phi[p * latent..(p + 1) * latent]) {
                            *a += v as f64;
                        }
                    }
                }
            }
            if covered > 0 {
                let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    acc.iter_mut().for_each(|x| *x /= n);
                }
                let bp = br * bw + bc;
                out_cov[bp] = 1;
                for (o, &v) in out[bp * latent..(bp + 1) * latent].iter_mut().zip(&acc) {
                    *o = v as f32;
                }
            }
        }
    }
    (out, out_cov)
}

fn unit_or_zero(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.into_iter().map(|x| x / n).collect()
    } else {
        v
    }
}

/// Generate a complete dataset under `out`. Returns the manifest.
pub fn build_dataset(spec: &SceneSpec, seed: u64, out: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    if out.exists() && out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) {
        return Err(DatasetError::Invalid(format!(
            "output directory {} is not empty",
            out.display()
        )));
    }
    fs::create_dir_all(out)?;

    let bank = build_concept_bank(spec, seed);
    let base_opts = OracleOptions { samples: 1024, supersample: 1 };

    // Ground truth at base resolution (also the stored geometry planes).
    let gts: Vec<FrameGroundTruth> = (0..spec.frames)
        .map(|t| render_ground_truth_frame(spec, t, &base_opts))
        .collect::<std::result::Result<_, _>>()?;

    // Teacher-side ground truth, possibly supersampled for mask extraction.
    let factor = spec.teacher.supersample.max(1);
    let teacher_gts: Vec<FrameGroundTruth> = if factor == 1 {
        gts.clone()
    } else {
        (0..spec.frames)
            .map(|t| {
                render_ground_truth_frame(
                    spec,
                    t,
                    &OracleOptions { samples: 1024, supersample: factor },
                )
            })
            .collect::<std::result::Result<_, _>>()?
    };

    // Image descriptors (512-d) per frame, full mode.
    let mut frame_targets: Vec<FrameTeacherTargets> = Vec::with_capacity(spec.frames);
    for gt in &teacher_gts {
        let masks = filter_masks(extract_masks(&gt.object_id, gt.width, spec.object_count()), 0.7, 0.7);
        frame_targets.push(make_image_targets(spec, &bank, gt, &masks, ImageTargetMode::Full, seed)?);
    }

    // Autoencoder corpus: every distinct descriptor plus concepts, canonicals
    // and pairwise concept midpoints (covers patch-mode mixtures later).
    let mut corpus: Vec<Vec<f64>> = Vec::new();
    for t in &frame_targets {
        corpus.extend(t.descriptors.iter().cloned());
    }
    corpus.extend(bank.image_vectors.iter().cloned());
    corpus.extend(bank.canonical_image.iter().cloned());
    for i in 0..bank.image_vectors.len() {
        for j in (i + 1)..bank.image_vectors.len() {
            let mid: Vec<f64> = bank.image_vectors[i]
                .iter()
                .zip(&bank.image_vectors[j])
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            corpus.push(unit_or_zero(mid));
        }
    }
    let ae_cfg = AutoencoderConfig {
        input_dim: spec.teacher.image_dim,
        hidden: spec.teacher.autoencoder_hidden,
        latent: 128,
        steps: spec.teacher.autoencoder_steps,
        batch: 128,
        lr: spec.teacher.autoencoder_lr,
        target_cosine: 0.99,
        seed,
    };
    let ae = fit_autoencoder(&corpus, &ae_cfg)?;

    // Write per-frame files.
    for (t, gt) in gts.iter().enumerate() {
        let name = frame_name(t);
        io::write_ppm(&out.join("frames").join(format!("{name}.ppm")), gt.width, gt.height, &gt.rgb)?;
        io::write_dvff(
            &out.join("gt").join(format!("{name}.masks")),
            &[
                Array::u8("stream", &[gt.height, gt.width], gt.stream_label.clone()),
                Array::u16("object", &[gt.height, gt.width], gt.object_id.clone()),
                Array::f32("depth", &[gt.height, gt.width], gt.depth.clone()),
                Array::u8("hotspot", &[gt.height, gt.width], gt.hotspot.clone()),
                Array::f32("stream_mass", &[gt.height, gt.width, 3], gt.stream_mass.clone()),
            ],
        )?;

        let (phi_hi, cov_hi) = encode_targets(
            &ae,
            &frame_targets[t],
            teacher_gts[t].width,
            teacher_gts[t].height,
            128,
        );
        let (phi, phi_cov) =
            downsample_targets(&phi_hi, &cov_hi, teacher_gts[t].width, teacher_gts[t].height, factor, 128);

        let window = video_window(t, spec.frames, &spec.teacher)?;
        let window_gts: Vec<&FrameGroundTruth> = window.iter().map(|&f| &gts[f]).collect();
        let video = make_video_targets(spec, &bank, &window_gts, &window)?;
        let mut psi_patch = vec![0.0f32; gt.width * gt.height * bank.video_dim];
        for p in 0..gt.width * gt.height {
            if let Some(d) = video.patch.pixel_descriptor(p) {
                for (o, &v) in psi_patch[p * bank.video_dim..(p + 1) * bank.video_dim]
                    .iter_mut()
                    .zip(d)
                {
                    *o = v as f32;
                }
            }
        }
        let psi_global: Vec<f32> = video.global.iter().map(|&v| v as f32).collect();

        io::write_dvff(
            &out.join("teacher").join(format!("{name}.targets")),
            &[
                Array::f32("phi", &[gt.height, gt.width, 128], phi),
                Array::u8("phi_cov", &[gt.height, gt.width], phi_cov),
                Array::f32("psi_patch", &[gt.height, gt.width, bank.video_dim], psi_patch),
                Array::f32("psi_global", &[bank.video_dim], psi_global),
            ],
        )?;
    }

    io::write_dvff(&out.join("teacher").join("bank.bin"), &bank.to_arrays())?;
    io::write_dvff(&out.join("teacher").join("autoencoder.bin"), &ae.to_arrays())?;

    // Hashes: geometry covers frames/ and gt/; teacher covers teacher/.
    let geometry_hash = {
        let a = io::hash_tree(&out.join("frames"))?;
        let b = io::hash_tree(&out.join("gt"))?;
        io::sha256_hex(format!("{a}\n{b}").as_bytes())
    };
    let teacher_hash = io::hash_tree(&out.join("teacher"))?;
    let content_hash = io::hash_tree(out)?;

    let manifest = DatasetManifest {
        schema: DATASET_SCHEMA.into(),
        name: spec.name.clone(),
        seed,
        frames: spec.frames,
        width: spec.width,
        height: spec.height,
        scene: spec.clone(),
        image_concept_names: bank.image_names.clone(),
        video_concept_names: bank.video_names.clone(),
        canonical_image_names: CANONICAL_IMAGE.iter().map(|s| s.to_string()).collect(),
        canonical_video_names: CANONICAL_VIDEO.iter().map(|s| s.to_string()).collect(),
        geometry_hash,
        teacher_hash,
        content_hash,
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Load a dataset directory back into memory.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(root.join("manifest.json"))?)?;
    if manifest.schema != DATASET_SCHEMA {
        return Err(DatasetError::Invalid(format!("unsupported schema {}", manifest.schema)));
    }
    let spec = manifest.scene.clone();
    spec.validate()?;

    let bank_arrays = io::read_dvff(&root.join("teacher").join("bank.bin"))?;
    let bank = ConceptBank::from_arrays(
        &bank_arrays,
        manifest.image_concept_names.clone(),
        manifest.video_concept_names.clone(),
    )?;
    let ae_arrays = io::read_dvff(&root.join("teacher").join("autoencoder.bin"))?;
    let autoencoder = FeatureAutoencoder::from_arrays(&ae_arrays)?;

    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let name = frame_name(t);
        let (w, h, rgb) = io::read_ppm(&root.join("frames").join(format!("{name}.ppm")))?;
        if w != spec.width || h != spec.height {
            return Err(DatasetError::Invalid(format!("frame {t}: size mismatch")));
        }
        let gt = io::read_dvff(&root.join("gt").join(format!("{name}.masks")))?;
        let teacher = io::read_dvff(&root.join("teacher").join(format!("{name}.targets")))?;
        frames.push(FrameData {
            frame: t,
            pose: spec.camera.pose(t, spec.frames),
            rgb,
            depth: io::find_array(&gt, "depth")?.as_f32()?.to_vec(),
            stream_label: io::find_array(&gt, "stream")?.as_u8()?.to_vec(),
            object_id: io::find_array(&gt, "object")?.as_u16()?.to_vec(),
            hotspot: io::find_array(&gt, "hotspot")?.as_u8()?.to_vec(),
            stream_mass: io::find_array(&gt, "stream_mass")?.as_f32()?.to_vec(),
            phi: io::find_array(&teacher, "phi")?.as_f32()?.to_vec(),
            phi_cov: io::find_array(&teacher, "phi_cov")?.as_u8()?.to_vec(),
            psi_patch: io::find_array(&teacher, "psi_patch")?.as_f32()?.to_vec(),
            psi_global: io::find_array(&teacher, "psi_global")?.as_f32()?.to_vec(),
        });
    }

    Ok(Dataset { root: root.to_path_buf(), manifest, spec, bank, autoencoder, frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::spec::kitchen_toy;

    /// Small scene derived from the fixture for fast dataset tests.
    pub(crate) fn mini_scene() -> SceneSpec {
        let mut spec = kitchen_toy();
        spec.name = "mini".into();
        spec.width = 24;
        spec.height = 24;
        spec.frames = 10;
        spec.teacher.temporal_stride = 2;
        spec.teacher.autoencoder_steps = 120;
        // A 10-frame version of the motions.
        for d in &mut spec.dynamic {
            if let super::super::spec::Trajectory::Waypoints { knots } = &mut d.trajectory {
                for (f, _) in knots.iter_mut() {
                    *f = (*f * 9) / 29;
                }
                knots.dedup_by_key(|(f, _)| *f);
            }
        }
        spec.validate().unwrap();
        spec
    }

    #[test]
    fn build_and_load_round_trip() {
        let spec = mini_scene();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ds");
        let manifest = build_dataset(&spec, 5, &out).unwrap();
        assert_eq!(manifest.schema, DATASET_SCHEMA);

        let ds = load_dataset(&out).unwrap();
        assert_eq!(ds.frames.len(), 10);
        let f = &ds.frames[3];
        assert_eq!(f.rgb.len(), 24 * 24 * 3);
        assert_eq!(f.phi.len(), 24 * 24 * 128);
        // Covered targets are unit norm.
        for p in 0..ds.pixel_count() {
            if f.phi_cov[p] != 0 {
                let n: f32 = f.phi[p * 128..(p + 1) * 128].iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() < 1e-3, "norm {n}");
            }
        }
    }

    #[test]
    fn hashes_separate_geometry_from_teacher() {
        let spec = mini_scene();
        let dir = tempfile::tempdir().unwrap();
        let m1 = build_dataset(&spec, 5, &dir.path().join("a")).unwrap();
        let m2 = build_dataset(&spec, 6, &dir.path().join("b")).unwrap();
        // Seed changes teacher noise and concept draws but not geometry.
        assert_eq!(m1.geometry_hash, m2.geometry_hash);
        assert_ne!(m1.teacher_hash, m2.teacher_hash);

        let m3 = build_dataset(&spec, 5, &dir.path().join("c")).unwrap();
        assert_eq!(m1.content_hash, m3.content_hash);
    }

    #[test]
    fn refuses_nonempty_output() {
        let spec = mini_scene();
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("x")).unwrap();
        std::fs::write(dir.path().join("x").join("junk"), b"data").unwrap();
        assert!(build_dataset(&spec, 5, &dir.path().join("x")).is_err());
    }

    #[test]
    fn train_test_split_is_disjoint_and_total() {
        let spec = mini_scene();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ds");
        build_dataset(&spec, 5, &out).unwrap();
        let ds = load_dataset(&out).unwrap();
        let train = ds.train_frames(5);
        let test = ds.test_frames(5);
        assert_eq!(train.len() + test.len(), 10);
        assert_eq!(test, vec![4, 9]);
        for t in &test {
            assert!(!train.contains(t));
        }
    }
}
