//! Frozen-teacher simulators: mask/box image descriptors, patch and global
//! video descriptors.
//!
//! The teacher model mirrors how the real extractors behave rather than
//! producing perfect labels: descriptors carry a per-(object, frame)
//! perturbation of magnitude `noise_sigma`, and small crops are tilted toward
//! the "texture" canonical (tiny crops read as texture, losing object
//! identity; larger context restores it). Box descriptors are area-weighted
//! concept mixtures over the bounding box and carry no tilt.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use super::concepts::ConceptBank;
use super::oracle::FrameGroundTruth;
use super::spec::{SceneSpec, TeacherConfig};
use crate::seeding;

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("video window of {want} frames with stride {stride} does not fit in {frames} frames")]
    WindowTooLong { want: usize, stride: usize, frames: usize },
    #[error("unknown concept {0}")]
    UnknownConcept(String),
}

/// One simulated segmentation mask.
#[derive(Clone, Debug)]
pub struct SimMask {
    pub object: usize,
    pub pixels: Vec<usize>,
    /// (row0, col0, row1, col1) inclusive.
    pub bbox: (usize, usize, usize, usize),
}

impl SimMask {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    fn bbox_area(&self) -> usize {
        let (r0, c0, r1, c1) = self.bbox;
        (r1 - r0 + 1) * (c1 - c0 + 1)
    }
}

/// Per-object masks from the dominant-object plane.
pub fn extract_masks(object_id: &[u16], width: usize, num_objects: usize) -> Vec<SimMask> {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); num_objects];
    for (i, &id) in object_id.iter().enumerate() {
        if (id as usize) < num_objects {
            buckets[id as usize].push(i);
        }
    }
    buckets
        .into_iter()
        .enumerate()
        .filter(|(_, px)| !px.is_empty())
        .map(|(object, pixels)| {
            let mut bbox = (usize::MAX, usize::MAX, 0usize, 0usize);
            for &p in &pixels {
                let (r, c) = (p / width, p % width);
                bbox = (bbox.0.min(r), bbox.1.min(c), bbox.2.max(r), bbox.3.max(c));
            }
            SimMask { object, pixels, bbox }
        })
        .collect()
}

fn mask_iou(a: &SimMask, b: &SimMask) -> f64 {
    let sa: std::collections::HashSet<usize> = a.pixels.iter().copied().collect();
    let inter = b.pixels.iter().filter(|p| sa.contains(p)).count();
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn mask_overlap(a: &SimMask, b: &SimMask) -> f64 {
    let sb: std::collections::HashSet<usize> = b.pixels.iter().copied().collect();
    let inter = a.pixels.iter().filter(|p| sb.contains(p)).count();
    if a.area() == 0 {
        0.0
    } else {
        inter as f64 / a.area() as f64
    }
}

/// Redundancy filter over mask proposals: larger masks are kept first; a
/// candidate is dropped when it duplicates a kept mask (IoU) or is mostly
/// contained in one (overlap rate).
pub fn filter_masks(mut masks: Vec<SimMask>, iou_thresh: f64, overlap_thresh: f64) -> Vec<SimMask> {
    masks.sort_by(|a, b| b.area().cmp(&a.area()).then(a.object.cmp(&b.object)));
    let mut kept: Vec<SimMask> = Vec::new();
    for m in masks {
        let redundant = kept
            .iter()
            .any(|k| mask_iou(k, &m) >= iou_thresh || mask_overlap(&m, k) >= overlap_thresh);
        if !redundant {
            kept.push(m);
        }
    }
    kept.sort_by_key(|m| m.object);
    kept
}

/// Which image-descriptor pipeline supervises the field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageTargetMode {
    /// Weighted mask + box descriptor.
    Full,
    /// Mask descriptor alone.
    MaskOnly,
    /// Multi-scale patch mixtures (no masks).
    Patches,
}

/// Distinct descriptors plus a per-pixel assignment (-1 = uncovered).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTeacherTargets {
    pub descriptors: Vec<Vec<f64>>,
    pub pixel_desc: Vec<i32>,
}

impl FrameTeacherTargets {
    pub fn pixel_descriptor(&self, pixel: usize) -> Option<&[f64]> {
        let idx = self.pixel_desc[pixel];
        if idx < 0 {
            None
        } else {
            Some(&self.descriptors[idx as usize])
        }
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn add_scaled(acc: &mut [f64], v: &[f64], s: f64) {
    for (a, &x) in acc.iter_mut().zip(v) {
        *a += s * x;
    }
}

fn gaussian_noise(rng: &mut ChaCha12Rng, dim: usize, sigma: f64) -> Vec<f64> {
    let scale = sigma / (dim as f64).sqrt();
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

/// Texture tilt for a crop of `area` pixels (at base resolution).
fn crop_tilt(cfg: &TeacherConfig, area_base: f64) -> f64 {
    if area_base <= 0.0 {
        return 0.0;
    }
    let f = (cfg.tilt_area_ref / area_base).sqrt();
    cfg.texture_tilt * f.clamp(cfg.tilt_clamp.0, cfg.tilt_clamp.1)
}

/// Area-weighted image-concept mixture over a pixel region.
fn region_concept_mixture(
    spec: &SceneSpec,
    bank: &ConceptBank,
    object_id: &[u16],
    pixels: impl Iterator<Item = usize>,
) -> Result<Vec<f64>, TeacherError> {
    let mut counts = vec![0usize; spec.object_count()];
    let mut total = 0usize;
    for p in pixels {
        let id = object_id[p] as usize;
        if id < counts.len() {
            counts[id] += 1;
            total += 1;
        }
    }
    let mut acc = vec![0.0f64; bank.image_dim];
    if total == 0 {
        return Ok(acc);
    }
    for (obj, &cnt) in counts.iter().enumerate() {
        if cnt == 0 {
            continue;
        }
        let name = &spec.primitive(obj).image_concept;
        let v = bank
            .image_concept(name)
            .ok_or_else(|| TeacherError::UnknownConcept(name.clone()))?;
        add_scaled(&mut acc, v, cnt as f64 / total as f64);
    }
    Ok(normalize(acc))
}

/// Weighted mask/box combination.
pub fn blend_descriptors(mask_desc: &[f64], box_desc: &[f64], cfg: &TeacherConfig) -> Vec<f64> {
    let mut acc = vec![0.0; mask_desc.len()];
    add_scaled(&mut acc, mask_desc, cfg.mask_weight);
    add_scaled(&mut acc, box_desc, cfg.box_weight);
    normalize(acc)
}

/// Pixel-aligned 512-d image descriptors for one frame.
///
/// In mask modes every pixel of a mask receives the same descriptor; pixels
/// covered by several masks take the smallest mask's descriptor; pixels
/// covered by none are flagged uncovered. Patch mode averages the
/// descriptors of all covering patches at three scales.
pub fn make_image_targets(
    spec: &SceneSpec,
    bank: &ConceptBank,
    gt: &FrameGroundTruth,
    masks: &[SimMask],
    mode: ImageTargetMode,
    seed: u64,
) -> Result<FrameTeacherTargets, TeacherError> {
    let cfg = &spec.teacher;
    let (width, height) = (gt.width, gt.height);
    let scale2 = ((width / spec.width).max(1) * (height / spec.height).max(1)) as f64;

    if mode == ImageTargetMode::Patches {
        return make_patch_image_targets(spec, bank, gt, seed);
    }

    let texture = bank.texture_canonical();
    let mut descriptors = Vec::with_capacity(masks.len());
    for m in masks {
        let name = &spec.primitive(m.object).image_concept;
        let v = bank
            .image_concept(name)
            .ok_or_else(|| TeacherError::UnknownConcept(name.clone()))?;

        let mut rng = ChaCha12Rng::seed_from_u64(seeding::derive(
            seed,
            "teacher-image",
            &[gt.frame as u64, m.object as u64],
        ));
        let noise_m = gaussian_noise(&mut rng, bank.image_dim, cfg.noise_sigma);
        let noise_b = gaussian_noise(&mut rng, bank.image_dim, cfg.noise_sigma);

        let mut mask_desc = v.to_vec();
        add_scaled(&mut mask_desc, texture, crop_tilt(cfg, m.area() as f64 / scale2));
        for (d, n) in mask_desc.iter_mut().zip(&noise_m) {
            *d += n;
        }
        let mask_desc = normalize(mask_desc);

        let desc = match mode {
            ImageTargetMode::MaskOnly => mask_desc,
            ImageTargetMode::Full => {
                let (r0, c0, r1, c1) = m.bbox;
                let box_pixels = (r0..=r1).flat_map(|r| (c0..=c1).map(move |c| r * width + c));
                let mut box_desc =
                    region_concept_mixture(spec, bank, &gt.object_id, box_pixels)?;
                for (d, n) in box_desc.iter_mut().zip(&noise_b) {
                    *d += n;
                }
                let box_desc = normalize(box_desc);
                blend_descriptors(&mask_desc, &box_desc, cfg)
            }
            ImageTargetMode::Patches => unreachable!(),
        };
        descriptors.push(desc);
    }

    // Smallest mask wins where masks overlap.
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&a, &b| masks[b].area().cmp(&masks[a].area()));
    let mut pixel_desc = vec![-1i32; width * height];
    for &mi in &order {
        for &p in &masks[mi].pixels {
            pixel_desc[p] = mi as i32;
        }
    }

    Ok(FrameTeacherTargets { descriptors, pixel_desc })
}

/// Square patch positions along one axis: start offsets stepping by `stride`.
fn axis_positions(extent: usize, side: usize, stride: usize) -> Vec<usize> {
    if side >= extent {
        return vec![0];
    }
    (0..=(extent - side)).step_by(stride.max(1)).collect()
}

fn make_patch_image_targets(
    spec: &SceneSpec,
    bank: &ConceptBank,
    gt: &FrameGroundTruth,
    seed: u64,
) -> Result<FrameTeacherTargets, TeacherError> {
    let cfg = &spec.teacher;
    let (width, height) = (gt.width, gt.height);
    let scale2 = ((width / spec.width).max(1) * (height / spec.height).max(1)) as f64;
    let texture = bank.texture_canonical();
    let min_side = width.min(height);

    // Per scale: descriptor per patch, and per-pixel covering patch ids.
    let mut all_descs: Vec<Vec<f64>> = Vec::new();
    let mut covering: Vec<Vec<u32>> = vec![Vec::new(); width * height];
    for (si, &scale) in cfg.patch_scales.iter().enumerate() {
        let side = ((scale * min_side as f64).round() as usize).clamp(2, min_side);
        let stride = ((cfg.patch_stride_frac * side as f64).floor() as usize).max(1);
        let rows = axis_positions(height, side, stride);
        let cols = axis_positions(width, side, stride);
        for (pi, (&r0, &c0)) in rows
            .iter()
            .flat_map(|r| cols.iter().map(move |c| (r, c)))
            .enumerate()
        {
            let pixels = (r0..r0 + side).flat_map(|r| (c0..c0 + side).map(move |c| r * width + c));
            let mut desc = region_concept_mixture(spec, bank, &gt.object_id, pixels)?;
            let area = (side * side) as f64 / scale2;
            add_scaled(&mut desc, texture, crop_tilt(cfg, area));
            let mut rng = ChaCha12Rng::seed_from_u64(seeding::derive(
                seed,
                "teacher-patch",
                &[gt.frame as u64, si as u64, pi as u64],
            ));
            let noise = gaussian_noise(&mut rng, bank.image_dim, cfg.noise_sigma);
            for (d, n) in desc.iter_mut().zip(&noise) {
                *d += n;
            }
            let desc = normalize(desc);
            let id = all_descs.len() as u32;
            all_descs.push(desc);
            // Clamp uncovered border pixels to the nearest covered ones.
            let r_end = (r0 + side).min(height);
            let c_end = (c0 + side).min(width);
            let covers_r_edge = r0 == *rows.last().unwrap();
            let covers_c_edge = c0 == *cols.last().unwrap();
            let r_hi = if covers_r_edge { height } else { r_end };
            let c_hi = if covers_c_edge { width } else { c_end };
            for r in r0..r_hi {
                for c in c0..c_hi {
                    covering[r * width + c].push(id);
                }
            }
        }
    }

    // Deduplicate by covering set: pixels sharing a set share a mixture.
    let mut cache: std::collections::HashMap<Vec<u32>, i32> = std::collections::HashMap::new();
    let mut descriptors: Vec<Vec<f64>> = Vec::new();
    let mut pixel_desc = vec![-1i32; width * height];
    for (p, cover) in covering.iter().enumerate() {
        if cover.is_empty() {
            continue;
        }
        let idx = *cache.entry(cover.clone()).or_insert_with(|| {
            let mut acc = vec![0.0f64; bank.image_dim];
            for &pid in cover {
                add_scaled(&mut acc, &all_descs[pid as usize], 1.0 / cover.len() as f64);
            }
            descriptors.push(normalize(acc));
            (descriptors.len() - 1) as i32
        });
        pixel_desc[p] = idx;
    }

    Ok(FrameTeacherTargets { descriptors, pixel_desc })
}

/// Video patch geometry for a frame size: (side, stride, row starts, col starts).
pub fn video_patch_grid(
    height: usize,
    width: usize,
    cfg: &TeacherConfig,
) -> (usize, usize, Vec<usize>, Vec<usize>) {
    let min_side = width.min(height);
    let side = ((cfg.patch_frac * min_side as f64).round() as usize).clamp(2, min_side);
    let stride = ((cfg.patch_stride_frac * side as f64).floor() as usize).max(1);
    (side, stride, axis_positions(height, side, stride), axis_positions(width, side, stride))
}

/// Frames of the temporal window anchored near `t`.
pub fn video_window(
    t: usize,
    frames: usize,
    cfg: &TeacherConfig,
) -> Result<Vec<usize>, TeacherError> {
    let span = (cfg.window_frames - 1) * cfg.temporal_stride;
    if span >= frames {
        return Err(TeacherError::WindowTooLong {
            want: cfg.window_frames,
            stride: cfg.temporal_stride,
            frames,
        });
    }
    let ideal = t.saturating_sub(span / 2);
    let start = ideal.min(frames - 1 - span);
    Ok((0..cfg.window_frames).map(|i| start + i * cfg.temporal_stride).collect())
}

/// Video-language targets for one frame: per-pixel patch descriptors plus
/// the global window descriptor.
pub struct VideoTargets {
    pub patch: FrameTeacherTargets,
    pub global: Vec<f64>,
}

/// Area-weighted video-concept mixture over the patch across the window,
/// per patch; pixels average their covering patches. The global descriptor
/// weights pixels by interaction salience (active objects and the actor
/// dominate), standing in for an action-aligned video encoder.
pub fn make_video_targets(
    spec: &SceneSpec,
    bank: &ConceptBank,
    window_gts: &[&FrameGroundTruth],
    window_frames: &[usize],
) -> Result<VideoTargets, TeacherError> {
    let cfg = &spec.teacher;
    let gt0 = window_gts[0];
    let (width, height) = (gt0.width, gt0.height);
    let (side, stride, rows, cols) = video_patch_grid(height, width, cfg);
    let _ = stride;

    let video_vec = |obj: usize| -> Result<&[f64], TeacherError> {
        let name = &spec.primitive(obj).video_concept;
        bank.video_concept(name).ok_or_else(|| TeacherError::UnknownConcept(name.clone()))
    };

    // Patch descriptors and covering sets.
    let mut patch_descs: Vec<Vec<f64>> = Vec::new();
    let mut covering: Vec<Vec<u32>> = vec![Vec::new(); width * height];
    for &r0 in &rows {
        for &c0 in &cols {
            let mut counts = vec![0usize; spec.object_count()];
            for gt in window_gts {
                for r in r0..r0 + side {
                    for c in c0..c0 + side {
                        counts[gt.object_id[r * width + c] as usize] += 1;
                    }
                }
            }
            let mut acc = vec![0.0f64; bank.video_dim];
            let total: usize = counts.iter().sum();
            for (obj, &cnt) in counts.iter().enumerate() {
                if cnt > 0 {
                    add_scaled(&mut acc, video_vec(obj)?, cnt as f64 / total as f64);
                }
            }
            let id = patch_descs.len() as u32;
            patch_descs.push(normalize(acc));
            let covers_r_edge = r0 == *rows.last().unwrap();
            let covers_c_edge = c0 == *cols.last().unwrap();
            let r_hi = if covers_r_edge { height } else { r0 + side };
            let c_hi = if covers_c_edge { width } else { c0 + side };
            for r in r0..r_hi {
                for c in c0..c_hi {
                    covering[r * width + c].push(id);
                }
            }
        }
    }

    let mut cache: std::collections::HashMap<Vec<u32>, i32> = std::collections::HashMap::new();
    let mut descriptors: Vec<Vec<f64>> = Vec::new();
    let mut pixel_desc = vec![-1i32; width * height];
    for (p, cover) in covering.iter().enumerate() {
        if cover.is_empty() {
            continue;
        }
        let idx = *cache.entry(cover.clone()).or_insert_with(|| {
            let mut acc = vec![0.0f64; bank.video_dim];
            for &pid in cover {
                add_scaled(&mut acc, &patch_descs[pid as usize], 1.0 / cover.len() as f64);
            }
            descriptors.push(normalize(acc));
            (descriptors.len() - 1) as i32
        });
        pixel_desc[p] = idx;
    }

    // Global descriptor: salience-weighted mixture over the whole window.
    let mut weights = vec![0.0f64; spec.object_count()];
    for (gt, &tf) in window_gts.iter().zip(window_frames) {
        for &id in &gt.object_id {
            let obj = id as usize;
            let salience = match spec.stream_of_object(obj) {
                super::solids::StreamKind::Actor => cfg.salience_actor,
                super::solids::StreamKind::Dynamic => {
                    if spec.object_active(obj, tf) {
                        cfg.salience_dynamic_active
                    } else {
                        1.0
                    }
                }
                super::solids::StreamKind::Persistent => 1.0,
            };
            weights[obj] += salience;
        }
    }
    let total: f64 = weights.iter().sum();
    let mut global = vec![0.0f64; bank.video_dim];
    if total > 0.0 {
        for (obj, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                add_scaled(&mut global, video_vec(obj)?, w / total);
            }
        }
    }
    let global = normalize(global);

    Ok(VideoTargets { patch: FrameTeacherTargets { descriptors, pixel_desc }, global })
}
