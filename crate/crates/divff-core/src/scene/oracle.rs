//! Ground-truth oracle renderer: fine midpoint quadrature through the
//! analytic fields. Independent of the production renderer so the two can be
//! checked against each other.

use rayon::prelude::*;
use thiserror::Error;

use super::camera::pixel_ray;
use super::solids::{add3, norm3, scale3, solid_density, StreamKind, Vec3};
use super::spec::SceneSpec;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
}

#[derive(Clone, Copy, Debug)]
pub struct OracleOptions {
    pub samples: usize,
    /// Resolution multiplier (used for teacher-side extraction).
    pub supersample: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { samples: 1024, supersample: 1 }
    }
}

/// Per-frame exact ground truth.
#[derive(Clone, Debug)]
pub struct FrameGroundTruth {
    pub frame: usize,
    pub width: usize,
    pub height: usize,
    /// H*W*3 in [0,1].
    pub rgb: Vec<f32>,
    /// Expected ray termination distance.
    pub depth: Vec<f32>,
    /// 0 persistent, 1 dynamic, 2 actor (argmax of stream mass, ties low).
    pub stream_label: Vec<u8>,
    /// Dominant solid per pixel, as a global object index.
    pub object_id: Vec<u16>,
    /// H*W*3 per-stream compositing mass.
    pub stream_mass: Vec<f32>,
    /// Interaction hotspot: union of the actor and active-object bounding
    /// boxes, dilated.
    pub hotspot: Vec<u8>,
}

impl FrameGroundTruth {
    pub fn object_mask(&self, object: usize) -> Vec<u8> {
        self.object_id.iter().map(|&id| u8::from(id as usize == object)).collect()
    }
}

struct SolidRef {
    object: usize,
    stream: StreamKind,
    albedo: [f64; 3],
    density: f64,
    softness: f64,
}

/// Flattened view of every solid at frame t (dynamic offsets and the actor's
/// camera-frame wobble already applied).
fn solids_at(spec: &SceneSpec, t: usize) -> Vec<(super::solids::Solid, SolidRef)> {
    let mut out = Vec::with_capacity(spec.object_count());
    for (i, p) in spec.persistent.iter().enumerate() {
        out.push((
            p.solid.clone(),
            SolidRef {
                object: spec.object_index(StreamKind::Persistent, i),
                stream: StreamKind::Persistent,
                albedo: p.albedo,
                density: p.density,
                softness: p.softness,
            },
        ));
    }
    for (i, d) in spec.dynamic.iter().enumerate() {
        out.push((
            d.base.solid.translated(d.trajectory.position(t)),
            SolidRef {
                object: spec.object_index(StreamKind::Dynamic, i),
                stream: StreamKind::Dynamic,
                albedo: d.base.albedo,
                density: d.base.density,
                softness: d.base.softness,
            },
        ));
    }
    for (i, a) in spec.actor.iter().enumerate() {
        out.push((
            a.base.solid.translated(a.offset_at(t, spec.frames)),
            SolidRef {
                object: spec.object_index(StreamKind::Actor, i),
                stream: StreamKind::Actor,
                albedo: a.base.albedo,
                density: a.base.density,
                softness: a.base.softness,
            },
        ));
    }
    out
}

struct PixelResult {
    rgb: [f64; 3],
    depth: f64,
    stream_mass: [f64; 3],
    object: u16,
}

fn integrate_pixel(
    spec: &SceneSpec,
    solids: &[(super::solids::Solid, SolidRef)],
    origin: Vec3,
    dir_world: Vec3,
    dir_cam: Vec3,
    samples: usize,
) -> PixelResult {
    let delta = (spec.far - spec.near) / samples as f64;
    let mut trans = 1.0f64;
    let mut rgb = [0.0f64; 3];
    let mut depth = 0.0f64;
    let mut stream_mass = [0.0f64; 3];
    let mut object_mass = vec![0.0f64; spec.object_count()];
    let mut sigma_buf = vec![0.0f64; solids.len()];

    for k in 0..samples {
        let tk = spec.near + (k as f64 + 0.5) * delta;
        let p_world = add3(origin, scale3(dir_world, tk));
        let p_cam = scale3(dir_cam, tk);
        let mut sigma_tot = 0.0;
        for (si, (solid, meta)) in solids.iter().enumerate() {
            let p = if meta.stream == StreamKind::Actor { p_cam } else { p_world };
            let s = solid_density(solid, p, meta.density, meta.softness);
            sigma_buf[si] = s;
            sigma_tot += s;
        }
        if sigma_tot <= 0.0 {
            continue;
        }
        let alpha = 1.0 - (-sigma_tot * delta).exp();
        let w = trans * alpha;
        trans *= 1.0 - alpha;
        let inv = 1.0 / sigma_tot;
        for (si, (_, meta)) in solids.iter().enumerate() {
            let share = sigma_buf[si] * inv;
            if share > 0.0 {
                let ws = w * share;
                for c in 0..3 {
                    rgb[c] += ws * meta.albedo[c];
                }
                stream_mass[meta.stream.index()] += ws;
                object_mass[meta.object] += ws;
            }
        }
        depth += w * tk;
        if trans < 1e-9 {
            break;
        }
    }
    depth += trans * spec.far;

    let mut best = 0usize;
    for (i, &m) in object_mass.iter().enumerate() {
        if m > object_mass[best] {
            best = i;
        }
    }
    PixelResult { rgb, depth, stream_mass, object: best as u16 }
}

/// Render exact ground truth for one frame.
pub fn render_ground_truth_frame(
    spec: &SceneSpec,
    t: usize,
    options: &OracleOptions,
) -> Result<FrameGroundTruth, OracleError> {
    let width = spec.width * options.supersample.max(1);
    let height = spec.height * options.supersample.max(1);
    let pose = spec.camera.pose(t, spec.frames);
    if norm3(pose.forward) < 1e-9 {
        return Err(OracleError::DegenerateCamera(format!("frame {t}")));
    }
    let solids = solids_at(spec, t);

    let rows: Vec<Vec<PixelResult>> = (0..height)
        .into_par_iter()
        .map(|row| {
            (0..width)
                .map(|col| {
                    let (d_world, d_cam) =
                        pixel_ray(&pose, width, height, spec.fov_deg, row, col);
                    integrate_pixel(spec, &solids, pose.position, d_world, d_cam, options.samples)
                })
                .collect()
        })
        .collect();

    let n = width * height;
    let mut rgb = Vec::with_capacity(n * 3);
    let mut depth = Vec::with_capacity(n);
    let mut stream_label = Vec::with_capacity(n);
    let mut object_id = Vec::with_capacity(n);
    let mut stream_mass = Vec::with_capacity(n * 3);
    for row in rows {
        for px in row {
            rgb.extend(px.rgb.iter().map(|&v| v.clamp(0.0, 1.0) as f32));
            depth.push(px.depth as f32);
            let mut label = 0u8;
            for s in 1..3 {
                if px.stream_mass[s] > px.stream_mass[label as usize] {
                    label = s as u8;
                }
            }
            stream_label.push(label);
            object_id.push(px.object);
            stream_mass.extend(px.stream_mass.iter().map(|&v| v as f32));
        }
    }

    let hotspot = hotspot_mask(spec, t, width, height, &stream_label, &object_id);

    Ok(FrameGroundTruth {
        frame: t,
        width,
        height,
        rgb,
        depth,
        stream_label,
        object_id,
        stream_mass,
        hotspot,
    })
}

pub fn render_ground_truth(
    spec: &SceneSpec,
    options: &OracleOptions,
) -> Result<Vec<FrameGroundTruth>, OracleError> {
    (0..spec.frames).map(|t| render_ground_truth_frame(spec, t, options)).collect()
}

fn bbox_of(pixels: impl Iterator<Item = usize>, width: usize) -> Option<(usize, usize, usize, usize)> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for idx in pixels {
        let (r, c) = (idx / width, idx % width);
        b = Some(match b {
            None => (r, c, r, c),
            Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
        });
    }
    b
}

fn fill_rect(mask: &mut [u8], width: usize, height: usize, rect: (usize, usize, usize, usize), dilate: usize) {
    let (r0, c0, r1, c1) = rect;
    let r0 = r0.saturating_sub(dilate);
    let c0 = c0.saturating_sub(dilate);
    let r1 = (r1 + dilate).min(height - 1);
    let c1 = (c1 + dilate).min(width - 1);
    for r in r0..=r1 {
        for c in c0..=c1 {
            mask[r * width + c] = 1;
        }
    }
}

/// Union of the actor bounding box and every active dynamic object's
/// bounding box, dilated.
fn hotspot_mask(
    spec: &SceneSpec,
    t: usize,
    width: usize,
    height: usize,
    stream_label: &[u8],
    object_id: &[u16],
) -> Vec<u8> {
    let mut mask = vec![0u8; width * height];
    let dilate = spec.teacher.hotspot_dilation;
    if let Some(rect) = bbox_of(
        stream_label.iter().enumerate().filter(|(_, &l)| l == 2).map(|(i, _)| i),
        width,
    ) {
        fill_rect(&mut mask, width, height, rect, dilate);
    }
    for obj in 0..spec.object_count() {
        if !spec.object_active(obj, t) {
            continue;
        }
        if let Some(rect) = bbox_of(
            object_id.iter().enumerate().filter(|(_, &id)| id as usize == obj).map(|(i, _)| i),
            width,
        ) {
            fill_rect(&mut mask, width, height, rect, dilate);
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::camera::CameraPath;
    use crate::scene::spec::{kitchen_toy, Primitive, SceneSpec, TeacherConfig};
    use crate::scene::solids::Solid;

    fn empty_scene() -> SceneSpec {
        SceneSpec {
            schema: super::super::spec::SCENE_SCHEMA.into(),
            name: "empty".into(),
            frames: 2,
            width: 8,
            height: 8,
            fov_deg: 50.0,
            near: 0.5,
            far: 5.0,
            camera: CameraPath::Orbit {
                center: [0.0; 3],
                radius: 3.0,
                height: 1.0,
                look_at: [0.0; 3],
                arc_deg: 30.0,
                start_deg: 0.0,
                bob_amplitude: 0.0,
                bob_cycles: 0.0,
            },
            persistent: vec![],
            dynamic: vec![],
            actor: vec![],
            affordances: vec![],
            teacher: TeacherConfig::default(),
        }
    }

    #[test]
    fn empty_scene_renders_black_background() {
        let spec = empty_scene();
        let gt = render_ground_truth_frame(&spec, 0, &OracleOptions { samples: 64, supersample: 1 })
            .unwrap();
        assert!(gt.rgb.iter().all(|&v| v == 0.0));
        assert!(gt.stream_label.iter().all(|&l| l == 0));
        assert!(gt.depth.iter().all(|&d| (d - spec.far as f32).abs() < 1e-4));
    }

    #[test]
    fn opaque_slab_has_constant_color_and_analytic_depth() {
        let mut spec = empty_scene();
        // Wall 2 units in front of the camera ring, facing it.
        spec.camera = CameraPath::Keyframes { poses: vec![([0.0, -3.0, 0.0], [0.0, 0.0, 0.0])] };
        spec.frames = 1;
        spec.persistent.push(Primitive {
            name: "wall".into(),
            solid: Solid::Slab {
                point: [0.0, 0.0, 0.0],
                normal: [0.0, 1.0, 0.0],
                thickness: 0.4,
                extent: None,
            },
            density: 500.0,
            softness: 0.02,
            albedo: [0.3, 0.6, 0.9],
            image_concept: "wall".into(),
            video_concept: "ambient".into(),
        });
        let gt = render_ground_truth_frame(&spec, 0, &OracleOptions { samples: 2048, supersample: 1 })
            .unwrap();
        // Center pixel: the slab front face is at y = -0.2, i.e. 2.8 from the camera.
        let center = (4 * 8 + 4) * 3;
        assert!((gt.rgb[center] - 0.3).abs() < 0.02);
        assert!((gt.rgb[center + 1] - 0.6).abs() < 0.02);
        assert!((gt.rgb[center + 2] - 0.9).abs() < 0.02);
        let d = gt.depth[4 * 8 + 4];
        assert!((d - 2.8).abs() < 0.05, "depth {d}");
    }

    #[test]
    fn hotspot_covers_actor_pixels() {
        let spec = kitchen_toy();
        let gt = render_ground_truth_frame(&spec, 10, &OracleOptions { samples: 256, supersample: 1 })
            .unwrap();
        let mut actor_seen = false;
        for (i, &l) in gt.stream_label.iter().enumerate() {
            if l == 2 {
                actor_seen = true;
                assert_eq!(gt.hotspot[i], 1, "actor pixel {i} outside hotspot");
            }
        }
        assert!(actor_seen, "actor should be visible in the fixture");
    }

    #[test]
    fn ground_truth_is_deterministic() {
        let spec = kitchen_toy();
        let opts = OracleOptions { samples: 128, supersample: 1 };
        let a = render_ground_truth_frame(&spec, 3, &opts).unwrap();
        let b = render_ground_truth_frame(&spec, 3, &opts).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.object_id, b.object_id);
    }
}
