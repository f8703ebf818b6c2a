//! Whole-image rendering with stream toggles and selectable output planes.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use super::composite::{composite, top_weight_indices};
use super::sampling::{merge_sorted, sample_coarse, sample_fine};
use super::sources::FieldSource;
use super::{RenderError, Toggles};
use crate::real::Real;
use crate::scene::{pixel_ray, Pose, SceneSpec, StreamKind};
use crate::seeding;

#[derive(Clone, Copy, Debug)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub near: f64,
    pub far: f64,
}

impl CameraIntrinsics {
    pub fn from_spec(spec: &SceneSpec) -> Self {
        Self {
            width: spec.width,
            height: spec.height,
            fov_deg: spec.fov_deg,
            near: spec.near,
            far: spec.far,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RenderConfig {
    pub coarse: usize,
    pub fine: usize,
    pub feature_top: usize,
    pub jitter: bool,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { coarse: 64, fine: 64, feature_top: 32, jitter: true, seed: 0 }
    }
}

/// Output plane selection.
#[derive(Clone, Copy, Debug, Default)]
pub struct PlaneSelect {
    pub rgb: bool,
    pub depth: bool,
    pub beta: bool,
    pub mass: bool,
    pub phi: bool,
    pub psi: bool,
}

impl PlaneSelect {
    pub fn rgb_only() -> Self {
        Self { rgb: true, ..Self::default() }
    }

    pub fn all() -> Self {
        Self { rgb: true, depth: true, beta: true, mass: true, phi: true, psi: true }
    }

    /// Parse "rgb,depth,phi,psi,mass,beta".
    pub fn parse(s: &str) -> Result<Self, RenderError> {
        let mut p = Self::default();
        for part in s.split(',').map(|p| p.trim()).filter(|p| !p.is_empty()) {
            match part {
                "rgb" => p.rgb = true,
                "depth" => p.depth = true,
                "beta" => p.beta = true,
                "mass" => p.mass = true,
                "phi" => p.phi = true,
                "psi" => p.psi = true,
                other => return Err(RenderError::BadToggle(other.into())),
            }
        }
        Ok(p)
    }
}

/// Rendered planes (f32 at the IO boundary).
#[derive(Clone, Debug)]
pub struct ImagePlanes {
    pub width: usize,
    pub height: usize,
    pub phi_dim: usize,
    pub psi_dim: usize,
    pub rgb: Option<Vec<f32>>,
    pub depth: Option<Vec<f32>>,
    pub beta: Option<Vec<f32>>,
    /// H*W*3 per-stream weight mass.
    pub mass: Option<Vec<f32>>,
    /// H*W*phi_dim unit (or zero) vectors.
    pub phi: Option<Vec<f32>>,
    pub psi: Option<Vec<f32>>,
}

struct RowOutput {
    rgb: Vec<f32>,
    depth: Vec<f32>,
    beta: Vec<f32>,
    mass: Vec<f32>,
    phi: Vec<f32>,
    psi: Vec<f32>,
}

/// Render one frame through any field source.
pub fn render_image<T: Real>(
    field: &dyn FieldSource<T>,
    pose: &Pose,
    cam: &CameraIntrinsics,
    frame: usize,
    toggles: Toggles,
    planes: PlaneSelect,
    cfg: &RenderConfig,
) -> Result<ImagePlanes, RenderError> {
    toggles.validate()?;
    if cam.near >= cam.far {
        return Err(RenderError::BadBounds(cam.near, cam.far));
    }
    if frame >= field.frames() {
        return Err(RenderError::FrameOutOfRange(frame, field.frames()));
    }

    let rows: Vec<RowOutput> = (0..cam.height)
        .into_par_iter()
        .map(|row| render_row(field, pose, cam, frame, toggles, planes, cfg, row))
        .collect();

    let n = cam.width * cam.height;
    let (phi_dim, psi_dim) = (field.phi_dim(), field.psi_dim());
    let mut out = ImagePlanes {
        width: cam.width,
        height: cam.height,
        phi_dim,
        psi_dim,
        rgb: planes.rgb.then(|| Vec::with_capacity(n * 3)),
        depth: planes.depth.then(|| Vec::with_capacity(n)),
        beta: planes.beta.then(|| Vec::with_capacity(n)),
        mass: planes.mass.then(|| Vec::with_capacity(n * 3)),
        phi: planes.phi.then(|| Vec::with_capacity(n * phi_dim)),
        psi: planes.psi.then(|| Vec::with_capacity(n * psi_dim)),
    };
    for r in rows {
        if let Some(p) = out.rgb.as_mut() {
            p.extend(r.rgb);
        }
        if let Some(p) = out.depth.as_mut() {
            p.extend(r.depth);
        }
        if let Some(p) = out.beta.as_mut() {
            p.extend(r.beta);
        }
        if let Some(p) = out.mass.as_mut() {
            p.extend(r.mass);
        }
        if let Some(p) = out.phi.as_mut() {
            p.extend(r.phi);
        }
        if let Some(p) = out.psi.as_mut() {
            p.extend(r.psi);
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn render_row<T: Real>(
    field: &dyn FieldSource<T>,
    pose: &Pose,
    cam: &CameraIntrinsics,
    frame: usize,
    toggles: Toggles,
    planes: PlaneSelect,
    cfg: &RenderConfig,
    row: usize,
) -> RowOutput {
    let width = cam.width;
    let dirs: Vec<([f64; 3], [f64; 3])> = (0..width)
        .map(|col| pixel_ray(pose, cam.width, cam.height, cam.fov_deg, row, col))
        .collect();

    // Coarse pass.
    let coarse: Vec<Vec<f64>> = (0..width)
        .map(|col| {
            let mut rng = ChaCha12Rng::seed_from_u64(seeding::derive(
                cfg.seed,
                "render",
                &[frame as u64, row as u64, col as u64],
            ));
            sample_coarse(cam.near, cam.far, cfg.coarse, cfg.jitter.then_some(&mut rng))
        })
        .collect();
    let coarse_geo = eval_rows(field, pose, &dirs, &coarse, frame, toggles);
    let enabled = [toggles.persistent, toggles.dynamic, toggles.actor];

    // Importance pass.
    let merged: Vec<Vec<f64>> = (0..width)
        .map(|col| {
            let out = composite_ray(&coarse_geo, col, &coarse[col], cam.far, enabled);
            let weights: Vec<f64> = out.weights.iter().map(|w| w.as_f64()).collect();
            let mut rng = ChaCha12Rng::seed_from_u64(seeding::derive(
                cfg.seed,
                "render-fine",
                &[frame as u64, row as u64, col as u64],
            ));
            let fine = sample_fine(cam.near, cam.far, &coarse[col], &weights, cfg.fine, &mut rng);
            merge_sorted(&coarse[col], &fine)
        })
        .collect();
    let geo = eval_rows(field, pose, &dirs, &merged, frame, toggles);

    let want_features = planes.phi || planes.psi;
    let (phi_dim, psi_dim) = (field.phi_dim(), field.psi_dim());
    let mut out = RowOutput {
        rgb: Vec::new(),
        depth: Vec::new(),
        beta: Vec::new(),
        mass: Vec::new(),
        phi: Vec::new(),
        psi: Vec::new(),
    };

    // Per-pixel composites plus selected indices for features.
    let mut selected_flat: Vec<usize> = Vec::new();
    let mut selected_per_pixel: Vec<Vec<usize>> = Vec::with_capacity(width);
    let mut composites = Vec::with_capacity(width);
    for col in 0..width {
        let c = composite_ray(&geo, col, &merged[col], cam.far, enabled);
        if want_features {
            let sel = top_weight_indices(&c.weights, cfg.feature_top);
            let n = merged[col].len();
            selected_flat.extend(sel.iter().map(|&k| col * n + k));
            selected_per_pixel.push(sel);
        }
        composites.push(c);
    }

    // Feature pass over the selected samples only, one batch per stream.
    let mut feat: Option<[(Vec<T>, Vec<T>); 3]> = None;
    if want_features && !selected_flat.is_empty() {
        let n = merged[0].len();
        let sel_world: Vec<[f64; 3]> = selected_flat
            .iter()
            .map(|&fi| {
                let (col, k) = (fi / n, fi % n);
                point_at(pose, dirs[col].0, merged[col][k])
            })
            .collect();
        let sel_cam: Vec<[f64; 3]> = selected_flat
            .iter()
            .map(|&fi| {
                let (col, k) = (fi / n, fi % n);
                scale(dirs[col].1, merged[col][k])
            })
            .collect();
        let sel_frames = vec![frame; selected_flat.len()];
        let per_stream = StreamKind::ALL.map(|stream| {
            if !toggles.enabled(stream) {
                return (Vec::new(), Vec::new());
            }
            let hidden_sel: Option<Vec<T>> = geo[stream.index()].hidden.as_ref().map(|h| {
                let w = h.len() / (width * n);
                let mut out = Vec::with_capacity(selected_flat.len() * w);
                for &fi in &selected_flat {
                    out.extend_from_slice(&h[fi * w..(fi + 1) * w]);
                }
                out
            });
            field.eval_features(stream, &sel_world, &sel_cam, &sel_frames, hidden_sel.as_deref())
        });
        feat = Some(per_stream);
    }

    let mut sel_cursor = 0usize;
    for col in 0..width {
        let c = &composites[col];
        if planes.rgb {
            out.rgb.extend(c.color.iter().map(|v| v.as_f64().clamp(0.0, 1.0) as f32));
        }
        if planes.depth {
            out.depth.push(c.depth.as_f64() as f32);
        }
        if planes.beta {
            out.beta.push(c.beta.as_f64() as f32);
        }
        if planes.mass {
            out.mass.extend(c.stream_mass.iter().map(|v| v.as_f64() as f32));
        }
        if want_features {
            let sel = &selected_per_pixel[col];
            let (phi, psi) = blend_selected(
                &geo,
                feat.as_ref().unwrap(),
                sel,
                sel_cursor,
                col,
                merged[col].len(),
                &c.weights,
                enabled,
                phi_dim,
                psi_dim,
            );
            sel_cursor += sel.len();
            if planes.phi {
                out.phi.extend(phi.iter().map(|&v| v as f32));
            }
            if planes.psi {
                out.psi.extend(psi.iter().map(|&v| v as f32));
            }
        }
    }
    out
}

fn point_at(pose: &Pose, dir: [f64; 3], t: f64) -> [f64; 3] {
    [
        pose.position[0] + dir[0] * t,
        pose.position[1] + dir[1] * t,
        pose.position[2] + dir[2] * t,
    ]
}

fn scale(v: [f64; 3], s: f64) -> [f64; 3] {
    [v[0] * s, v[1] * s, v[2] * s]
}

/// Evaluate all three streams over a row's sample points.
fn eval_rows<T: Real>(
    field: &dyn FieldSource<T>,
    pose: &Pose,
    dirs: &[([f64; 3], [f64; 3])],
    depths: &[Vec<f64>],
    frame: usize,
    toggles: Toggles,
) -> [super::sources::GeomBatch<T>; 3] {
    let total: usize = depths.iter().map(|d| d.len()).sum();
    let mut world = Vec::with_capacity(total);
    let mut cam_pts = Vec::with_capacity(total);
    let mut view = Vec::with_capacity(total);
    for (col, d) in depths.iter().enumerate() {
        for &t in d {
            world.push(point_at(pose, dirs[col].0, t));
            cam_pts.push(scale(dirs[col].1, t));
            view.push(dirs[col].0);
        }
    }
    let frames = vec![frame; total];
    StreamKind::ALL.map(|stream| {
        if toggles.enabled(stream) {
            field.eval_geometry(stream, &world, &cam_pts, &view, &frames)
        } else {
            super::sources::GeomBatch {
                sigma: Vec::new(),
                color: Vec::new(),
                beta: Vec::new(),
                hidden: None,
            }
        }
    })
}

/// Composite one pixel from row-batched geometry.
fn composite_ray<T: Real>(
    geo: &[super::sources::GeomBatch<T>; 3],
    col: usize,
    depths: &[f64],
    far: f64,
    enabled: [bool; 3],
) -> super::composite::CompositeOutput<T> {
    let n = depths.len();
    let range = |per: usize| col * n * per..(col + 1) * n * per;
    let views: [(&[T], &[T], &[T]); 3] = [0, 1, 2].map(|s| {
        if enabled[s] && !geo[s].sigma.is_empty() {
            (&geo[s].sigma[range(1)], &geo[s].color[range(3)], &geo[s].beta[range(1)])
        } else {
            (&[] as &[T], &[] as &[T], &[] as &[T])
        }
    });
    composite(
        depths,
        far,
        [views[0].0, views[1].0, views[2].0],
        [views[0].1, views[1].1, views[2].1],
        [views[0].2, views[1].2, views[2].2],
        enabled,
    )
}

/// Blend per-stream features of the selected samples of one pixel:
/// renormalized top weights times per-sample density shares, summed and
/// L2-normalized. `feat` rows are indexed by selection order starting at
/// `sel_offset`; geometry arrays are row-flat (`col * n + k`).
#[allow(clippy::too_many_arguments)]
fn blend_selected<T: Real>(
    geo: &[super::sources::GeomBatch<T>; 3],
    feat: &[(Vec<T>, Vec<T>); 3],
    sel: &[usize],
    sel_offset: usize,
    col: usize,
    n: usize,
    weights: &[T],
    enabled: [bool; 3],
    phi_dim: usize,
    psi_dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut phi = vec![0.0f64; phi_dim];
    let mut psi = vec![0.0f64; psi_dim];
    let wsum: f64 = sel.iter().map(|&k| weights[k].as_f64()).sum();
    if wsum <= 0.0 {
        return (phi, psi);
    }
    for (j, &k) in sel.iter().enumerate() {
        let row = sel_offset + j;
        let flat = col * n + k;
        let mut sigma_tot = 0.0;
        for s in 0..3 {
            if enabled[s] && !geo[s].sigma.is_empty() {
                sigma_tot += geo[s].sigma[flat].as_f64();
            }
        }
        if sigma_tot <= 0.0 {
            continue;
        }
        let w = weights[k].as_f64() / wsum;
        for s in 0..3 {
            if !enabled[s] || geo[s].sigma.is_empty() {
                continue;
            }
            let ws = w * geo[s].sigma[flat].as_f64() / sigma_tot;
            if ws > 0.0 {
                for (o, &v) in phi.iter_mut().zip(&feat[s].0[row * phi_dim..(row + 1) * phi_dim]) {
                    *o += ws * v.as_f64();
                }
                for (o, &v) in psi.iter_mut().zip(&feat[s].1[row * psi_dim..(row + 1) * psi_dim]) {
                    *o += ws * v.as_f64();
                }
            }
        }
    }
    normalize(&mut phi);
    normalize(&mut psi);
    (phi, psi)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
