//! Analytic solids and per-stream field evaluation.
//!
//! A solid is a signed-distance region with a smoothstep density shell:
//! density ramps from 0 at the surface to the full amplitude at depth
//! `softness` inside. Smooth profiles keep the quadrature error of the
//! renderer small and the fields learnable.

use serde::{Deserialize, Serialize};

use super::spec::SceneSpec;

pub type Vec3 = [f64; 3];

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn normalize3(a: Vec3) -> Vec3 {
    let n = norm3(a);
    if n == 0.0 {
        a
    } else {
        scale3(a, 1.0 / n)
    }
}

/// Analytic solid shapes. `Shell` is a hollow sphere used as an enclosing
/// room so every ray terminates on scene content.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Solid {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extents: Vec3 },
    /// Finite-thickness plane: |dot(x - point, normal)| <= thickness/2,
    /// optionally bounded laterally by `extent` around `point`.
    Slab { point: Vec3, normal: Vec3, thickness: f64, extent: Option<f64> },
    Shell { center: Vec3, inner_radius: f64, outer_radius: f64 },
}

impl Solid {
    /// Signed distance INTO the solid: positive inside, negative outside.
    pub fn depth_inside(&self, p: Vec3) -> f64 {
        match self {
            Solid::Sphere { center, radius } => radius - norm3(sub3(p, *center)),
            Solid::Box { center, half_extents } => {
                let d = sub3(p, *center);
                let mut m = f64::INFINITY;
                for i in 0..3 {
                    m = m.min(half_extents[i] - d[i].abs());
                }
                m
            }
            Solid::Slab { point, normal, thickness, extent } => {
                let n = normalize3(*normal);
                let d = sub3(p, *point);
                let along = dot3(d, n);
                let mut m = thickness / 2.0 - along.abs();
                if let Some(e) = extent {
                    let lateral = sub3(d, scale3(n, along));
                    m = m.min(e - norm3(lateral));
                }
                m
            }
            Solid::Shell { center, inner_radius, outer_radius } => {
                let r = norm3(sub3(p, *center));
                (r - inner_radius).min(outer_radius - r)
            }
        }
    }

    pub fn translated(&self, offset: Vec3) -> Solid {
        match self {
            Solid::Sphere { center, radius } => {
                Solid::Sphere { center: add3(*center, offset), radius: *radius }
            }
            Solid::Box { center, half_extents } => {
                Solid::Box { center: add3(*center, offset), half_extents: *half_extents }
            }
            Solid::Slab { point, normal, thickness, extent } => Solid::Slab {
                point: add3(*point, offset),
                normal: *normal,
                thickness: *thickness,
                extent: *extent,
            },
            Solid::Shell { center, inner_radius, outer_radius } => Solid::Shell {
                center: add3(*center, offset),
                inner_radius: *inner_radius,
                outer_radius: *outer_radius,
            },
        }
    }
}

/// C1 ramp from 0 to 1 over [0, 1].
fn smoothstep01(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Density of one solid at a point, given its amplitude and shell softness.
pub fn solid_density(solid: &Solid, p: Vec3, amplitude: f64, softness: f64) -> f64 {
    let depth = solid.depth_inside(p);
    if depth <= 0.0 {
        0.0
    } else {
        amplitude * smoothstep01(depth / softness.max(1e-9))
    }
}

/// Which of the three component fields a solid belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Persistent,
    Dynamic,
    Actor,
}

impl StreamKind {
    pub const ALL: [StreamKind; 3] = [StreamKind::Persistent, StreamKind::Dynamic, StreamKind::Actor];

    pub fn index(self) -> usize {
        match self {
            StreamKind::Persistent => 0,
            StreamKind::Dynamic => 1,
            StreamKind::Actor => 2,
        }
    }
}

/// Result of evaluating one stream of the analytic scene at a point.
#[derive(Clone, Copy, Debug)]
pub struct StreamSample {
    pub sigma: f64,
    /// Density-weighted albedo mix (valid when sigma > 0).
    pub color: [f64; 3],
    /// Solid with the largest density contribution, as a global object index
    /// (concept names hang off `SceneSpec::primitive`).
    pub object: Option<usize>,
}

impl StreamSample {
    fn empty() -> Self {
        Self { sigma: 0.0, color: [0.0; 3], object: None }
    }
}

/// Evaluate one stream of the scene at a world-space point.
///
/// Dynamic solids are shifted by their trajectory at frame `t`. Actor solids
/// live in camera coordinates: the caller passes the camera-frame point via
/// `p_cam`, which is required for [`StreamKind::Actor`].
pub fn sample_stream(
    spec: &SceneSpec,
    stream: StreamKind,
    p_world: Vec3,
    p_cam: Option<Vec3>,
    t: usize,
) -> StreamSample {
    let mut total_sigma = 0.0;
    let mut color = [0.0f64; 3];
    let mut best: Option<(f64, usize)> = None;
    let mut visit = |object_index: usize,
                     solid: &Solid,
                     p: Vec3,
                     amplitude: f64,
                     softness: f64,
                     albedo: [f64; 3]| {
        let s = solid_density(solid, p, amplitude, softness);
        if s > 0.0 {
            total_sigma += s;
            for c in 0..3 {
                color[c] += s * albedo[c];
            }
            if best.map_or(true, |(bs, _)| s > bs) {
                best = Some((s, object_index));
            }
        }
    };

    match stream {
        StreamKind::Persistent => {
            for (i, prim) in spec.persistent.iter().enumerate() {
                visit(spec.object_index(StreamKind::Persistent, i), &prim.solid, p_world, prim.density, prim.softness, prim.albedo);
            }
        }
        StreamKind::Dynamic => {
            for (i, dyn_prim) in spec.dynamic.iter().enumerate() {
                let offset = dyn_prim.trajectory.position(t);
                let solid = dyn_prim.base.solid.translated(offset);
                visit(
                    spec.object_index(StreamKind::Dynamic, i),
                    &solid,
                    p_world,
                    dyn_prim.base.density,
                    dyn_prim.base.softness,
                    dyn_prim.base.albedo,
                );
            }
        }
        StreamKind::Actor => {
            let Some(p_cam) = p_cam else {
                return StreamSample::empty();
            };
            for (i, act) in spec.actor.iter().enumerate() {
                let offset = act.offset_at(t, spec.frames);
                let solid = act.base.solid.translated(offset);
                visit(
                    spec.object_index(StreamKind::Actor, i),
                    &solid,
                    p_cam,
                    act.base.density,
                    act.base.softness,
                    act.base.albedo,
                );
            }
        }
    }

    if total_sigma <= 0.0 {
        return StreamSample::empty();
    }
    let inv = 1.0 / total_sigma;
    let (_, obj) = best.unwrap();
    StreamSample {
        sigma: total_sigma,
        color: [color[0] * inv, color[1] * inv, color[2] * inv],
        object: Some(obj),
    }
}

/// Evaluate all three streams and return (sigma, color, concepts) of the
/// summed field, matching the composite the renderer integrates.
pub fn sample_scene(
    spec: &SceneSpec,
    p_world: Vec3,
    p_cam: Option<Vec3>,
    t: usize,
) -> [StreamSample; 3] {
    [
        sample_stream(spec, StreamKind::Persistent, p_world, p_cam, t),
        sample_stream(spec, StreamKind::Dynamic, p_world, p_cam, t),
        sample_stream(spec, StreamKind::Actor, p_world, p_cam, t),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::spec::kitchen_toy;

    #[test]
    fn point_outside_everything_is_empty() {
        let spec = kitchen_toy();
        // Far outside the room shell.
        let s = sample_stream(&spec, StreamKind::Persistent, [100.0, 100.0, 100.0], None, 0);
        assert_eq!(s.sigma, 0.0);
        assert!(s.object.is_none());
    }

    #[test]
    fn sphere_center_has_full_amplitude_and_albedo() {
        let spec = kitchen_toy();
        let (idx, prim) = spec
            .dynamic
            .iter()
            .enumerate()
            .find(|(_, d)| matches!(d.base.solid, Solid::Sphere { .. }))
            .map(|(i, d)| (i, &d.base))
            .expect("kitchen toy has a dynamic sphere");
        let Solid::Sphere { center, .. } = prim.solid else { unreachable!() };
        let offset = spec.dynamic[idx].trajectory.position(0);
        let p = add3(center, offset);
        let s = sample_stream(&spec, StreamKind::Dynamic, p, None, 0);
        assert!((s.sigma - prim.density).abs() < 1e-12);
        for c in 0..3 {
            assert!((s.color[c] - prim.albedo[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn dynamic_support_translates_with_trajectory() {
        let spec = kitchen_toy();
        let t_half = spec.frames / 2;
        // Find an object whose trajectory moves by t_half.
        let (idx, dyn_prim) = spec
            .dynamic
            .iter()
            .enumerate()
            .find(|(_, d)| {
                let a = d.trajectory.position(0);
                let b = d.trajectory.position(t_half);
                norm3(sub3(a, b)) > 0.1
            })
            .expect("kitchen toy has a moving object");
        let delta = sub3(dyn_prim.trajectory.position(t_half), dyn_prim.trajectory.position(0));
        let Solid::Sphere { center, .. } = dyn_prim.base.solid else {
            // Box works the same way; pick its center.
            let Solid::Box { center, .. } = dyn_prim.base.solid else { panic!() };
            let p0 = add3(center, dyn_prim.trajectory.position(0));
            let s0 = sample_stream(&spec, StreamKind::Dynamic, p0, None, 0);
            let s_shifted = sample_stream(&spec, StreamKind::Dynamic, add3(p0, delta), None, t_half);
            assert!((s0.sigma - s_shifted.sigma).abs() < 1e-9);
            let _ = idx;
            return;
        };
        let p0 = add3(center, dyn_prim.trajectory.position(0));
        let s0 = sample_stream(&spec, StreamKind::Dynamic, p0, None, 0);
        assert!(s0.sigma > 0.0);
        // Same relative point at t_half, translated by the trajectory delta.
        let s1 = sample_stream(&spec, StreamKind::Dynamic, add3(p0, delta), None, t_half);
        assert!((s0.sigma - s1.sigma).abs() < 1e-9);
        // The original point should no longer see the object (it moved away),
        // unless another dynamic object overlaps there.
        let s_old = sample_stream(&spec, StreamKind::Dynamic, p0, None, t_half);
        assert!(s_old.object != s0.object || s_old.sigma < s0.sigma);
    }
}
