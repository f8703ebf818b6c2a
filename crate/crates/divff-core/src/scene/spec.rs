//! Scene specification: analytic ground-truth geometry, motion, concepts and
//! teacher-simulator parameters, serialized as versioned JSON.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::camera::CameraPath;
use super::solids::{StreamKind, Solid, Vec3};

pub const SCENE_SCHEMA: &str = "divff_scene_v1";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene spec: {0}")]
    Invalid(String),
    #[error("unknown concept {0}")]
    UnknownConcept(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One analytic solid with appearance and semantics.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Primitive {
    pub name: String,
    pub solid: Solid,
    /// Density amplitude (1/length units).
    pub density: f64,
    /// Thickness of the smooth density shell at the surface.
    pub softness: f64,
    pub albedo: [f64; 3],
    pub image_concept: String,
    pub video_concept: String,
}

/// Piecewise-smooth translation offsets keyed by frame.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Trajectory {
    Static,
    Waypoints { knots: Vec<(usize, Vec3)> },
}

fn smoothstep01(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl Trajectory {
    /// Offset from the base placement at frame `t`.
    pub fn position(&self, t: usize) -> Vec3 {
        match self {
            Trajectory::Static => [0.0; 3],
            Trajectory::Waypoints { knots } => {
                if knots.is_empty() {
                    return [0.0; 3];
                }
                if t <= knots[0].0 {
                    return knots[0].1;
                }
                for pair in knots.windows(2) {
                    let (t0, p0) = pair[0];
                    let (t1, p1) = pair[1];
                    if t <= t1 {
                        let s = smoothstep01((t - t0) as f64 / (t1 - t0).max(1) as f64);
                        return [
                            p0[0] + s * (p1[0] - p0[0]),
                            p0[1] + s * (p1[1] - p0[1]),
                            p0[2] + s * (p1[2] - p0[2]),
                        ];
                    }
                }
                knots.last().unwrap().1
            }
        }
    }

    /// Whether the object is moving around frame `t`.
    pub fn is_active(&self, t: usize, frames: usize) -> bool {
        let prev = self.position(t.saturating_sub(1));
        let next = self.position((t + 1).min(frames.saturating_sub(1)));
        let cur = self.position(t);
        let d = |a: Vec3, b: Vec3| {
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        };
        d(prev, cur) > 1e-9 || d(cur, next) > 1e-9
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DynamicPrimitive {
    #[serde(flatten)]
    pub base: Primitive,
    pub trajectory: Trajectory,
}

/// Camera-frame solid with a small periodic wobble (continuous actor motion).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ActorPrimitive {
    #[serde(flatten)]
    pub base: Primitive,
    pub wobble_amplitude: Vec3,
    pub wobble_cycles: f64,
}

impl ActorPrimitive {
    pub fn offset_at(&self, t: usize, frames: usize) -> Vec3 {
        let frac = if frames <= 1 { 0.0 } else { t as f64 / (frames - 1) as f64 };
        let base = 2.0 * std::f64::consts::PI * self.wobble_cycles * frac;
        [
            self.wobble_amplitude[0] * base.sin(),
            self.wobble_amplitude[1] * (base + 2.1).sin(),
            self.wobble_amplitude[2] * (base + 4.2).sin(),
        ]
    }
}

/// An interaction grounded at a dynamic object.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AffordanceSpec {
    pub label: String,
    pub video_concept: String,
    /// Name of the primitive where the interaction happens.
    pub object: String,
}

/// Frozen-teacher simulator parameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TeacherConfig {
    pub image_dim: usize,
    pub video_dim: usize,
    /// Resolution multiplier for teacher-side mask extraction.
    pub supersample: usize,
    /// Magnitude of the per-(object, frame) descriptor perturbation.
    pub noise_sigma: f64,
    pub mask_weight: f64,
    pub box_weight: f64,
    /// Small crops read as "texture": descriptor tilt toward the texture
    /// canonical, scaled by sqrt(area_ref / crop_area). Box descriptors carry
    /// no tilt (context disambiguates).
    pub texture_tilt: f64,
    pub tilt_area_ref: f64,
    pub tilt_clamp: (f64, f64),
    /// Video patch side as a fraction of min(H, W); stride as a fraction of side.
    pub patch_frac: f64,
    pub patch_stride_frac: f64,
    /// Patch-mode (ablation) image descriptor scales.
    pub patch_scales: Vec<f64>,
    pub window_frames: usize,
    pub temporal_stride: usize,
    pub hotspot_dilation: usize,
    /// Salience multipliers for the global video descriptor mixture.
    pub salience_dynamic_active: f64,
    pub salience_actor: f64,
    pub autoencoder_hidden: usize,
    pub autoencoder_steps: usize,
    pub autoencoder_lr: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            image_dim: 512,
            video_dim: 64,
            supersample: 1,
            noise_sigma: 0.05,
            mask_weight: 0.75,
            box_weight: 0.25,
            texture_tilt: 0.5,
            tilt_area_ref: 250.0,
            tilt_clamp: (0.4, 2.2),
            patch_frac: 0.33,
            patch_stride_frac: 0.5,
            patch_scales: vec![0.2, 0.33, 0.5],
            window_frames: 4,
            temporal_stride: 3,
            hotspot_dilation: 2,
            salience_dynamic_active: 8.0,
            salience_actor: 4.0,
            autoencoder_hidden: 256,
            autoencoder_steps: 400,
            autoencoder_lr: 1e-3,
        }
    }
}

/// Complete analytic scene: geometry, motion, camera, semantics, teacher.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneSpec {
    pub schema: String,
    pub name: String,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub near: f64,
    pub far: f64,
    pub camera: CameraPath,
    pub persistent: Vec<Primitive>,
    pub dynamic: Vec<DynamicPrimitive>,
    pub actor: Vec<ActorPrimitive>,
    pub affordances: Vec<AffordanceSpec>,
    #[serde(default)]
    pub teacher: TeacherConfig,
}

impl SceneSpec {
    pub fn from_json(json: &str) -> Result<Self, SceneError> {
        let spec: SceneSpec = serde_json::from_str(json)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene spec serializes")
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.schema != SCENE_SCHEMA {
            return Err(SceneError::Invalid(format!(
                "schema field must be {SCENE_SCHEMA}, got {:?}",
                self.schema
            )));
        }
        if self.frames == 0 || self.width == 0 || self.height == 0 {
            return Err(SceneError::Invalid("frames/width/height must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(SceneError::Invalid("need 0 < near < far".into()));
        }
        for prim in self.all_primitives() {
            if prim.density < 0.0 {
                return Err(SceneError::Invalid(format!("{}: density must be >= 0", prim.name)));
            }
            if prim.softness <= 0.0 {
                return Err(SceneError::Invalid(format!("{}: softness must be > 0", prim.name)));
            }
            for &a in &prim.albedo {
                if !(0.0..=1.0).contains(&a) {
                    return Err(SceneError::Invalid(format!("{}: albedo in [0,1]", prim.name)));
                }
            }
        }
        for d in &self.dynamic {
            if let Trajectory::Waypoints { knots } = &d.trajectory {
                if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(SceneError::Invalid(format!(
                        "{}: trajectory knots must have increasing frames",
                        d.base.name
                    )));
                }
                if knots.iter().any(|&(f, _)| f >= self.frames) {
                    return Err(SceneError::Invalid(format!(
                        "{}: trajectory knot beyond frame count",
                        d.base.name
                    )));
                }
            }
        }
        for aff in &self.affordances {
            if !self.all_primitives().any(|p| p.name == aff.object) {
                return Err(SceneError::Invalid(format!(
                    "affordance {:?} references unknown object {:?}",
                    aff.label, aff.object
                )));
            }
        }
        Ok(())
    }

    pub fn all_primitives(&self) -> impl Iterator<Item = &Primitive> {
        self.persistent
            .iter()
            .chain(self.dynamic.iter().map(|d| &d.base))
            .chain(self.actor.iter().map(|a| &a.base))
    }

    pub fn object_count(&self) -> usize {
        self.persistent.len() + self.dynamic.len() + self.actor.len()
    }

    /// Global object index of the i-th primitive of a stream.
    pub fn object_index(&self, stream: StreamKind, i: usize) -> usize {
        match stream {
            StreamKind::Persistent => i,
            StreamKind::Dynamic => self.persistent.len() + i,
            StreamKind::Actor => self.persistent.len() + self.dynamic.len() + i,
        }
    }

    pub fn stream_of_object(&self, idx: usize) -> StreamKind {
        if idx < self.persistent.len() {
            StreamKind::Persistent
        } else if idx < self.persistent.len() + self.dynamic.len() {
            StreamKind::Dynamic
        } else {
            StreamKind::Actor
        }
    }

    pub fn primitive(&self, idx: usize) -> &Primitive {
        let p = self.persistent.len();
        let d = self.dynamic.len();
        if idx < p {
            &self.persistent[idx]
        } else if idx < p + d {
            &self.dynamic[idx - p].base
        } else {
            &self.actor[idx - p - d].base
        }
    }

    pub fn find_object(&self, name: &str) -> Option<usize> {
        (0..self.object_count()).find(|&i| self.primitive(i).name == name)
    }

    /// Whether a dynamic object is moving around frame `t`.
    pub fn object_active(&self, idx: usize, t: usize) -> bool {
        let p = self.persistent.len();
        if idx < p || idx >= p + self.dynamic.len() {
            return false;
        }
        self.dynamic[idx - p].trajectory.is_active(t, self.frames)
    }
}

/// Tabletop preset: enclosing shell, table, shelf, stove, five movable
/// objects and a two-hand camera-attached actor. 64x64, 30 frames.
pub fn kitchen_toy() -> SceneSpec {
    let persistent = vec![
        Primitive {
            name: "room".into(),
            solid: Solid::Shell { center: [0.0, 0.0, 1.0], inner_radius: 7.0, outer_radius: 8.2 },
            density: 10.0,
            softness: 0.4,
            albedo: [0.16, 0.17, 0.20],
            image_concept: "wall".into(),
            video_concept: "ambient".into(),
        },
        Primitive {
            name: "table".into(),
            solid: Solid::Slab {
                point: [0.0, 0.0, -0.35],
                normal: [0.0, 0.0, 1.0],
                thickness: 0.5,
                extent: Some(4.6),
            },
            density: 14.0,
            softness: 0.18,
            albedo: [0.52, 0.37, 0.22],
            image_concept: "counter".into(),
            video_concept: "ambient".into(),
        },
        Primitive {
            name: "shelf".into(),
            solid: Solid::Box { center: [0.0, 2.7, 0.55], half_extents: [1.9, 0.28, 0.65] },
            density: 14.0,
            softness: 0.14,
            albedo: [0.34, 0.40, 0.46],
            image_concept: "shelf".into(),
            video_concept: "ambient".into(),
        },
        Primitive {
            name: "stove".into(),
            solid: Solid::Box { center: [-2.1, 1.5, 0.42], half_extents: [0.6, 0.55, 0.55] },
            density: 14.0,
            softness: 0.14,
            albedo: [0.72, 0.18, 0.14],
            image_concept: "stove".into(),
            video_concept: "ambient".into(),
        },
    ];

    let dynamic = vec![
        DynamicPrimitive {
            base: Primitive {
                name: "pot".into(),
                solid: Solid::Sphere { center: [1.35, 0.65, 0.42], radius: 0.65 },
                density: 16.0,
                softness: 0.16,
                albedo: [0.15, 0.32, 0.78],
                image_concept: "pot".into(),
                video_concept: "stir-pot".into(),
            },
            trajectory: Trajectory::Waypoints {
                knots: vec![(0, [0.0; 3]), (8, [0.0; 3]), (16, [-1.25, -0.95, 0.0])],
            },
        },
        DynamicPrimitive {
            base: Primitive {
                name: "cup".into(),
                solid: Solid::Sphere { center: [-1.15, -0.95, 0.32], radius: 0.55 },
                density: 16.0,
                softness: 0.16,
                albedo: [0.88, 0.76, 0.18],
                image_concept: "cup".into(),
                video_concept: "pour-cup".into(),
            },
            trajectory: Trajectory::Waypoints {
                knots: vec![(0, [0.0; 3]), (18, [0.0; 3]), (26, [0.95, 0.75, 0.05])],
            },
        },
        DynamicPrimitive {
            base: Primitive {
                name: "board".into(),
                solid: Solid::Box { center: [0.25, -1.55, 0.14], half_extents: [0.62, 0.48, 0.12] },
                density: 16.0,
                softness: 0.12,
                albedo: [0.20, 0.66, 0.28],
                image_concept: "board".into(),
                video_concept: "cut-board".into(),
            },
            trajectory: Trajectory::Waypoints {
                knots: vec![(2, [0.0; 3]), (8, [-0.75, 0.55, 0.0])],
            },
        },
        DynamicPrimitive {
            base: Primitive {
                name: "jug".into(),
                solid: Solid::Box { center: [2.05, -0.7, 0.5], half_extents: [0.36, 0.36, 0.5] },
                density: 16.0,
                softness: 0.14,
                albedo: [0.80, 0.80, 0.84],
                image_concept: "jug".into(),
                video_concept: "fill-jug".into(),
            },
            trajectory: Trajectory::Waypoints {
                knots: vec![(0, [0.0; 3]), (12, [0.0; 3]), (18, [0.35, -0.45, 0.0])],
            },
        },
        DynamicPrimitive {
            base: Primitive {
                name: "plum".into(),
                solid: Solid::Sphere { center: [-0.35, 0.95, 0.30], radius: 0.50 },
                density: 16.0,
                softness: 0.14,
                albedo: [0.58, 0.22, 0.68],
                image_concept: "plum".into(),
                video_concept: "pick-plum".into(),
            },
            trajectory: Trajectory::Waypoints {
                knots: vec![(0, [0.0; 3]), (20, [0.0; 3]), (27, [-0.85, -0.45, 0.0])],
            },
        },
    ];

    let actor = vec![
        ActorPrimitive {
            base: Primitive {
                name: "hand-right".into(),
                solid: Solid::Sphere { center: [0.38, -0.52, 1.45], radius: 0.40 },
                density: 18.0,
                softness: 0.12,
                albedo: [0.85, 0.60, 0.45],
                image_concept: "hands".into(),
                video_concept: "hands-motion".into(),
            },
            wobble_amplitude: [0.16, 0.10, 0.12],
            wobble_cycles: 3.0,
        },
        ActorPrimitive {
            base: Primitive {
                name: "hand-left".into(),
                solid: Solid::Sphere { center: [-0.34, -0.56, 1.55], radius: 0.35 },
                density: 18.0,
                softness: 0.12,
                albedo: [0.82, 0.58, 0.44],
                image_concept: "hands".into(),
                video_concept: "hands-motion".into(),
            },
            wobble_amplitude: [0.12, 0.08, 0.10],
            wobble_cycles: 2.0,
        },
    ];

    let affordances = vec![
        AffordanceSpec { label: "stir the pot".into(), video_concept: "stir-pot".into(), object: "pot".into() },
        AffordanceSpec { label: "pour into the cup".into(), video_concept: "pour-cup".into(), object: "cup".into() },
        AffordanceSpec { label: "slice on the board".into(), video_concept: "cut-board".into(), object: "board".into() },
        AffordanceSpec { label: "fill the jug".into(), video_concept: "fill-jug".into(), object: "jug".into() },
        AffordanceSpec { label: "pick the plum".into(), video_concept: "pick-plum".into(), object: "plum".into() },
    ];

    SceneSpec {
        schema: SCENE_SCHEMA.into(),
        name: "kitchen-toy".into(),
        frames: 30,
        width: 64,
        height: 64,
        fov_deg: 52.0,
        near: 0.8,
        far: 14.0,
        camera: CameraPath::Orbit {
            center: [0.0, 0.0, 0.0],
            radius: 4.4,
            height: 2.6,
            look_at: [0.0, 0.0, 0.1],
            arc_deg: 150.0,
            start_deg: -160.0,
            bob_amplitude: 0.15,
            bob_cycles: 2.0,
        },
        persistent,
        dynamic,
        actor,
        affordances,
        teacher: TeacherConfig::default(),
    }
}
