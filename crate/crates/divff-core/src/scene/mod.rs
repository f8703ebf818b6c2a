//! Procedurally defined dynamic scenes with exact ground truth, plus the
//! frozen-teacher simulators (mask/box image descriptors, patch/global video
//! descriptors, interaction hotspots, feature autoencoder).
//!
//! Everything here is a pure function of (scene spec, seed). The geometry
//! oracle is deliberately independent from the production renderer so the two
//! can be compared against each other.

mod autoencoder;
mod camera;
mod concepts;
mod dataset;
mod oracle;
mod solids;
mod spec;
mod teacher;

pub use autoencoder::{fit_autoencoder, AutoencoderConfig, FeatureAutoencoder};
pub use camera::{pixel_ray, CameraPath, Pose};
pub use concepts::{build_concept_bank, ConceptBank, CANONICAL_IMAGE, CANONICAL_VIDEO};
pub use dataset::{build_dataset, load_dataset, Dataset, DatasetManifest, FrameData};
pub use oracle::{render_ground_truth, render_ground_truth_frame, FrameGroundTruth, OracleOptions};
pub use solids::{sample_scene, sample_stream, Solid, StreamKind, StreamSample};
pub use spec::{
    kitchen_toy, ActorPrimitive, AffordanceSpec, DynamicPrimitive, Primitive, SceneError,
    SceneSpec, TeacherConfig, Trajectory, SCENE_SCHEMA,
};
pub use teacher::{
    make_image_targets, make_video_targets, video_patch_grid, FrameTeacherTargets, ImageTargetMode,
    SimMask,
};
