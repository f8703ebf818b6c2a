//! Core engine for dynamic image-video feature fields.
//!
//! The pipeline: procedurally generated dynamic scenes with exact ground
//! truth (`scene`), a three-stream radiance + feature field model (`field`),
//! stratified/hierarchical volume rendering (`render`), distillation training
//! (`distill`) and open-vocabulary relevancy querying plus evaluation
//! (`query`). Everything differentiable runs on the small reverse-mode
//! autodiff engine in `numkit`.
//!
//! All numeric code is generic over the scalar type ([`Real`], f32 or f64);
//! concrete aliases live at the crate root.

pub mod distill;
pub mod field;
pub mod io;
pub mod numkit;
pub mod query;
pub mod real;
pub mod render;
pub mod scene;
pub mod seeding;

pub use real::Real;

/// Default double-precision tensor.
pub type Tensor64 = numkit::Tensor<f64>;
/// Single-precision tensor.
pub type Tensor32 = numkit::Tensor<f32>;
/// Double-precision tape.
pub type Graph64 = numkit::Graph<f64>;
/// Single-precision tape.
pub type Graph32 = numkit::Graph<f32>;
// Field model aliases are added once the field module lands.
