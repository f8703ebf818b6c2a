//! Volume rendering: ray generation, stratified and hierarchical sampling,
//! three-stream compositing with uncertainty, top-K feature compositing and
//! amodal stream toggles.

mod composite;
mod image;
mod sampling;
mod sources;

pub use composite::{composite, composite_features, CompositeOutput};
pub use image::{render_image, CameraIntrinsics, ImagePlanes, PlaneSelect, RenderConfig};
pub use sampling::{merge_sorted, sample_coarse, sample_fine};
pub use sources::{AnalyticField, FieldSource, GeomBatch};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("ray bounds: near {0} must be below far {1}")]
    BadBounds(f64, f64),
    #[error("at least one stream must stay enabled")]
    NoStreams,
    #[error("frame {0} out of range ({1} frames)")]
    FrameOutOfRange(usize, usize),
    #[error("unknown toggle {0:?} (use subsets of \"p,d,a\")")]
    BadToggle(String),
}

/// Stream enable flags for amodal composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Toggles {
    pub persistent: bool,
    pub dynamic: bool,
    pub actor: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self { persistent: true, dynamic: true, actor: true }
    }
}

impl Toggles {
    pub fn enabled(&self, stream: crate::scene::StreamKind) -> bool {
        match stream {
            crate::scene::StreamKind::Persistent => self.persistent,
            crate::scene::StreamKind::Dynamic => self.dynamic,
            crate::scene::StreamKind::Actor => self.actor,
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.persistent || self.dynamic || self.actor {
            Ok(())
        } else {
            Err(RenderError::NoStreams)
        }
    }

    /// Parse forms like "p,d,a", "pd", "p".
    pub fn parse(s: &str) -> Result<Self, RenderError> {
        let mut t = Self { persistent: false, dynamic: false, actor: false };
        for part in s.split(',').flat_map(|p| p.trim().chars()) {
            match part {
                'p' => t.persistent = true,
                'd' => t.dynamic = true,
                'a' => t.actor = true,
                other => return Err(RenderError::BadToggle(other.to_string())),
            }
        }
        t.validate()?;
        Ok(t)
    }

    /// Canonical short name used in render file names.
    pub fn tag(&self) -> String {
        let mut s = String::new();
        if self.persistent {
            s.push('p');
        }
        if self.dynamic {
            s.push('d');
        }
        if self.actor {
            s.push('a');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toggle_parsing() {
        assert_eq!(Toggles::parse("p,d,a").unwrap(), Toggles::default());
        let p = Toggles::parse("p").unwrap();
        assert!(p.persistent && !p.dynamic && !p.actor);
        assert_eq!(p.tag(), "p");
        assert!(Toggles::parse("x").is_err());
        assert!(Toggles::parse("").is_err());
    }
}
