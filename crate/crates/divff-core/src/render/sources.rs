//! Field sources the renderer can composite: the learned model, or the
//! analytic scene itself (exact densities and concept features) for
//! oracle-equivalence checks.

use crate::field::{encode_directions, encode_positions, FieldModel};
use crate::real::Real;
use crate::scene::{
    sample_stream, ConceptBank, FeatureAutoencoder, SceneSpec, StreamKind,
};

/// Batched geometry over N points of one stream.
pub struct GeomBatch<T> {
    pub sigma: Vec<T>,
    /// N*3.
    pub color: Vec<T>,
    /// N; floor value for streams without an uncertainty head.
    pub beta: Vec<T>,
    /// N*width trunk activations when the source is a network.
    pub hidden: Option<Vec<T>>,
}

/// Anything that can be volume-rendered by stream.
pub trait FieldSource<T: Real>: Sync {
    fn frames(&self) -> usize;
    fn beta_floor(&self) -> f64;
    fn phi_dim(&self) -> usize;
    fn psi_dim(&self) -> usize;

    /// Evaluate one stream's geometry at N points. `world`, `cam` and
    /// `frames` are per-point; persistent sources also receive view
    /// directions.
    fn eval_geometry(
        &self,
        stream: StreamKind,
        world: &[[f64; 3]],
        cam: &[[f64; 3]],
        dirs: &[[f64; 3]],
        frames: &[usize],
    ) -> GeomBatch<T>;

    /// Raw (pre-normalization) feature vectors at selected points. Network
    /// sources consume the matching `hidden` rows; analytic sources look at
    /// the points.
    fn eval_features(
        &self,
        stream: StreamKind,
        world: &[[f64; 3]],
        cam: &[[f64; 3]],
        frames: &[usize],
        hidden: Option<&[T]>,
    ) -> (Vec<T>, Vec<T>);
}

impl<T: Real> FieldSource<T> for FieldModel<T> {
    fn frames(&self) -> usize {
        self.config.frames
    }

    fn beta_floor(&self) -> f64 {
        self.config.beta_min
    }

    fn phi_dim(&self) -> usize {
        self.config.phi_dim
    }

    fn psi_dim(&self) -> usize {
        self.config.psi_dim
    }

    fn eval_geometry(
        &self,
        stream: StreamKind,
        world: &[[f64; 3]],
        cam: &[[f64; 3]],
        dirs: &[[f64; 3]],
        frames: &[usize],
    ) -> GeomBatch<T> {
        let n = world.len();
        let input = match stream {
            StreamKind::Persistent => {
                let enc_x: crate::numkit::Tensor<T> = encode_positions(world, self.config.l_pos);
                let enc_d: crate::numkit::Tensor<T> = encode_directions(dirs, self.config.l_dir);
                let (dx, dd) = (enc_x.cols(), enc_d.cols());
                let mut flat = Vec::with_capacity(n * (dx + dd));
                for i in 0..n {
                    flat.extend_from_slice(&enc_x.data()[i * dx..(i + 1) * dx]);
                    flat.extend_from_slice(&enc_d.data()[i * dd..(i + 1) * dd]);
                }
                flat
            }
            StreamKind::Dynamic | StreamKind::Actor => {
                let pts = if stream == StreamKind::Dynamic { world } else { cam };
                let codes = if stream == StreamKind::Dynamic {
                    &self.codes_dynamic
                } else {
                    &self.codes_actor
                };
                let enc: crate::numkit::Tensor<T> = encode_positions(pts, self.config.l_pos);
                let dx = enc.cols();
                let cd = self.config.code_dim;
                let mut flat = Vec::with_capacity(n * (dx + cd));
                for i in 0..n {
                    flat.extend_from_slice(&enc.data()[i * dx..(i + 1) * dx]);
                    flat.extend_from_slice(&codes.data()[frames[i] * cd..(frames[i] + 1) * cd]);
                }
                flat
            }
        };
        let net = match stream {
            StreamKind::Persistent => &self.persistent,
            StreamKind::Dynamic => &self.dynamic,
            StreamKind::Actor => &self.actor,
        };
        let geo = net.forward_geometry(&input, n, self.config.beta_min);
        let beta = geo.beta.unwrap_or_else(|| vec![T::of(self.config.beta_min); n]);
        GeomBatch { sigma: geo.sigma, color: geo.color, beta, hidden: Some(geo.hidden) }
    }

    fn eval_features(
        &self,
        stream: StreamKind,
        world: &[[f64; 3]],
        _cam: &[[f64; 3]],
        _frames: &[usize],
        hidden: Option<&[T]>,
    ) -> (Vec<T>, Vec<T>) {
        let hidden = hidden.expect("network source needs hidden activations");
        let net = match stream {
            StreamKind::Persistent => &self.persistent,
            StreamKind::Dynamic => &self.dynamic,
            StreamKind::Actor => &self.actor,
        };
        net.forward_features(hidden, world.len())
    }
}

/// The analytic scene as a field source: exact densities and albedos, with
/// per-object encoded concept vectors as features.
pub struct AnalyticField<'a> {
    spec: &'a SceneSpec,
    beta_floor: f64,
    phi_per_object: Vec<Vec<f64>>,
    psi_per_object: Vec<Vec<f64>>,
    phi_dim: usize,
    psi_dim: usize,
}

impl<'a> AnalyticField<'a> {
    /// Geometry-only source (features are zero vectors).
    pub fn geometry_only(spec: &'a SceneSpec) -> Self {
        let n = spec.object_count();
        Self {
            spec,
            beta_floor: 1e-2,
            phi_per_object: vec![vec![0.0; 1]; n],
            psi_per_object: vec![vec![0.0; 1]; n],
            phi_dim: 1,
            psi_dim: 1,
        }
    }

    /// Full source: image features encoded through the scene autoencoder,
    /// video features straight from the bank.
    pub fn with_concepts(
        spec: &'a SceneSpec,
        bank: &ConceptBank,
        autoencoder: &FeatureAutoencoder,
    ) -> Self {
        let mut phi_per_object = Vec::with_capacity(spec.object_count());
        let mut psi_per_object = Vec::with_capacity(spec.object_count());
        for i in 0..spec.object_count() {
            let prim = spec.primitive(i);
            let phi = bank
                .image_concept(&prim.image_concept)
                .map(|v| autoencoder.encode_unit(v))
                .unwrap_or_else(|| vec![0.0; autoencoder.latent_dim()]);
            let psi = bank
                .video_concept(&prim.video_concept)
                .map(|v| v.to_vec())
                .unwrap_or_else(|| vec![0.0; bank.video_dim]);
            phi_per_object.push(phi);
            psi_per_object.push(psi);
        }
        Self {
            spec,
            beta_floor: 1e-2,
            phi_dim: autoencoder.latent_dim(),
            psi_dim: bank.video_dim,
            phi_per_object,
            psi_per_object,
        }
    }
}

impl<'a, T: Real> FieldSource<T> for AnalyticField<'a> {
    fn frames(&self) -> usize {
        self.spec.frames
    }

    fn beta_floor(&self) -> f64 {
        self.beta_floor
    }

    fn phi_dim(&self) -> usize {
        self.phi_dim
    }

    fn psi_dim(&self) -> usize {
        self.psi_dim
    }

    fn eval_geometry(
        &self,
        stream: StreamKind,
        world: &[[f64; 3]],
        cam: &[[f64; 3]],
        _dirs: &[[f64; 3]],
        frames: &[usize],
    ) -> GeomBatch<T> {
        let n = world.len();
        let mut sigma = Vec::with_capacity(n);
        let mut color = Vec::with_capacity(n * 3);
        for i in 0..n {
            let s = sample_stream(self.spec, stream, world[i], Some(cam[i]), frames[i]);
            sigma.push(T::of(s.sigma));
            color.extend(s.color.iter().map(|&c| T::of(c)));
        }
        GeomBatch { sigma, color, beta: vec![T::of(self.beta_floor); n], hidden: None }
    }

    fn eval_features(
        &self,
        stream: StreamKind,
        world: &[[f64; 3]],
        cam: &[[f64; 3]],
        frames: &[usize],
        _hidden: Option<&[T]>,
    ) -> (Vec<T>, Vec<T>) {
        let n = world.len();
        let mut phi = vec![T::zero(); n * self.phi_dim];
        let mut psi = vec![T::zero(); n * self.psi_dim];
        for i in 0..n {
            let s = sample_stream(self.spec, stream, world[i], Some(cam[i]), frames[i]);
            if let Some(obj) = s.object {
                for (o, &v) in phi[i * self.phi_dim..(i + 1) * self.phi_dim]
                    .iter_mut()
                    .zip(&self.phi_per_object[obj])
                {
                    *o = T::of(v);
                }
                for (o, &v) in psi[i * self.psi_dim..(i + 1) * self.psi_dim]
                    .iter_mut()
                    .zip(&self.psi_per_object[obj])
                {
                    *o = T::of(v);
                }
            }
        }
        (phi, psi)
    }
}
