use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::encoding::{encode_directions, encode_positions, encoding_dim};
use super::FieldError;
use crate::numkit::{Graph, Tensor, Var};
use crate::real::Real;
use crate::seeding;

/// Architecture parameters. Defaults follow the reference setup: 4-layer
/// 256-wide trunks, 10/4 encoding frequencies, 16-d frame codes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub frames: usize,
    pub l_pos: usize,
    pub l_dir: usize,
    pub width: usize,
    /// Hidden trunk layers.
    pub depth: usize,
    pub code_dim: usize,
    pub phi_dim: usize,
    pub psi_dim: usize,
    pub beta_min: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frames: 1,
            l_pos: 10,
            l_dir: 4,
            width: 256,
            depth: 4,
            code_dim: 16,
            phi_dim: 128,
            psi_dim: 64,
            beta_min: 1e-2,
        }
    }
}

impl ModelConfig {
    pub fn persistent_in(&self) -> usize {
        encoding_dim(3, self.l_pos) + encoding_dim(3, self.l_dir)
    }

    pub fn coded_in(&self) -> usize {
        encoding_dim(3, self.l_pos) + self.code_dim
    }

    fn stream_param_count(&self, in_dim: usize, with_beta: bool) -> usize {
        let w = self.width;
        let trunk = in_dim * w + w + (self.depth - 1) * (w * w + w);
        let sigma = w + 1;
        let color = 3 * w + 3;
        let beta = if with_beta { w + 1 } else { 0 };
        let phi = self.phi_dim * w + self.phi_dim;
        let psi = self.psi_dim * w + self.psi_dim;
        trunk + sigma + color + beta + phi + psi
    }

    /// Exact scalar parameter count; guards against architecture drift.
    pub fn param_count(&self) -> usize {
        self.stream_param_count(self.persistent_in(), false)
            + 2 * self.stream_param_count(self.coded_in(), true)
            + 2 * self.frames * self.code_dim
    }
}

/// Affine layer.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> Dense<T> {
    fn init(rng: &mut ChaCha12Rng, in_dim: usize, out_dim: usize, std: f64, bias: f64) -> Self {
        let data: Vec<T> = (0..in_dim * out_dim)
            .map(|_| T::of(rng.sample::<f64, _>(StandardNormal) * std))
            .collect();
        Self {
            w: Tensor::new(&[in_dim, out_dim], data).unwrap(),
            b: Tensor::full(&[out_dim], T::of(bias)),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    /// y = x W + b for a flat row-major batch.
    pub fn forward_plain(&self, x: &[T], rows: usize) -> Vec<T> {
        let (k, n) = (self.w.shape()[0], self.w.shape()[1]);
        debug_assert_eq!(x.len(), rows * k);
        let mut out = vec![T::zero(); rows * n];
        crate::numkit::gemm_nn(rows, k, n, x, self.w.data(), &mut out);
        for row in out.chunks_exact_mut(n) {
            for (o, &bv) in row.iter_mut().zip(self.b.data()) {
                *o += bv;
            }
        }
        out
    }
}

fn softplus_stable<T: Real>(x: T) -> T {
    let hi = T::of(20.0);
    if x > hi {
        x
    } else if x < -hi {
        x.exp()
    } else {
        (T::one() + x.exp()).ln()
    }
}

fn sigmoid_stable<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// One of the three component networks.
#[derive(Clone, Debug)]
pub struct StreamNet<T> {
    pub trunk: Vec<Dense<T>>,
    pub sigma: Dense<T>,
    pub color: Dense<T>,
    pub beta: Option<Dense<T>>,
    pub phi: Dense<T>,
    pub psi: Dense<T>,
}

/// Plain (non-taped) geometry outputs for a batch of points.
#[derive(Clone, Debug)]
pub struct StreamGeometry<T> {
    pub sigma: Vec<T>,
    /// N*3, in [0,1].
    pub color: Vec<T>,
    pub beta: Option<Vec<T>>,
    /// N*width, last trunk activation (feeds the feature heads).
    pub hidden: Vec<T>,
}

impl<T: Real> StreamNet<T> {
    fn init(
        rng: &mut ChaCha12Rng,
        in_dim: usize,
        cfg: &ModelConfig,
        with_beta: bool,
    ) -> Self {
        let w = cfg.width;
        let mut trunk = Vec::with_capacity(cfg.depth);
        let mut prev = in_dim;
        for _ in 0..cfg.depth {
            let std = (2.0 / prev as f64).sqrt();
            trunk.push(Dense::init(rng, prev, w, std, 0.0));
            prev = w;
        }
        let head_std = 0.1 * (1.0 / w as f64).sqrt();
        let feat_std = 0.3 * (1.0 / w as f64).sqrt();
        Self {
            trunk,
            sigma: Dense::init(rng, w, 1, head_std, -1.0),
            color: Dense::init(rng, w, 3, head_std, 0.0),
            beta: with_beta.then(|| Dense::init(rng, w, 1, head_std, -1.0)),
            phi: Dense::init(rng, w, cfg.phi_dim, feat_std, 0.0),
            psi: Dense::init(rng, w, cfg.psi_dim, feat_std, 0.0),
        }
    }

    /// Geometry forward pass without the tape.
    pub fn forward_geometry(&self, x: &[T], rows: usize, beta_min: f64) -> StreamGeometry<T> {
        let mut h = x.to_vec();
        for layer in &self.trunk {
            h = layer.forward_plain(&h, rows);
            for v in h.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        let sigma = self
            .sigma
            .forward_plain(&h, rows)
            .into_iter()
            .map(softplus_stable)
            .collect();
        let color = self
            .color
            .forward_plain(&h, rows)
            .into_iter()
            .map(sigmoid_stable)
            .collect();
        let beta = self.beta.as_ref().map(|head| {
            head.forward_plain(&h, rows)
                .into_iter()
                .map(|v| softplus_stable(v) + T::of(beta_min))
                .collect()
        });
        StreamGeometry { sigma, color, beta, hidden: h }
    }

    /// Feature heads over (a subset of) trunk activations; raw linear
    /// outputs, normalized only after compositing.
    pub fn forward_features(&self, hidden: &[T], rows: usize) -> (Vec<T>, Vec<T>) {
        (self.phi.forward_plain(hidden, rows), self.psi.forward_plain(hidden, rows))
    }
}

/// Which training phase touches a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Geometry,
    Codes,
    ImageHead,
    VideoHead,
}

/// The full model: three streams plus frame-code tables.
#[derive(Clone, Debug)]
pub struct FieldModel<T> {
    pub config: ModelConfig,
    pub persistent: StreamNet<T>,
    pub dynamic: StreamNet<T>,
    pub actor: StreamNet<T>,
    /// frames x code_dim.
    pub codes_dynamic: Tensor<T>,
    pub codes_actor: Tensor<T>,
}

impl<T: Real> FieldModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut stream_rng =
            |name: &str| ChaCha12Rng::seed_from_u64(seeding::derive(seed, "field-init", &[seeding::label_hash(name)]));
        let persistent =
            StreamNet::init(&mut stream_rng("persistent"), config.persistent_in(), &config, false);
        let dynamic = StreamNet::init(&mut stream_rng("dynamic"), config.coded_in(), &config, true);
        let actor = StreamNet::init(&mut stream_rng("actor"), config.coded_in(), &config, true);
        let mut code_rng = stream_rng("codes");
        let mut codes = |frames: usize, dim: usize| -> Tensor<T> {
            let data: Vec<T> = (0..frames * dim)
                .map(|_| T::of(code_rng.sample::<f64, _>(StandardNormal) * 0.1))
                .collect();
            Tensor::new(&[frames, dim], data).unwrap()
        };
        let codes_dynamic = codes(config.frames, config.code_dim);
        let codes_actor = codes(config.frames, config.code_dim);
        Self { config, persistent, dynamic, actor, codes_dynamic, codes_actor }
    }

    /// Stable (name, group) list covering every parameter tensor.
    pub fn param_slots(&self) -> Vec<(String, ParamGroup)> {
        let mut slots = Vec::new();
        for (stream, net) in
            [("persistent", &self.persistent), ("dynamic", &self.dynamic), ("actor", &self.actor)]
        {
            for i in 0..net.trunk.len() {
                slots.push((format!("{stream}/trunk{i}/w"), ParamGroup::Geometry));
                slots.push((format!("{stream}/trunk{i}/b"), ParamGroup::Geometry));
            }
            slots.push((format!("{stream}/sigma/w"), ParamGroup::Geometry));
            slots.push((format!("{stream}/sigma/b"), ParamGroup::Geometry));
            slots.push((format!("{stream}/color/w"), ParamGroup::Geometry));
            slots.push((format!("{stream}/color/b"), ParamGroup::Geometry));
            if net.beta.is_some() {
                slots.push((format!("{stream}/beta/w"), ParamGroup::Geometry));
                slots.push((format!("{stream}/beta/b"), ParamGroup::Geometry));
            }
            slots.push((format!("{stream}/phi/w"), ParamGroup::ImageHead));
            slots.push((format!("{stream}/phi/b"), ParamGroup::ImageHead));
            slots.push((format!("{stream}/psi/w"), ParamGroup::VideoHead));
            slots.push((format!("{stream}/psi/b"), ParamGroup::VideoHead));
        }
        slots.push(("codes/dynamic".into(), ParamGroup::Codes));
        slots.push(("codes/actor".into(), ParamGroup::Codes));
        slots
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for net in [&self.persistent, &self.dynamic, &self.actor] {
            for layer in &net.trunk {
                out.push(&layer.w);
                out.push(&layer.b);
            }
            out.push(&net.sigma.w);
            out.push(&net.sigma.b);
            out.push(&net.color.w);
            out.push(&net.color.b);
            if let Some(beta) = &net.beta {
                out.push(&beta.w);
                out.push(&beta.b);
            }
            out.push(&net.phi.w);
            out.push(&net.phi.b);
            out.push(&net.psi.w);
            out.push(&net.psi.b);
        }
        out.push(&self.codes_dynamic);
        out.push(&self.codes_actor);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for net in [&mut self.persistent, &mut self.dynamic, &mut self.actor] {
            for layer in &mut net.trunk {
                out.push(&mut layer.w);
                out.push(&mut layer.b);
            }
            out.push(&mut net.sigma.w);
            out.push(&mut net.sigma.b);
            out.push(&mut net.color.w);
            out.push(&mut net.color.b);
            if let Some(beta) = &mut net.beta {
                out.push(&mut beta.w);
                out.push(&mut beta.b);
            }
            out.push(&mut net.phi.w);
            out.push(&mut net.phi.b);
            out.push(&mut net.psi.w);
            out.push(&mut net.psi.b);
        }
        out.push(&mut self.codes_dynamic);
        out.push(&mut self.codes_actor);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn check_finite(xs: &[f64]) -> Result<(), FieldError> {
        if xs.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(FieldError::NonFiniteInput)
        }
    }

    fn check_frame(&self, t: usize) -> Result<(), FieldError> {
        if t < self.config.frames {
            Ok(())
        } else {
            Err(FieldError::FrameOutOfRange(t, self.config.frames))
        }
    }

    /// Persistent stream at a single world point with view direction.
    /// Features are the raw head outputs (normalization happens after
    /// compositing).
    pub fn eval_persistent(
        &self,
        x_world: [f64; 3],
        dir: [f64; 3],
    ) -> Result<([T; 3], T, Vec<T>, Vec<T>), FieldError> {
        Self::check_finite(&x_world)?;
        Self::check_finite(&dir)?;
        let enc_x: Tensor<T> = encode_positions(&[x_world], self.config.l_pos);
        let enc_d: Tensor<T> = encode_directions(&[dir], self.config.l_dir);
        let mut input = enc_x.into_data();
        input.extend(enc_d.into_data());
        let geo = self.persistent.forward_geometry(&input, 1, self.config.beta_min);
        let (phi, psi) = self.persistent.forward_features(&geo.hidden, 1);
        Ok(([geo.color[0], geo.color[1], geo.color[2]], geo.sigma[0], phi, psi))
    }

    fn eval_coded(
        &self,
        net: &StreamNet<T>,
        codes: &Tensor<T>,
        x: [f64; 3],
        t: usize,
    ) -> Result<([T; 3], T, T, Vec<T>, Vec<T>), FieldError> {
        Self::check_finite(&x)?;
        self.check_frame(t)?;
        let enc: Tensor<T> = encode_positions(&[x], self.config.l_pos);
        let mut input = enc.into_data();
        let dim = self.config.code_dim;
        input.extend_from_slice(&codes.data()[t * dim..(t + 1) * dim]);
        let geo = net.forward_geometry(&input, 1, self.config.beta_min);
        let (phi, psi) = net.forward_features(&geo.hidden, 1);
        let beta = geo.beta.as_ref().expect("coded stream has beta")[0];
        Ok(([geo.color[0], geo.color[1], geo.color[2]], geo.sigma[0], beta, phi, psi))
    }

    /// Dynamic stream at a world point, conditioned on the frame code.
    pub fn eval_dynamic(
        &self,
        x_world: [f64; 3],
        t: usize,
    ) -> Result<([T; 3], T, T, Vec<T>, Vec<T>), FieldError> {
        self.eval_coded(&self.dynamic, &self.codes_dynamic, x_world, t)
    }

    /// Actor stream at a camera-frame point, conditioned on the frame code.
    pub fn eval_actor(
        &self,
        x_cam: [f64; 3],
        t: usize,
    ) -> Result<([T; 3], T, T, Vec<T>, Vec<T>), FieldError> {
        self.eval_coded(&self.actor, &self.codes_actor, x_cam, t)
    }
}

/// Tape-side handles for one stream's parameters.
#[derive(Clone, Debug)]
pub struct StreamVars {
    pub trunk: Vec<(Var, Var)>,
    pub sigma: (Var, Var),
    pub color: (Var, Var),
    pub beta: Option<(Var, Var)>,
    pub phi: (Var, Var),
    pub psi: (Var, Var),
}

/// Tape-side handles for the whole model plus the ordered trainable list.
#[derive(Clone, Debug)]
pub struct TapedModel {
    pub persistent: StreamVars,
    pub dynamic: StreamVars,
    pub actor: StreamVars,
    pub codes_dynamic: Var,
    pub codes_actor: Var,
    /// Vars of trainable slots, aligned with the filtered `param_slots`.
    pub trainable: Vec<Var>,
}

/// Taped geometry outputs for one stream over a flat point batch.
pub struct TapedStreamGeometry {
    /// [N, 1] post-softplus.
    pub sigma: Var,
    /// [N, 3] post-sigmoid.
    pub color: Var,
    /// [N, 1] softplus + beta_min.
    pub beta: Option<Var>,
    /// [N, width].
    pub hidden: Var,
}

impl TapedModel {
    /// Put every parameter on the tape; `trainable` selects which slots get
    /// gradients.
    pub fn build<T: Real>(
        g: &mut Graph<T>,
        model: &FieldModel<T>,
        trainable: impl Fn(&str, ParamGroup) -> bool,
    ) -> TapedModel {
        let slots = model.param_slots();
        let tensors = model.params();
        let mut vars = Vec::with_capacity(slots.len());
        let mut trainable_vars = Vec::new();
        for ((name, group), tensor) in slots.iter().zip(&tensors) {
            let v = if trainable(name, *group) {
                let v = g.param((*tensor).clone());
                trainable_vars.push(v);
                v
            } else {
                g.constant((*tensor).clone())
            };
            vars.push(v);
        }

        let mut cursor = 0usize;
        let mut take = || {
            let v = vars[cursor];
            cursor += 1;
            v
        };
        let mut stream = |net: &StreamNet<T>| -> StreamVars {
            let trunk: Vec<(Var, Var)> = (0..net.trunk.len()).map(|_| (take(), take())).collect();
            let sigma = (take(), take());
            let color = (take(), take());
            let beta = net.beta.is_some().then(|| (take(), take()));
            let phi = (take(), take());
            let psi = (take(), take());
            StreamVars { trunk, sigma, color, beta, phi, psi }
        };
        let persistent = stream(&model.persistent);
        let dynamic = stream(&model.dynamic);
        let actor = stream(&model.actor);
        let codes_dynamic = take();
        let codes_actor = take();
        TapedModel { persistent, dynamic, actor, codes_dynamic, codes_actor, trainable: trainable_vars }
    }
}

impl StreamVars {
    /// Taped geometry forward over input rows [N, in_dim].
    pub fn geometry<T: Real>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        beta_min: f64,
    ) -> crate::numkit::Result<TapedStreamGeometry> {
        let mut h = x;
        for &(w, b) in &self.trunk {
            let m = g.matmul(h, w)?;
            let hb = g.add_bias(m, b)?;
            h = g.relu(hb);
        }
        let sm = g.matmul(h, self.sigma.0)?;
        let sp = g.add_bias(sm, self.sigma.1)?;
        let sigma = g.softplus(sp);
        let cm = g.matmul(h, self.color.0)?;
        let cp = g.add_bias(cm, self.color.1)?;
        let color = g.sigmoid(cp);
        let beta = match self.beta {
            Some((w, b)) => {
                let bm = g.matmul(h, w)?;
                let bp = g.add_bias(bm, b)?;
                let soft = g.softplus(bp);
                Some(g.affine(soft, 1.0, beta_min))
            }
            None => None,
        };
        Ok(TapedStreamGeometry { sigma, color, beta, hidden: h })
    }

    /// Taped feature heads over (gathered) hidden rows.
    pub fn features<T: Real>(
        &self,
        g: &mut Graph<T>,
        hidden: Var,
    ) -> crate::numkit::Result<(Var, Var)> {
        let pm = g.matmul(hidden, self.phi.0)?;
        let phi = g.add_bias(pm, self.phi.1)?;
        let qm = g.matmul(hidden, self.psi.0)?;
        let psi = g.add_bias(qm, self.psi.1)?;
        Ok((phi, psi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::check::{central_difference, relative_error};

    fn small_config() -> ModelConfig {
        ModelConfig {
            frames: 4,
            l_pos: 3,
            l_dir: 2,
            width: 16,
            depth: 2,
            code_dim: 4,
            phi_dim: 8,
            psi_dim: 6,
            beta_min: 1e-2,
        }
    }

    #[test]
    fn param_count_matches_config_arithmetic() {
        let cfg = small_config();
        let model = FieldModel::<f64>::new(cfg, 1);
        assert_eq!(model.param_count(), cfg.param_count());
        assert_eq!(model.params().len(), model.param_slots().len());

        let paper = ModelConfig { frames: 30, ..ModelConfig::default() };
        let big = FieldModel::<f32>::new(paper, 1);
        assert_eq!(big.param_count(), paper.param_count());
    }

    #[test]
    fn fresh_sigma_is_small_and_near_uniform() {
        let model = FieldModel::<f64>::new(small_config(), 2);
        let mut sigmas = Vec::new();
        for i in 0..200 {
            let x = [(i as f64 * 0.017) % 2.0 - 1.0, (i as f64 * 0.031) % 2.0 - 1.0, 0.3];
            let (_, sigma, _, _) = model.eval_persistent(x, [0.0, 0.0, 1.0]).unwrap();
            sigmas.push(sigma);
        }
        let mean: f64 = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
        let var: f64 =
            sigmas.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / sigmas.len() as f64;
        // softplus(-1) with small head weights: near-constant small density.
        assert!(mean > 0.05 && mean < 1.0, "mean {mean}");
        assert!(var.sqrt() < 0.2 * mean, "std {} mean {mean}", var.sqrt());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let model = FieldModel::<f64>::new(small_config(), 2);
        let a = model.eval_dynamic([0.3, -0.2, 0.5], 1).unwrap();
        let b = model.eval_dynamic([0.3, -0.2, 0.5], 1).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.3, b.3);
    }

    #[test]
    fn beta_floor_holds_everywhere() {
        let model = FieldModel::<f64>::new(small_config(), 3);
        for i in 0..1000 {
            let x = [
                ((i * 37) % 100) as f64 / 50.0 - 1.0,
                ((i * 53) % 100) as f64 / 50.0 - 1.0,
                ((i * 71) % 100) as f64 / 50.0 - 1.0,
            ];
            let (_, _, beta, _, _) = model.eval_actor(x, i % 4).unwrap();
            assert!(beta >= 1e-2);
        }
    }

    #[test]
    fn distinct_codes_change_density() {
        let model = FieldModel::<f64>::new(small_config(), 4);
        let x = [0.2, 0.1, -0.4];
        let sigmas: Vec<f64> = (0..4).map(|t| model.eval_dynamic(x, t).unwrap().1).collect();
        assert!(
            sigmas.iter().any(|&s| (s - sigmas[0]).abs() > 0.0),
            "codes should modulate sigma: {sigmas:?}"
        );
    }

    #[test]
    fn actor_is_camera_frame_only() {
        // Same camera-frame point must give identical output regardless of
        // any notion of world position; t fixed so the code matches.
        let model = FieldModel::<f64>::new(small_config(), 5);
        let a = model.eval_actor([0.1, -0.3, 1.2], 2).unwrap();
        let b = model.eval_actor([0.1, -0.3, 1.2], 2).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn frame_out_of_range_is_an_error() {
        let model = FieldModel::<f64>::new(small_config(), 5);
        assert!(matches!(
            model.eval_dynamic([0.0; 3], 4),
            Err(FieldError::FrameOutOfRange(4, 4))
        ));
        assert!(matches!(
            model.eval_persistent([f64::NAN, 0.0, 0.0], [0.0, 0.0, 1.0]),
            Err(FieldError::NonFiniteInput)
        ));
    }

    #[test]
    fn range_invariants_on_random_inputs() {
        let model = FieldModel::<f32>::new(small_config(), 6);
        let mut bad = 0;
        for i in 0..10_000 {
            let x = [
                ((i * 131) % 2000) as f64 / 1000.0 - 1.0,
                ((i * 173) % 2000) as f64 / 1000.0 - 1.0,
                ((i * 197) % 2000) as f64 / 1000.0 - 1.0,
            ];
            let (c, sigma, beta, _, _) = model.eval_dynamic(x, i % 4).unwrap();
            if !(sigma >= 0.0 && beta >= 0.01 - 1e-6) {
                bad += 1;
            }
            if c.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                bad += 1;
            }
        }
        assert_eq!(bad, 0);
    }

    #[test]
    fn zeroing_feature_heads_leaves_geometry_bitwise_unchanged() {
        let mut model = FieldModel::<f64>::new(small_config(), 7);
        let before = model.eval_dynamic([0.3, 0.2, 0.1], 1).unwrap();
        for net in [&mut model.persistent, &mut model.dynamic, &mut model.actor] {
            net.phi.w = Tensor::zeros(net.phi.w.shape());
            net.phi.b = Tensor::zeros(net.phi.b.shape());
            net.psi.w = Tensor::zeros(net.psi.w.shape());
            net.psi.b = Tensor::zeros(net.psi.b.shape());
        }
        let after = model.eval_dynamic([0.3, 0.2, 0.1], 1).unwrap();
        assert_eq!(before.0, after.0);
        assert_eq!(before.1, after.1);
        assert_eq!(before.2, after.2);
    }

    #[test]
    fn taped_forward_matches_plain_forward() {
        let model = FieldModel::<f64>::new(small_config(), 8);
        let pts = [[0.3, -0.2, 0.5], [0.0, 0.4, -0.1]];
        let enc: Tensor<f64> = encode_positions(&pts, model.config.l_pos);
        let mut input_rows = Vec::new();
        for (i, _) in pts.iter().enumerate() {
            let mut row = enc.data()[i * 18..(i + 1) * 18].to_vec();
            row.extend_from_slice(&model.codes_dynamic.data()[4..8]); // frame 1
            input_rows.push(row);
        }
        let flat: Vec<f64> = input_rows.concat();
        let plain = model.dynamic.forward_geometry(&flat, 2, model.config.beta_min);

        let mut g = Graph::<f64>::new();
        let taped = TapedModel::build(&mut g, &model, |_, _| false);
        let x = g.constant(Tensor::new(&[2, 22], flat).unwrap());
        let geo = taped.dynamic.geometry(&mut g, x, model.config.beta_min).unwrap();
        assert_eq!(g.value(geo.sigma).data(), plain.sigma.as_slice());
        assert_eq!(g.value(geo.color).data(), plain.color.as_slice());
        assert_eq!(g.value(geo.hidden).data(), plain.hidden.as_slice());
    }

    #[test]
    fn sigma_gradient_matches_finite_differences() {
        let model = FieldModel::<f64>::new(small_config(), 9);
        let x = [0.25, -0.15, 0.4];
        let enc: Tensor<f64> = encode_positions(&[x], model.config.l_pos);
        let mut row = enc.data().to_vec();
        row.extend_from_slice(&model.codes_dynamic.data()[0..4]);

        // d sigma / d first-layer weights, via the tape.
        let mut g = Graph::<f64>::new();
        let taped = TapedModel::build(&mut g, &model, |name, _| name == "dynamic/trunk0/w");
        let xin = g.constant(Tensor::new(&[1, 22], row.clone()).unwrap());
        let geo = taped.dynamic.geometry(&mut g, xin, model.config.beta_min).unwrap();
        let loss = g.sum(geo.sigma);
        g.backward(loss).unwrap();
        let analytic = g.grad(taped.trainable[0]);

        // Finite differences through the plain forward.
        let w0 = model.dynamic.trunk[0].w.clone();
        let coords = [0usize, 7, 100, w0.len() - 1];
        let mut forward = |ws: &[f64]| -> f64 {
            let mut m = model.clone();
            m.dynamic.trunk[0].w = Tensor::new(w0.shape(), ws.to_vec()).unwrap();
            let geo = m.dynamic.forward_geometry(&row, 1, m.config.beta_min);
            geo.sigma[0]
        };
        let fd = central_difference(&mut forward, w0.data(), &coords, 1e-6);
        for (&c, &want) in coords.iter().zip(&fd) {
            let got = analytic.data()[c];
            assert!(relative_error(got, want) < 1e-6, "coord {c}: {got} vs {want}");
        }
    }

    #[test]
    fn code_gradient_is_nonzero_after_backward_through_sigma() {
        let model = FieldModel::<f64>::new(small_config(), 10);
        let x = [0.25, -0.15, 0.4];
        let enc: Tensor<f64> = encode_positions(&[x], model.config.l_pos);

        let mut g = Graph::<f64>::new();
        let taped = TapedModel::build(&mut g, &model, |name, _| name == "codes/dynamic");
        let enc_v = g.constant(enc);
        let codes = g.gather_rows(taped.codes_dynamic, &[1]).unwrap();
        let xin = g.concat_cols(enc_v, codes).unwrap();
        let geo = taped.dynamic.geometry(&mut g, xin, model.config.beta_min).unwrap();
        let loss = g.sum(geo.sigma);
        g.backward(loss).unwrap();
        let grad = g.grad(taped.codes_dynamic);
        let row1 = &grad.data()[4..8];
        assert!(row1.iter().any(|&v| v != 0.0), "code gradient should be nonzero");
        // Other frames' codes receive nothing.
        assert!(grad.data()[0..4].iter().all(|&v| v == 0.0));
    }
}
