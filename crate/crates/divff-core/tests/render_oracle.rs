//! Renderer checks against the independent ground-truth oracle, plus
//! conservation and toggle invariants through a real (random) model.

use divff_core::field::{FieldModel, ModelConfig};
use divff_core::render::{
    composite, composite_features, render_image, AnalyticField, CameraIntrinsics, FieldSource,
    PlaneSelect, RenderConfig, Toggles,
};
use divff_core::scene::{
    kitchen_toy, render_ground_truth_frame, OracleOptions, SceneSpec, StreamKind,
};

fn small_model(frames: usize) -> FieldModel<f64> {
    FieldModel::new(
        ModelConfig {
            frames,
            l_pos: 4,
            l_dir: 2,
            width: 24,
            depth: 2,
            code_dim: 6,
            phi_dim: 16,
            psi_dim: 8,
            beta_min: 1e-2,
        },
        11,
    )
}

#[test]
fn analytic_renderer_matches_oracle_quadrature() {
    let spec = kitchen_toy();
    let frame = 7;
    let oracle =
        render_ground_truth_frame(&spec, frame, &OracleOptions { samples: 1024, supersample: 1 })
            .unwrap();
    let field = AnalyticField::geometry_only(&spec);
    let cam = CameraIntrinsics::from_spec(&spec);
    let pose = spec.camera.pose(frame, spec.frames);
    let cfg = RenderConfig { coarse: 64, fine: 64, feature_top: 32, jitter: false, seed: 0 };
    let planes = render_image::<f64>(
        &field,
        &pose,
        &cam,
        frame,
        Toggles::default(),
        PlaneSelect::rgb_only(),
        &cfg,
    )
    .unwrap();
    let rgb = planes.rgb.unwrap();
    let mut max_err = 0.0f32;
    for (a, b) in rgb.iter().zip(&oracle.rgb) {
        max_err = max_err.max((a - b).abs());
    }
    assert!(max_err < 0.02, "max per-channel error {max_err}");
}

#[test]
fn persistent_only_render_reveals_background() {
    // Amodal check: rendering only the persistent stream must match the
    // oracle render of a persistent-only copy of the scene.
    let spec = kitchen_toy();
    let mut stripped = spec.clone();
    stripped.dynamic.clear();
    stripped.actor.clear();
    stripped.affordances.clear();
    let frame = 12;
    let oracle =
        render_ground_truth_frame(&stripped, frame, &OracleOptions { samples: 1024, supersample: 1 })
            .unwrap();

    let field = AnalyticField::geometry_only(&spec);
    let cam = CameraIntrinsics::from_spec(&spec);
    let pose = spec.camera.pose(frame, spec.frames);
    let cfg = RenderConfig { coarse: 64, fine: 64, feature_top: 32, jitter: false, seed: 0 };
    let toggles = Toggles { persistent: true, dynamic: false, actor: false };
    let planes =
        render_image::<f64>(&field, &pose, &cam, frame, toggles, PlaneSelect::rgb_only(), &cfg)
            .unwrap();
    let rgb = planes.rgb.unwrap();
    let mut max_err = 0.0f32;
    for (a, b) in rgb.iter().zip(&oracle.rgb) {
        max_err = max_err.max((a - b).abs());
    }
    assert!(max_err < 0.02, "persistent-only max error {max_err}");
}

#[test]
fn weights_and_features_conserve_through_a_model() {
    let model = small_model(5);
    let spec = kitchen_toy();
    let pose = spec.camera.pose(2, spec.frames);

    let n = 48;
    let mut worst = 0.0f64;
    for ray in 0..200 {
        let (dir_world, dir_cam) = divff_core::scene::pixel_ray(
            &pose,
            64,
            64,
            52.0,
            (ray * 13) % 64,
            (ray * 29) % 64,
        );
        let depths: Vec<f64> = (0..n).map(|k| 0.8 + (k as f64 + 0.5) * (14.0 - 0.8) / n as f64).collect();
        let world: Vec<[f64; 3]> = depths
            .iter()
            .map(|&t| {
                [
                    pose.position[0] + dir_world[0] * t,
                    pose.position[1] + dir_world[1] * t,
                    pose.position[2] + dir_world[2] * t,
                ]
            })
            .collect();
        let cam_pts: Vec<[f64; 3]> =
            depths.iter().map(|&t| [dir_cam[0] * t, dir_cam[1] * t, dir_cam[2] * t]).collect();
        let dirs = vec![dir_world; n];
        let frames = vec![ray % 5; n];

        let geo = StreamKind::ALL
            .map(|s| model.eval_geometry(s, &world, &cam_pts, &dirs, &frames));
        let out = composite::<f64>(
            &depths,
            14.0,
            [&geo[0].sigma, &geo[1].sigma, &geo[2].sigma],
            [&geo[0].color, &geo[1].color, &geo[2].color],
            [&geo[0].beta, &geo[1].beta, &geo[2].beta],
            [true, true, true],
        );
        let total: f64 = out.weights.iter().sum::<f64>() + out.residual;
        worst = worst.max((total - 1.0).abs());

        // Feature norms through the full per-sample feature path.
        let feats = StreamKind::ALL.map(|s| {
            let hidden = geo[s.index()].hidden.as_deref();
            model.eval_features(s, &world, &cam_pts, &frames, hidden)
        });
        let (phi, psi, sel) = composite_features::<f64>(
            &out.weights,
            [&geo[0].sigma, &geo[1].sigma, &geo[2].sigma],
            [&feats[0].0, &feats[1].0, &feats[2].0],
            [&feats[0].1, &feats[1].1, &feats[2].1],
            16,
            8,
            [true, true, true],
            32,
        );
        assert!(!sel.is_empty());
        let np: f64 = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nq: f64 = psi.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((np - 1.0).abs() < 1e-9, "phi norm {np}");
        assert!((nq - 1.0).abs() < 1e-9, "psi norm {nq}");
    }
    assert!(worst < 1e-9, "conservation error {worst}");
}

#[test]
fn rendering_is_deterministic_and_toggles_zero_mass() {
    let model = small_model(4);
    let spec = kitchen_toy();
    let cam = CameraIntrinsics { width: 16, height: 16, fov_deg: 52.0, near: 0.8, far: 14.0 };
    let pose = spec.camera.pose(1, spec.frames);
    let cfg = RenderConfig { coarse: 16, fine: 16, feature_top: 8, jitter: true, seed: 3 };

    let a = render_image::<f64>(&model, &pose, &cam, 1, Toggles::default(), PlaneSelect::all(), &cfg)
        .unwrap();
    let b = render_image::<f64>(&model, &pose, &cam, 1, Toggles::default(), PlaneSelect::all(), &cfg)
        .unwrap();
    assert_eq!(a.rgb, b.rgb);
    assert_eq!(a.phi, b.phi);
    assert_eq!(a.mass, b.mass);

    let no_actor = Toggles { persistent: true, dynamic: true, actor: false };
    let c = render_image::<f64>(&model, &pose, &cam, 1, no_actor, PlaneSelect::all(), &cfg).unwrap();
    let mass = c.mass.unwrap();
    for px in 0..(16 * 16) {
        assert_eq!(mass[px * 3 + 2], 0.0);
    }

    // Feature planes are unit norm wherever weights exist.
    let phi = a.phi.unwrap();
    for px in 0..(16 * 16) {
        let n: f32 = phi[px * 16..(px + 1) * 16].iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-5 || n == 0.0, "pixel {px} norm {n}");
    }
}

#[test]
fn frame_out_of_range_and_bad_bounds_error() {
    let model = small_model(2);
    let spec = kitchen_toy();
    let pose = spec.camera.pose(0, spec.frames);
    let cam = CameraIntrinsics { width: 4, height: 4, fov_deg: 52.0, near: 0.8, far: 14.0 };
    let cfg = RenderConfig::default();
    assert!(render_image::<f64>(
        &model,
        &pose,
        &cam,
        7,
        Toggles::default(),
        PlaneSelect::rgb_only(),
        &cfg
    )
    .is_err());
    let bad = CameraIntrinsics { near: 5.0, far: 1.0, ..cam };
    assert!(render_image::<f64>(
        &model,
        &pose,
        &bad,
        0,
        Toggles::default(),
        PlaneSelect::rgb_only(),
        &cfg
    )
    .is_err());
}

fn _assert_source_object_safe(_: &dyn FieldSource<f64>) {}

#[allow(dead_code)]
fn source_trait_is_object_safe(spec: &SceneSpec) {
    let field = AnalyticField::geometry_only(spec);
    _assert_source_object_safe(&field);
}
