//! Camera trajectory and ray generation shared by the oracle and the
//! production renderer.

use serde::{Deserialize, Serialize};

use super::solids::{add3, cross3, normalize3, scale3, sub3, Vec3};

/// Rigid camera pose: position plus an orthonormal basis.
/// Camera coordinates are x-right, y-up, z-forward.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
}

impl Pose {
    pub fn look_at(position: Vec3, target: Vec3, up_hint: Vec3) -> Self {
        let forward = normalize3(sub3(target, position));
        let right = normalize3(cross3(forward, up_hint));
        let up = cross3(right, forward);
        Self { position, right, up, forward }
    }

    pub fn world_to_cam(&self, p: Vec3) -> Vec3 {
        let d = sub3(p, self.position);
        [
            d[0] * self.right[0] + d[1] * self.right[1] + d[2] * self.right[2],
            d[0] * self.up[0] + d[1] * self.up[1] + d[2] * self.up[2],
            d[0] * self.forward[0] + d[1] * self.forward[1] + d[2] * self.forward[2],
        ]
    }

    pub fn cam_dir_to_world(&self, d: Vec3) -> Vec3 {
        add3(
            add3(scale3(self.right, d[0]), scale3(self.up, d[1])),
            scale3(self.forward, d[2]),
        )
    }
}

/// Camera trajectory over the sequence.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CameraPath {
    /// Circular orbit around `center` at `radius`, elevated by `height`,
    /// looking at `look_at`, sweeping `arc_deg` degrees over the sequence
    /// with a vertical bob.
    Orbit {
        center: Vec3,
        radius: f64,
        height: f64,
        look_at: Vec3,
        arc_deg: f64,
        start_deg: f64,
        bob_amplitude: f64,
        bob_cycles: f64,
    },
    /// Explicit per-frame poses as (position, look_at) pairs.
    Keyframes { poses: Vec<(Vec3, Vec3)> },
}

impl CameraPath {
    pub fn pose(&self, t: usize, frames: usize) -> Pose {
        match self {
            CameraPath::Orbit {
                center,
                radius,
                height,
                look_at,
                arc_deg,
                start_deg,
                bob_amplitude,
                bob_cycles,
            } => {
                let frac = if frames <= 1 { 0.0 } else { t as f64 / (frames - 1) as f64 };
                let angle = (start_deg + arc_deg * frac).to_radians();
                let bob = bob_amplitude * (2.0 * std::f64::consts::PI * bob_cycles * frac).sin();
                let position = [
                    center[0] + radius * angle.cos(),
                    center[1] + radius * angle.sin(),
                    center[2] + height + bob,
                ];
                Pose::look_at(position, *look_at, [0.0, 0.0, 1.0])
            }
            CameraPath::Keyframes { poses } => {
                let (position, target) = poses[t.min(poses.len().saturating_sub(1))];
                Pose::look_at(position, target, [0.0, 0.0, 1.0])
            }
        }
    }
}

/// Unit ray direction through pixel (row, col), in world space, plus the
/// camera-space direction. `fov_deg` is the vertical field of view.
pub fn pixel_ray(
    pose: &Pose,
    width: usize,
    height: usize,
    fov_deg: f64,
    row: usize,
    col: usize,
) -> (Vec3, Vec3) {
    let focal = 0.5 * height as f64 / (0.5 * fov_deg.to_radians()).tan();
    let x = (col as f64 + 0.5 - width as f64 / 2.0) / focal;
    let y = -(row as f64 + 0.5 - height as f64 / 2.0) / focal;
    let d_cam = normalize3([x, y, 1.0]);
    let d_world = normalize3(pose.cam_dir_to_world(d_cam));
    (d_world, d_cam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::solids::{dot3, norm3};

    #[test]
    fn pose_basis_is_orthonormal() {
        let p = Pose::look_at([3.0, -2.0, 1.5], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        assert!((norm3(p.right) - 1.0).abs() < 1e-12);
        assert!((norm3(p.up) - 1.0).abs() < 1e-12);
        assert!((norm3(p.forward) - 1.0).abs() < 1e-12);
        assert!(dot3(p.right, p.up).abs() < 1e-12);
        assert!(dot3(p.right, p.forward).abs() < 1e-12);
        assert!(dot3(p.up, p.forward).abs() < 1e-12);
    }

    #[test]
    fn world_cam_round_trip() {
        let pose = Pose::look_at([2.0, 1.0, 3.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        let p = [0.3, -0.8, 0.2];
        let cam = pose.world_to_cam(p);
        let back = add3(pose.cam_dir_to_world(cam), pose.position);
        for i in 0..3 {
            assert!((back[i] - p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn center_pixel_looks_forward() {
        let pose = Pose::look_at([4.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        // Odd-sized image so a pixel center sits on the axis.
        let (d, d_cam) = pixel_ray(&pose, 65, 65, 50.0, 32, 32);
        assert!(dot3(d, pose.forward) > 0.999);
        assert!((norm3(d) - 1.0).abs() < 1e-12);
        assert!((norm3(d_cam) - 1.0).abs() < 1e-12);
    }
}
