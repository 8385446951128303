//! Coordinate frames and array-local angles.
//!
//! Orientation follows the intrinsic z-y'-x'' convention: rotate by `alpha`
//! about z, then by `beta` about the once-rotated y axis, then by `gamma`
//! about the twice-rotated x axis. The resulting matrix maps local
//! coordinates to global ones, so its columns are the local axes expressed in
//! the global frame. Each array panel lies in its local xz plane.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Orientation {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Orientation {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

/// Position (meters, global frame) plus orientation (radians).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: Orientation,
}

impl Pose {
    pub fn new(position: [f64; 3], orientation: Orientation) -> Self {
        Self { position, orientation }
    }

    pub fn position_vec(&self) -> Vec3 {
        Vec3::from(self.position)
    }

    pub fn rotation(&self) -> RotationMatrix {
        let o = self.orientation;
        rotation_matrix(o.alpha, o.beta, o.gamma)
    }

    /// The six context features `(x, y, z, alpha, beta, gamma)`.
    pub fn features(&self) -> [f64; 6] {
        let [x, y, z] = self.position;
        let o = self.orientation;
        [x, y, z, o.alpha, o.beta, o.gamma]
    }

    pub fn from_features(f: [f64; 6]) -> Self {
        Self::new([f[0], f[1], f[2]], Orientation::new(f[3], f[4], f[5]))
    }
}

/// Proper rotation (orthogonal, unit determinant).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn apply_inverse(&self, v: &Vec3) -> Vec3 {
        self.0.transpose() * v
    }
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// `Rz(alpha) * Ry(beta) * Rx(gamma)`.
pub fn rotation_matrix(alpha: f64, beta: f64, gamma: f64) -> RotationMatrix {
    RotationMatrix(rot_z(alpha) * rot_y(beta) * rot_x(gamma))
}

fn check_unit(v: &Vec3) -> Result<()> {
    let n = v.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::arg(format!("direction must be unit-norm, got norm {n}")));
    }
    Ok(())
}

/// Express a global unit direction in the pose's local frame.
pub fn global_to_local(direction: &Vec3, pose: &Pose) -> Result<Vec3> {
    check_unit(direction)?;
    Ok(pose.rotation().apply_inverse(direction))
}

pub fn local_to_global(direction: &Vec3, pose: &Pose) -> Result<Vec3> {
    check_unit(direction)?;
    Ok(pose.rotation().apply(direction))
}

/// Azimuth/elevation of a direction relative to an array panel in the local
/// xz plane. `theta` is measured from local z, `phi` from local x in the xy
/// plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayAngles {
    pub phi: f64,
    pub theta: f64,
}

impl ArrayAngles {
    pub fn new(phi: f64, theta: f64) -> Self {
        Self { phi, theta }
    }

    /// Direction cosines along the panel's horizontal (local x) and vertical
    /// (local z) element axes: `(sin(theta) cos(phi), cos(theta))`.
    pub fn direction_cosines(&self) -> (f64, f64) {
        (self.theta.sin() * self.phi.cos(), self.theta.cos())
    }

    pub fn to_direction(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vec3::new(st * cp, st * sp, ct)
    }
}

/// `theta = acos(d_z)`, `phi = atan2(d_y, d_x)`; at the poles `phi` is 0.
pub fn dir_to_array_angles(local_direction: &Vec3) -> Result<ArrayAngles> {
    check_unit(local_direction)?;
    let d = local_direction;
    let theta = d.z.clamp(-1.0, 1.0).acos();
    let phi = if d.x == 0.0 && d.y == 0.0 {
        0.0
    } else {
        let p = d.y.atan2(d.x);
        // atan2 yields [-pi, pi]; fold -pi onto pi to keep (-pi, pi].
        if p <= -std::f64::consts::PI {
            std::f64::consts::PI
        } else {
            p
        }
    };
    Ok(ArrayAngles { phi, theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn elementary_compose(a: f64, b: f64, g: f64) -> [[f64; 3]; 3] {
        // Independent row-major composition without nalgebra.
        let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
        let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
        let rx = [[1.0, 0.0, 0.0], [0.0, g.cos(), -g.sin()], [0.0, g.sin(), g.cos()]];
        let mul = |x: [[f64; 3]; 3], y: [[f64; 3]; 3]| {
            let mut out = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    out[i][j] = (0..3).map(|k| x[i][k] * y[k][j]).sum();
                }
            }
            out
        };
        mul(mul(rz, ry), rx)
    }

    #[test]
    fn zero_rotation_is_identity() {
        let r = rotation_matrix(0.0, 0.0, 0.0);
        assert!((r.matrix() - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = rotation_matrix(FRAC_PI_2, 0.0, 0.0);
        let col0 = r.matrix().column(0);
        assert!((col0 - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn composition_matches_elementary_product() {
        let r = rotation_matrix(0.3, 0.2, 0.1);
        let oracle = elementary_compose(0.3, 0.2, 0.1);
        for i in 0..3 {
            for j in 0..3 {
                assert!((r.matrix()[(i, j)] - oracle[i][j]).abs() < 1e-14);
            }
        }
        let m = r.matrix();
        assert!((m * m.transpose() - Matrix3::identity()).norm() < 1e-12);
        assert!((m.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_rotations_are_proper() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, &[]);
        for _ in 0..1000 {
            let (a, b, g) = (
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
            );
            let m = *rotation_matrix(a, b, g).matrix();
            assert!((m * m.transpose() - Matrix3::identity()).norm() < 1e-10);
            assert!((m.determinant() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn global_to_local_examples() {
        let pose = Pose::default();
        let x = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(global_to_local(&x, &pose).unwrap(), x);

        let pose = Pose::new([0.0; 3], Orientation::new(FRAC_PI_2, 0.0, 0.0));
        let out = global_to_local(&Vec3::new(0.0, 1.0, 0.0), &pose).unwrap();
        assert!((out - x).norm() < 1e-12);
    }

    #[test]
    fn non_unit_direction_rejected() {
        let pose = Pose::default();
        assert!(global_to_local(&Vec3::new(1.0, 1.0, 0.0), &pose).is_err());
        assert!(dir_to_array_angles(&Vec3::new(0.0, 0.0, 0.5)).is_err());
    }

    #[test]
    fn array_angle_examples() {
        let a = dir_to_array_angles(&Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((a.theta - FRAC_PI_2).abs() < 1e-15 && a.phi == 0.0);

        let a = dir_to_array_angles(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((a.theta, a.phi), (0.0, 0.0));
        let a = dir_to_array_angles(&Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert!((a.theta - PI).abs() < 1e-15 && a.phi == 0.0);

        let a = dir_to_array_angles(&Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert!((a.theta - FRAC_PI_2).abs() < 1e-15);
        assert!((a.phi - FRAC_PI_2).abs() < 1e-15);
        let (u, w) = a.direction_cosines();
        assert!(u.abs() < 1e-15 && w.abs() < 1e-15);
    }

    #[test]
    fn negative_x_axis_azimuth_is_pi() {
        let a = dir_to_array_angles(&Vec3::new(-1.0, -0.0, 0.0)).unwrap();
        assert!(a.phi > 0.0 && (a.phi - PI).abs() < 1e-15);
    }

    fn unit_vec() -> impl Strategy<Value = Vec3> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalize())
    }

    fn orientation() -> impl Strategy<Value = Orientation> {
        (-PI..PI, -PI..PI, -PI..PI).prop_map(|(a, b, g)| Orientation::new(a, b, g))
    }

    proptest! {
        #[test]
        fn local_frame_round_trip(d in unit_vec(), o in orientation()) {
            let pose = Pose::new([0.0; 3], o);
            let local = global_to_local(&d, &pose).unwrap();
            prop_assert!((local.norm() - 1.0).abs() < 1e-12);
            let back = local_to_global(&local, &pose).unwrap();
            prop_assert!((back - d).norm() < 1e-12);
        }

        #[test]
        fn local_frame_is_isometry(a in unit_vec(), b in unit_vec(), o in orientation()) {
            let pose = Pose::new([0.0; 3], o);
            let la = global_to_local(&a, &pose).unwrap();
            let lb = global_to_local(&b, &pose).unwrap();
            prop_assert!((la.dot(&lb) - a.dot(&b)).abs() < 1e-10);
        }

        #[test]
        fn angles_reconstruct_direction(d in unit_vec()) {
            prop_assume!(d.z.abs() < 1.0 - 1e-6);
            let angles = dir_to_array_angles(&d).unwrap();
            prop_assert!((0.0..=PI).contains(&angles.theta));
            prop_assert!(angles.phi > -PI && angles.phi <= PI);
            prop_assert!((angles.to_direction() - d).norm() < 1e-9);
        }
    }
}
