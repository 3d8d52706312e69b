//! Planar pose hypotheses at a fixed height.

use nalgebra::{Isometry3, Rotation3, Translation3, UnitQuaternion, Vector3};

/// Yaw `theta` and planar position `(x, y)` at the externally supplied height `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseHypothesis {
    pub theta: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl PoseHypothesis {
    pub fn new(theta: f64, x: f64, y: f64, z: f64) -> Self {
        Self { theta, x, y, z }
    }

    pub fn from_box(b: &[f64; 3], z: f64) -> Self {
        Self::new(b[0], b[1], b[2], z)
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.theta)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Maps a cloud point into the map frame.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.translation()),
            UnitQuaternion::from_rotation_matrix(&self.rotation()),
        )
    }

    /// Planar part of a full pose (yaw from the rotated x axis).
    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let ex = iso.rotation * Vector3::x();
        let t = iso.translation.vector;
        Self::new(ex.y.atan2(ex.x), t.x, t.y, t.z)
    }
}

/// Angle difference wrapped to `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    if d > std::f64::consts::PI {
        d - std::f64::consts::TAU
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn isometry_matches_apply() {
        let b = PoseHypothesis::new(0.5, 0.8, -0.5, 0.3);
        let p = Vector3::new(1.0, 2.0, -0.2);
        assert_relative_eq!(b.isometry() * nalgebra::Point3::from(p), nalgebra::Point3::from(b.apply(&p)), epsilon = 1e-12);
        let back = PoseHypothesis::from_isometry(&b.isometry());
        assert_relative_eq!(back.theta, b.theta, epsilon = 1e-12);
    }

    #[test]
    fn angle_wraps() {
        assert_relative_eq!(angle_diff(3.1, -3.1), 6.2 - std::f64::consts::TAU, epsilon = 1e-12);
        assert_relative_eq!(angle_diff(0.2, 0.1), 0.1, epsilon = 1e-12);
    }
}
