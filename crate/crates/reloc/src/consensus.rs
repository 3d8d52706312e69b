//! Consensus objective and its bounds over boxes of planar poses.

use nalgebra::Vector3;

use crate::map::PlanarPatchMap;
use crate::pose::PoseHypothesis;
use crate::RelocError;

/// Inlier threshold on point-to-plane distance, m.
pub const DEFAULT_EPS: f64 = 0.1;

/// Number of points within `eps` of some patch under pose `b`.
pub fn consensus(b: &PoseHypothesis, points: &[Vector3<f64>], map: &PlanarPatchMap, eps: f64) -> usize {
    let (rot, t) = (b.rotation(), b.translation());
    points.iter().filter(|p| map.distance(&(rot * *p + t)) <= eps).count()
}

/// Points that count toward the consensus of `b`, in input order.
pub fn inlier_points(b: &PoseHypothesis, points: &[Vector3<f64>], map: &PlanarPatchMap, eps: f64) -> Vec<Vector3<f64>> {
    let (rot, t) = (b.rotation(), b.translation());
    points.iter().copied().filter(|p| map.distance(&(rot * p + t)) <= eps).collect()
}

/// Chord length of a unit vector turned by at most `half_theta`.
fn chord(half_theta: f64) -> f64 {
    if half_theta >= std::f64::consts::PI {
        2.0
    } else {
        2.0 * (half_theta / 2.0).sin()
    }
}

/// Upper bound on the displacement of `p` under any pose in a box with the
/// given half-widths `(theta, x, y)`, relative to the box centre.
pub fn relaxation(p: &Vector3<f64>, half: &[f64; 3]) -> f64 {
    chord(half[0]) * p.norm() + half[1].hypot(half[2])
}

/// Lower bound (consensus at the centre) and upper bound (consensus at the
/// centre with every threshold widened by the point's relaxation).
pub fn box_bounds(
    center: &[f64; 3],
    half: &[f64; 3],
    z: f64,
    points: &[Vector3<f64>],
    map: &PlanarPatchMap,
    eps: f64,
) -> (usize, usize) {
    let b = PoseHypothesis::from_box(center, z);
    let (rot, t) = (b.rotation(), b.translation());
    let rot_factor = chord(half[0]);
    let shift = half[1].hypot(half[2]);
    let mut lower = 0;
    let mut upper = 0;
    for p in points {
        let r = map.distance(&(rot * p + t));
        if r <= eps {
            lower += 1;
        }
        if r <= eps + rot_factor * p.norm() + shift {
            upper += 1;
        }
    }
    (lower, upper)
}

/// Box of planar poses with cached consensus bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub center: [f64; 3],
    pub half: [f64; 3],
    pub lower: usize,
    pub upper: usize,
}

impl SearchBox {
    pub fn new(center: [f64; 3], half: [f64; 3], z: f64, points: &[Vector3<f64>], map: &PlanarPatchMap, eps: f64) -> Result<Self, RelocError> {
        if half.iter().any(|h| !(*h >= 0.0)) {
            return Err(RelocError::InvalidConfig(format!("box half-widths {half:?}")));
        }
        let (lower, upper) = box_bounds(&center, &half, z, points, map, eps);
        Ok(Self { center, half, lower, upper })
    }

    pub fn contains(&self, b: &[f64; 3]) -> bool {
        (0..3).all(|i| (b[i] - self.center[i]).abs() <= self.half[i])
    }
}
