//! Jump-plane construction and decomposition of the in-plane resultant
//! forces into per-foot ground reactions.
//!
//! The plane is vertical, contains the CoM and points at the target heading.
//! Its ground trace crosses the support polygon at two points; each carries
//! the resultant of one pair of feet, split between the two feet by the lever
//! rule so the net moment about the CoM stays normal to the plane.

use std::f64::consts::{PI, TAU};

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::leg_kinematics::{LegId, Stance};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlaneError {
    #[error("target has no horizontal component; request a vertical jump explicitly")]
    DegenerateTarget,
    #[error("support polygon is degenerate (feet must surround the CoM in FL, RL, RR, FR order)")]
    DegenerateStance,
    #[error("jump plane misses support edge {0:?}")]
    MissesPolygon((LegId, LegId)),
}

/// Which support edge the plane leaves through in the target direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneCase {
    Left,
    Rear,
    Right,
    Front,
}

impl PlaneCase {
    /// Foot pairs `(m_1, m_2)` and `(l_1, l_2)`, 1-based.
    pub fn feet_indices(self) -> ([usize; 2], [usize; 2]) {
        match self {
            Self::Left => ([1, 2], [3, 4]),
            Self::Rear => ([3, 1], [4, 2]),
            Self::Right => ([2, 1], [4, 3]),
            Self::Front => ([1, 3], [2, 4]),
        }
    }
}

/// One crossing of the plane with a support edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCrossing {
    pub m: LegId,
    pub l: LegId,
    /// Crossing point on the ground, world frame.
    pub point: Vector3<f64>,
    /// Signed distance from the CoM along the jump direction.
    pub s: f64,
    /// Share of the edge resultant carried by foot `l`; foot `m` takes the rest.
    pub share_l: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpPlaneSpec {
    /// Target heading `atan2(y, x)` in `[0, 2pi)`.
    pub heading: f64,
    pub case: PlaneCase,
    /// Leading (`[0]`) and trailing (`[1]`) crossings.
    pub edges: [EdgeCrossing; 2],
    pub com: Vector3<f64>,
    pub feet: Vec<Vector3<f64>>,
}

impl JumpPlaneSpec {
    pub fn direction(&self) -> Vector3<f64> {
        Vector3::new(self.heading.cos(), self.heading.sin(), 0.0)
    }

    /// Horizontal normal of the plane; positive pitch rotates about it.
    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(-self.heading.sin(), self.heading.cos(), 0.0)
    }

    pub fn edge_positions(&self) -> (f64, f64) {
        (self.edges[0].s, self.edges[1].s)
    }
}

/// In-plane resultants `[u_J1, u_J2, u_z1, u_z2]` for the leading and trailing edge.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResultantForces(pub [f64; 4]);

fn azimuth(v: Vector2<f64>) -> f64 {
    v.y.atan2(v.x).rem_euclid(TAU)
}

fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Canonical ordering of each support edge: front, left, rear, right.
fn edge_for_sector(sector: PlaneCase) -> (LegId, LegId) {
    use LegId::*;
    match sector {
        PlaneCase::Front => (FrontLeft, FrontRight),
        PlaneCase::Left => (FrontLeft, RearLeft),
        PlaneCase::Rear => (RearLeft, RearRight),
        PlaneCase::Right => (FrontRight, RearRight),
    }
}

/// Sector of a heading among the foot azimuths; the front sector wraps.
pub fn classify(heading: f64, foot_az: &[f64; 4]) -> PlaneCase {
    let [f1, f2, f3, f4] = *foot_az;
    let h = heading.rem_euclid(TAU);
    if f1 < h && h <= f3 {
        PlaneCase::Left
    } else if f3 < h && h <= f4 {
        PlaneCase::Rear
    } else if f4 < h && h <= f2 {
        PlaneCase::Right
    } else {
        PlaneCase::Front
    }
}

fn cross_edge(
    com: Vector2<f64>,
    dir: Vector2<f64>,
    feet: &[Vector3<f64>],
    (m, l): (LegId, LegId),
) -> Result<EdgeCrossing, PlaneError> {
    let pm = feet[m.index()].xy();
    let pl = feet[l.index()].xy();
    let e = pl - pm;
    let denom = cross2(dir, e);
    if denom.abs() < 1e-15 {
        return Err(PlaneError::MissesPolygon((m, l)));
    }
    let w = pm - com;
    let s = cross2(w, e) / denom;
    let lambda = cross2(w, dir) / denom;
    const SLACK: f64 = 1e-12;
    if !(-SLACK..=1.0 + SLACK).contains(&lambda) {
        return Err(PlaneError::MissesPolygon((m, l)));
    }
    let lambda = lambda.clamp(0.0, 1.0);
    let z = feet[m.index()].z * (1.0 - lambda) + feet[l.index()].z * lambda;
    let p = com + dir * s;
    Ok(EdgeCrossing {
        m,
        l,
        point: Vector3::new(p.x, p.y, z),
        s,
        share_l: lambda,
    })
}

/// Builds the jump plane for a target given in the stance frame. A target
/// with no horizontal component is only accepted when `vertical` is set, in
/// which case the plane faces forward.
pub fn build_plane(
    target: &Vector3<f64>,
    vertical: bool,
    stance: &Stance,
    com: &Vector3<f64>,
) -> Result<JumpPlaneSpec, PlaneError> {
    let horiz = target.xy() - com.xy();
    let heading = if horiz.norm() > 1e-12 {
        azimuth(horiz)
    } else if vertical {
        0.0
    } else {
        return Err(PlaneError::DegenerateTarget);
    };
    plane_for_heading(heading, stance, com)
}

pub fn plane_for_heading(heading: f64, stance: &Stance, com: &Vector3<f64>) -> Result<JumpPlaneSpec, PlaneError> {
    if stance.feet.len() != 4 {
        return Err(PlaneError::DegenerateStance);
    }
    let c = com.xy();
    let az: [f64; 4] = std::array::from_fn(|i| azimuth(stance.feet[i].xy() - c));
    // Counter-clockwise order FL, RL, RR, FR with the CoM strictly inside.
    let ring = [0usize, 2, 3, 1];
    for k in 0..4 {
        let a = stance.feet[ring[k]].xy() - c;
        let b = stance.feet[ring[(k + 1) % 4]].xy() - c;
        if cross2(a, b) <= 1e-12 {
            return Err(PlaneError::DegenerateStance);
        }
    }
    let span: f64 = (0..4).map(|k| (az[ring[(k + 1) % 4]] - az[ring[k]]).rem_euclid(TAU)).sum();
    if (span - TAU).abs() > 1e-9 || !(az[0] < az[2] && az[2] < az[3] && az[3] < az[1]) {
        return Err(PlaneError::DegenerateStance);
    }
    let heading = heading.rem_euclid(TAU);
    let case = classify(heading, &az);
    let back = classify(heading + PI, &az);
    let dir = Vector2::new(heading.cos(), heading.sin());
    let lead = cross_edge(c, dir, &stance.feet, edge_for_sector(case))?;
    let trail = cross_edge(c, -dir, &stance.feet, edge_for_sector(back))?;
    let trail = EdgeCrossing { s: -trail.s, ..trail };
    Ok(JumpPlaneSpec {
        heading,
        case,
        edges: [lead, trail],
        com: *com,
        feet: stance.feet.clone(),
    })
}

/// Per-foot ground reactions (world frame, indexed by leg) for in-plane resultants.
pub fn decompose(u: &ResultantForces, plane: &JumpPlaneSpec) -> [Vector3<f64>; 4] {
    let dir = plane.direction();
    let mut out = [Vector3::zeros(); 4];
    for (j, edge) in plane.edges.iter().enumerate() {
        let f = dir * u.0[j] + Vector3::z() * u.0[2 + j];
        out[edge.m.index()] += f * (1.0 - edge.share_l);
        out[edge.l.index()] += f * edge.share_l;
    }
    out
}

/// Moment of the foot forces about `com` with its along-normal part removed;
/// zero when the decomposition keeps the body's rotation in the plane.
pub fn com_torque_check(forces: &[Vector3<f64>; 4], plane: &JumpPlaneSpec, com: &Vector3<f64>) -> Vector3<f64> {
    let tau: Vector3<f64> = forces.iter().zip(&plane.feet).map(|(f, p)| (p - com).cross(f)).sum();
    let n = plane.normal();
    tau - n * tau.dot(&n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot_model::RobotParams;
    use approx::assert_relative_eq;

    fn setup() -> (Stance, Vector3<f64>) {
        (Stance::nominal(&RobotParams::mini_cheetah()), Vector3::new(0.0, 0.0, 0.2))
    }

    #[test]
    fn diagonal_target_case() {
        let (st, com) = setup();
        let p = build_plane(&Vector3::new(0.5, -0.5, 0.5), false, &st, &com).unwrap();
        assert_relative_eq!(p.heading.to_degrees(), 315.0, epsilon = 1e-9);
        assert_eq!(p.case, PlaneCase::Right);
        assert_eq!(p.case.feet_indices(), ([2, 1], [4, 3]));
        // the same case covers 225 degrees
        let p = plane_for_heading(225f64.to_radians(), &st, &com).unwrap();
        assert_eq!(p.case, PlaneCase::Right);
    }

    #[test]
    fn cases_partition_circle() {
        let (st, com) = setup();
        let mut seen = std::collections::HashSet::new();
        for deg in 0..360 {
            let p = plane_for_heading((deg as f64).to_radians(), &st, &com).unwrap();
            seen.insert(format!("{:?}", p.case));
            assert!(p.edges[0].s > 0.0 && p.edges[1].s < 0.0);
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn symmetric_forward_split() {
        let (st, com) = setup();
        let p = build_plane(&Vector3::new(1.0, 0.0, 0.25), false, &st, &com).unwrap();
        assert_eq!(p.case, PlaneCase::Front);
        let f = decompose(&ResultantForces([20.0, 20.0, 50.0, 50.0]), &p);
        for leg in f {
            assert_relative_eq!(leg.z, 25.0, epsilon = 1e-12);
            assert_relative_eq!(leg.x, 10.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn crossing_at_a_foot_loads_that_foot() {
        let (st, com) = setup();
        let f1 = st.feet[0];
        let p = plane_for_heading(f1.y.atan2(f1.x), &st, &com).unwrap();
        let f = decompose(&ResultantForces([10.0, 10.0, 40.0, 40.0]), &p);
        assert_relative_eq!(f[0].z, 40.0, epsilon = 1e-9);
        assert!(f[1].z.abs() < 1e-9 && f[2].z.abs() < 1e-9);
    }

    #[test]
    fn vertical_and_degenerate_targets() {
        let (st, com) = setup();
        assert_eq!(
            build_plane(&Vector3::new(0.0, 0.0, 0.0), false, &st, &com).unwrap_err(),
            PlaneError::DegenerateTarget
        );
        let p = build_plane(&Vector3::new(0.0, 0.0, 0.5), true, &st, &com).unwrap();
        assert_eq!(p.heading, 0.0);
        let mut bad = st.clone();
        bad.feet[0] = bad.feet[1];
        assert!(build_plane(&Vector3::new(1.0, 0.0, 0.3), false, &bad, &com).is_err());
    }

    #[test]
    fn torque_normal_to_plane() {
        let (st, com) = setup();
        for deg in (0..360).step_by(7) {
            let p = plane_for_heading((deg as f64).to_radians(), &st, &com).unwrap();
            let f = decompose(&ResultantForces([13.0, 7.0, 55.0, 31.0]), &p);
            assert!(com_torque_check(&f, &p, &com).norm() < 1e-9);
        }
    }
}
