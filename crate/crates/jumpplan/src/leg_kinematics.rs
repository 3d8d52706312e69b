//! Leg kinematics for a three-joint quadruped leg (abduction, hip pitch,
//! knee) and for the sagittal humanoid leg, plus the configuration-space test.
//!
//! Quadruped zero pose: leg straight down, foot at `hip + (0, ±L0, -(L1 + L2))`.
//! Positive knee angle folds the shank forward (knee points backward); the
//! interior knee angle is `pi - q_knee`.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use thiserror::Error;

use crate::robot_model::{RobotKind, RobotParams};

/// Joints whose world height is checked: everything above the foot.
pub const MIN_JOINT_HEIGHT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinError {
    #[error("foot target out of reach by {deficit:.6} m")]
    Unreachable { deficit: f64 },
    #[error("leg {0} does not exist on this robot")]
    NoSuchLeg(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LegId {
    FrontLeft,
    FrontRight,
    RearLeft,
    RearRight,
}

impl LegId {
    pub const ALL: [LegId; 4] = [Self::FrontLeft, Self::FrontRight, Self::RearLeft, Self::RearRight];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self, KinError> {
        Self::ALL.get(i).copied().ok_or(KinError::NoSuchLeg(i))
    }

    /// +1 for left legs, -1 for right legs.
    pub fn side(self) -> f64 {
        match self {
            Self::FrontLeft | Self::RearLeft => 1.0,
            Self::FrontRight | Self::RearRight => -1.0,
        }
    }
}

/// Joint angles `[abduction, hip, knee]` (quadruped) or `[ankle, knee, hip]` (humanoid).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointVector(pub [f64; 3]);

impl JointVector {
    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::from(self.0)
    }
}

/// Joint locations of one quadruped leg in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegPoints {
    pub hip: Vector3<f64>,
    pub knee: Vector3<f64>,
    pub foot: Vector3<f64>,
}

fn leg_dims(params: &RobotParams) -> (f64, f64, f64) {
    (params.leg_lengths[0], params.leg_lengths[1], params.leg_lengths[2])
}

fn hip_of(leg: LegId, params: &RobotParams) -> Vector3<f64> {
    Vector3::from(params.hip_offsets[leg.index()])
}

fn abduction(q0: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), q0)
}

pub fn fk_points(q: &JointVector, leg: LegId, params: &RobotParams) -> LegPoints {
    let (l0, l1, l2) = leg_dims(params);
    let [q0, q1, q2] = q.0;
    let side = leg.side();
    let hip = hip_of(leg, params);
    let r = abduction(q0);
    let knee_local = Vector3::new(l1 * q1.sin(), side * l0, -l1 * q1.cos());
    let foot_local = knee_local + Vector3::new(l2 * (q1 + q2).sin(), 0.0, -l2 * (q1 + q2).cos());
    LegPoints {
        hip,
        knee: hip + r * knee_local,
        foot: hip + r * foot_local,
    }
}

/// Foot position in the body frame.
pub fn fk(q: &JointVector, leg: LegId, params: &RobotParams) -> Vector3<f64> {
    fk_points(q, leg, params).foot
}

/// Inverse kinematics on the knee-backward branch (`q_knee >= 0`).
pub fn ik(p_body: &Vector3<f64>, leg: LegId, params: &RobotParams) -> Result<JointVector, KinError> {
    let (l0, l1, l2) = leg_dims(params);
    let d = p_body - hip_of(leg, params);
    let side = leg.side();
    let r2 = d.y * d.y + d.z * d.z;
    if r2 < l0 * l0 {
        return Err(KinError::Unreachable {
            deficit: l0 - r2.sqrt(),
        });
    }
    let zs = -(r2 - l0 * l0).sqrt();
    let q0 = wrap_angle(d.z.atan2(d.y) - zs.atan2(side * l0));
    let (q1, q2) = planar_two_link(d.x, zs, l1, l2)?;
    Ok(JointVector([q0, q1, q2]))
}

/// Two-link solve for a foot at `(x, z)` below the hip; returns `(q_hip, q_knee)`
/// with the knee folding forward.
fn planar_two_link(x: f64, z: f64, l1: f64, l2: f64) -> Result<(f64, f64), KinError> {
    let reach = (x * x + z * z).sqrt();
    let (outer, inner) = (l1 + l2, (l1 - l2).abs());
    const SLACK: f64 = 1e-12;
    if reach > outer + SLACK {
        return Err(KinError::Unreachable { deficit: reach - outer });
    }
    if reach < inner - SLACK {
        return Err(KinError::Unreachable { deficit: inner - reach });
    }
    let c2 = ((reach * reach - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let q2 = c2.acos();
    let q1 = x.atan2(-z) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
    Ok((q1, q2))
}

pub fn wrap_angle(a: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    let w = (a + std::f64::consts::PI).rem_euclid(tau) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w + tau
    } else {
        w
    }
}

/// Foot Jacobian `d p_foot / d q` in the body frame.
pub fn jacobian(q: &JointVector, leg: LegId, params: &RobotParams) -> Matrix3<f64> {
    let (l0, l1, l2) = leg_dims(params);
    let [q0, q1, q2] = q.0;
    let side = leg.side();
    let (s0, c0) = q0.sin_cos();
    let (s1, c1) = q1.sin_cos();
    let (s12, c12) = (q1 + q2).sin_cos();
    let zs = -l1 * c1 - l2 * c12;
    let ys = side * l0;
    let r = abduction(q0);
    let d0 = Vector3::new(0.0, -s0 * ys - c0 * zs, c0 * ys - s0 * zs);
    let d1 = r * Vector3::new(l1 * c1 + l2 * c12, 0.0, l1 * s1 + l2 * s12);
    let d2 = r * Vector3::new(l2 * c12, 0.0, l2 * s12);
    Matrix3::from_columns(&[d0, d1, d2])
}

/// Joint torques holding a ground reaction `foot_force` (force on the robot, body frame).
pub fn joint_torque(q: &JointVector, leg: LegId, foot_force: &Vector3<f64>, params: &RobotParams) -> Vector3<f64> {
    -(jacobian(q, leg, params).transpose() * foot_force)
}

/// Cartesian impedance gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceGains {
    pub kp: Vector3<f64>,
    pub kd: Vector3<f64>,
}

impl Default for ImpedanceGains {
    fn default() -> Self {
        Self {
            kp: Vector3::new(500.0, 500.0, 350.0),
            kd: Vector3::new(14.0, 14.0, 14.0),
        }
    }
}

/// Spring-damper force pulling the foot to its desired state.
pub fn impedance_force(
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    p_des: &Vector3<f64>,
    v_des: &Vector3<f64>,
    gains: &ImpedanceGains,
) -> Vector3<f64> {
    gains.kp.component_mul(&(p_des - p)) + gains.kd.component_mul(&(v_des - v))
}

/// Default feed-forward ground reaction per foot: weight shared by the feet in contact.
pub fn default_feedforward(params: &RobotParams, feet_in_contact: usize) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, params.mass * params.gravity / feet_in_contact.max(1) as f64)
}

/// Impedance torque: feed-forward for the planned reaction `f_ff` plus the
/// Cartesian spring-damper mapped through the Jacobian transpose.
#[allow(clippy::too_many_arguments)]
pub fn impedance_torque(
    q: &JointVector,
    qdot: &Vector3<f64>,
    leg: LegId,
    p_des: &Vector3<f64>,
    v_des: &Vector3<f64>,
    f_ff: &Vector3<f64>,
    gains: &ImpedanceGains,
    params: &RobotParams,
) -> Vector3<f64> {
    let j = jacobian(q, leg, params);
    let p = fk(q, leg, params);
    let v = j * qdot;
    let tau_ff = -(j.transpose() * f_ff);
    tau_ff + j.transpose() * impedance_force(&p, &v, p_des, v_des, gains)
}

/// Interior knee angle from the knee joint coordinate.
pub fn interior_knee(q_knee: f64) -> f64 {
    std::f64::consts::PI - q_knee.abs()
}

/// Foot positions in world coordinates with a contact flag per leg.
#[derive(Debug, Clone, PartialEq)]
pub struct Stance {
    pub feet: Vec<Vector3<f64>>,
    pub contact: Vec<bool>,
}

impl Stance {
    /// All four feet on flat ground directly below the abduction offsets, with
    /// the CoM at `(0, 0, com_height)`.
    pub fn nominal(params: &RobotParams) -> Self {
        let l0 = params.leg_lengths[0];
        let feet = LegId::ALL
            .iter()
            .map(|&leg| {
                let h = hip_of(leg, params);
                Vector3::new(h.x, h.y + leg.side() * l0, 0.0)
            })
            .collect();
        Self {
            feet,
            contact: vec![true; 4],
        }
    }

    pub fn in_contact(&self) -> usize {
        self.contact.iter().filter(|&&c| c).count()
    }
}

/// Result of checking one stance leg against the configuration space.
#[derive(Debug, Clone, PartialEq)]
pub struct LegCheck {
    pub q: Result<JointVector, KinError>,
    pub points_world: Option<LegPoints>,
}

pub fn check_leg(
    com: &Vector3<f64>,
    rot: &Rotation3<f64>,
    foot_world: &Vector3<f64>,
    leg: LegId,
    params: &RobotParams,
) -> LegCheck {
    let p_body = rot.inverse() * (foot_world - com);
    match ik(&p_body, leg, params) {
        Ok(q) => {
            let pts = fk_points(&q, leg, params);
            let to_world = |v: Vector3<f64>| com + rot * v;
            LegCheck {
                q: Ok(q),
                points_world: Some(LegPoints {
                    hip: to_world(pts.hip),
                    knee: to_world(pts.knee),
                    foot: to_world(pts.foot),
                }),
            }
        }
        Err(e) => LegCheck {
            q: Err(e),
            points_world: None,
        },
    }
}

/// Whether a CoM pose keeps every stance leg reachable, inside the knee limits
/// and with all non-foot joints above `MIN_JOINT_HEIGHT`.
pub fn c_space_contains(com: &Vector3<f64>, rot: &Rotation3<f64>, stance: &Stance, params: &RobotParams) -> bool {
    if params.kind != RobotKind::Quadruped {
        return false;
    }
    let [kmin, kmax] = params.knee_limits();
    LegId::ALL.iter().zip(&stance.feet).zip(&stance.contact).filter(|(_, &c)| c).all(|((&leg, foot), _)| {
        let check = check_leg(com, rot, foot, leg, params);
        match (check.q, check.points_world) {
            (Ok(q), Some(pts)) => {
                let k = interior_knee(q.0[2]);
                k >= kmin && k <= kmax && pts.hip.z > MIN_JOINT_HEIGHT && pts.knee.z > MIN_JOINT_HEIGHT
            }
            _ => false,
        }
    })
}

/// Sagittal humanoid leg: hip, knee and ankle positions plus joint angles
/// `[ankle, knee, hip]` for a hip at `hip` and the ankle at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SagittalLeg {
    pub q: JointVector,
    pub knee: Vector2<f64>,
}

/// Humanoid leg inverse kinematics with the knee bending forward. `body_pitch`
/// is the trunk pitch (positive tips forward) and the foot stays flat.
pub fn humanoid_ik(hip: &Vector2<f64>, body_pitch: f64, params: &RobotParams) -> Result<SagittalLeg, KinError> {
    let (lu, ll) = (params.leg_lengths[0], params.leg_lengths[1]);
    let d = -hip;
    let reach = d.norm();
    if reach > lu + ll {
        return Err(KinError::Unreachable {
            deficit: reach - (lu + ll),
        });
    }
    if reach < (lu - ll).abs() || reach == 0.0 {
        return Err(KinError::Unreachable {
            deficit: (lu - ll).abs() - reach,
        });
    }
    let interior = ((lu * lu + ll * ll - reach * reach) / (2.0 * lu * ll)).clamp(-1.0, 1.0).acos();
    let q_knee = std::f64::consts::PI - interior;
    let psi = d.x.atan2(-d.y);
    let beta = ((lu * lu + reach * reach - ll * ll) / (2.0 * lu * reach)).clamp(-1.0, 1.0).acos();
    let phi1 = psi + beta;
    let phi2 = phi1 - q_knee;
    let knee = hip + lu * Vector2::new(phi1.sin(), -phi1.cos());
    Ok(SagittalLeg {
        q: JointVector([-phi2, q_knee, phi1 + body_pitch]),
        knee,
    })
}

/// Humanoid joint torques `[ankle, knee, hip]` for one of two legs sharing a
/// planar ground wrench `(fx, fz, tau_y)` applied at the ankle.
pub fn humanoid_torque(leg: &SagittalLeg, hip: &Vector2<f64>, wrench: [f64; 3]) -> Vector3<f64> {
    let [fx, fz, ty] = wrench;
    let moment_about = |p: &Vector2<f64>| ty - p.y * fx + p.x * fz;
    Vector3::new(-ty, -moment_about(&leg.knee), -moment_about(hip)) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn mc() -> RobotParams {
        RobotParams::mini_cheetah()
    }

    #[test]
    fn zero_and_folded_pose() {
        let p = mc();
        let f = fk(&JointVector([0.0, 0.0, 0.0]), LegId::FrontLeft, &p);
        assert_relative_eq!(f, Vector3::new(0.19, 0.049 + 0.072, -0.411), epsilon = 1e-15);
        let f = fk(&JointVector([0.0, 0.0, PI]), LegId::FrontRight, &p);
        assert_relative_eq!(f, Vector3::new(0.19, -0.049 - 0.072, -0.011), epsilon = 1e-12);
    }

    #[test]
    fn straight_leg_ik() {
        let p = mc();
        let q = ik(&Vector3::new(-0.19, 0.049 + 0.072, -0.411), LegId::RearLeft, &p).unwrap();
        for a in q.0 {
            assert!(a.abs() < 1e-6, "{q:?}");
        }
    }

    #[test]
    fn beyond_reach_reports_deficit() {
        let p = mc();
        match ik(&Vector3::new(0.19, 0.121, -0.412), LegId::FrontLeft, &p) {
            Err(KinError::Unreachable { deficit }) => assert_relative_eq!(deficit, 0.001, epsilon = 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn straight_leg_is_singular() {
        let j = jacobian(&JointVector([0.0, 0.0, 0.0]), LegId::FrontLeft, &mc());
        assert!(j.determinant().abs() < 1e-12);
    }

    #[test]
    fn zero_force_zero_torque() {
        let t = joint_torque(&JointVector([0.1, -0.6, 1.2]), LegId::RearRight, &Vector3::zeros(), &mc());
        assert_eq!(t, Vector3::zeros());
    }

    #[test]
    fn impedance_example() {
        let g = ImpedanceGains::default();
        let f = impedance_force(
            &Vector3::new(0.0, 0.0, -0.3),
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, -0.29),
            &Vector3::zeros(),
            &g,
        );
        assert_relative_eq!(f, Vector3::new(0.0, 0.0, 3.5), epsilon = 1e-12);
        let p = mc();
        assert_relative_eq!(default_feedforward(&p, 4).z, 11.4 * 9.81 / 4.0);
        assert_relative_eq!(default_feedforward(&p, 2).z, 11.4 * 9.81 / 2.0);
    }

    #[test]
    fn impedance_at_target_is_feedforward() {
        let p = mc();
        let q = JointVector([0.05, -0.7, 1.3]);
        let pos = fk(&q, LegId::FrontLeft, &p);
        let f_ff = default_feedforward(&p, 4);
        let tau = impedance_torque(
            &q,
            &Vector3::zeros(),
            LegId::FrontLeft,
            &pos,
            &Vector3::zeros(),
            &f_ff,
            &ImpedanceGains::default(),
            &p,
        );
        assert_relative_eq!(tau, joint_torque(&q, LegId::FrontLeft, &f_ff, &p), epsilon = 1e-12);
    }

    #[test]
    fn c_space_examples() {
        let p = mc();
        let stance = Stance::nominal(&p);
        let rot = Rotation3::identity();
        assert!(c_space_contains(&Vector3::new(0.0, 0.0, 0.3), &rot, &stance, &p));
        assert!(!c_space_contains(&Vector3::new(0.0, 0.0, 0.6), &rot, &stance, &p));
        assert!(!c_space_contains(&Vector3::new(0.0, 0.0, 0.06), &rot, &stance, &p));
    }

    #[test]
    fn humanoid_leg_closes() {
        let p = RobotParams::humanoid();
        let hip = Vector2::new(0.1, 0.6);
        let leg = humanoid_ik(&hip, 0.0, &p).unwrap();
        let phi1 = leg.q.0[2];
        let phi2 = -leg.q.0[0];
        let ankle = hip + 0.366 * Vector2::new(phi1.sin(), -phi1.cos()) + 0.340 * Vector2::new(phi2.sin(), -phi2.cos());
        assert!(ankle.norm() < 1e-12);
        assert!(leg.knee.x > hip.x * 0.5, "knee bends forward");
        assert!(humanoid_ik(&Vector2::new(0.0, 0.8), 0.0, &p).is_err());
    }

    fn fd_jacobian(q: &JointVector, leg: LegId, p: &RobotParams) -> Matrix3<f64> {
        let h = 1e-6;
        let mut cols = [Vector3::zeros(); 3];
        for (i, col) in cols.iter_mut().enumerate() {
            let (mut a, mut b) = (*q, *q);
            a.0[i] += h;
            b.0[i] -= h;
            *col = (fk(&a, leg, p) - fk(&b, leg, p)) / (2.0 * h);
        }
        Matrix3::from_columns(&cols)
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(
            q0 in -0.6..0.6f64, q1 in -1.2..1.2f64, q2 in 0.1..3.0f64, leg in 0usize..4
        ) {
            let p = mc();
            let leg = LegId::from_index(leg).unwrap();
            let q = JointVector([q0, q1, q2]);
            let d = jacobian(&q, leg, &p) - fd_jacobian(&q, leg, &p);
            prop_assert!(d.abs().max() < 1e-6);
        }

        #[test]
        fn torque_is_linear(
            q1 in -1.0..1.0f64, q2 in 0.2..2.8f64, k in -5.0..5.0f64,
            fx in -50.0..50.0f64, fz in 0.0..100.0f64
        ) {
            let p = mc();
            let q = JointVector([0.1, q1, q2]);
            let f = Vector3::new(fx, 3.0, fz);
            let a = joint_torque(&q, LegId::RearLeft, &(f * k), &p);
            let b = joint_torque(&q, LegId::RearLeft, &f, &p) * k;
            prop_assert!((a - b).norm() < 1e-9 * (1.0 + b.norm()));
        }

        #[test]
        fn ik_fk_roundtrip(q0 in -0.5..0.5f64, q1 in -1.0..1.0f64, q2 in 0.05..3.0f64, leg in 0usize..4) {
            let p = mc();
            let leg = LegId::from_index(leg).unwrap();
            let q = JointVector([q0, q1, q2]);
            let l = &p.leg_lengths;
            let zs = -l[1] * q1.cos() - l[2] * (q1 + q2).cos();
            prop_assume!(zs < -0.01);
            let foot = fk(&q, leg, &p);
            let back = ik(&foot, leg, &p).unwrap();
            prop_assert!((fk(&back, leg, &p) - foot).norm() < 1e-9);
            for i in 0..3 {
                prop_assert!((back.0[i] - q.0[i]).abs() < 1e-7);
            }
        }
    }
}
