//! Robot parameters and single-rigid-body dynamics.
//!
//! World frame is z-up. The body is a single rigid body with constant,
//! diagonal body-frame inertia; legs are massless.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grf_profile::{GRFProfile, PhaseTimes};

pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobotKind {
    Quadruped,
    Humanoid,
}

/// Physical description of a robot.
///
/// Quadruped `leg_lengths` are `[abduction offset, thigh, shank]` and the joint
/// classes are `[abduction, hip, knee]`. Humanoid `leg_lengths` are
/// `[thigh, shank, toe, heel]` and the joint classes are `[ankle, knee, hip]`.
/// Knee limits are interior knee angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotParams {
    pub name: String,
    pub kind: RobotKind,
    pub mass: f64,
    pub inertia_diag: [f64; 3],
    pub leg_lengths: Vec<f64>,
    /// Hip positions in the body frame, one per leg (FL, FR, RL, RR for quadrupeds).
    pub hip_offsets: Vec<[f64; 3]>,
    pub joint_limits: Vec<[f64; 2]>,
    pub torque_limits: Vec<f64>,
    pub velocity_limits: Vec<f64>,
    pub friction_coeff: f64,
    pub gravity: f64,
}

fn rpm(v: f64) -> f64 {
    v * 2.0 * std::f64::consts::PI / 60.0
}

impl RobotParams {
    pub fn mini_cheetah() -> Self {
        Self {
            name: "mini-cheetah".into(),
            kind: RobotKind::Quadruped,
            mass: 11.4,
            inertia_diag: [0.07, 0.3, 0.34],
            leg_lengths: vec![0.072, 0.211, 0.2],
            hip_offsets: quad_hips(0.19, 0.049),
            joint_limits: quad_joint_limits(),
            torque_limits: vec![24.0, 24.0, 36.0],
            velocity_limits: vec![rpm(300.0), rpm(300.0), rpm(193.0)],
            friction_coeff: 0.7,
            gravity: 9.81,
        }
    }

    pub fn cyberdog() -> Self {
        Self {
            name: "cyberdog".into(),
            kind: RobotKind::Quadruped,
            mass: 14.0,
            inertia_diag: [0.08, 0.4, 0.45],
            leg_lengths: vec![0.107, 0.2, 0.217],
            hip_offsets: quad_hips(0.2375, 0.05),
            joint_limits: quad_joint_limits(),
            torque_limits: vec![24.0, 24.0, 36.0],
            velocity_limits: vec![rpm(300.0), rpm(300.0), rpm(193.0)],
            friction_coeff: 0.7,
            gravity: 9.81,
        }
    }

    pub fn humanoid() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        Self {
            name: "humanoid".into(),
            kind: RobotKind::Humanoid,
            mass: 47.0,
            inertia_diag: [11.6, 9.9, 2.0],
            leg_lengths: vec![0.366, 0.340, 0.180, 0.120],
            hip_offsets: vec![[0.0, 0.0, -0.10]],
            joint_limits: vec![[-60.0 * deg, 60.0 * deg], [10.0 * deg, 170.0 * deg], [-120.0 * deg, 120.0 * deg]],
            torque_limits: vec![216.0, 320.0, 417.0],
            velocity_limits: vec![25.0, 25.0, 25.0],
            friction_coeff: 0.7,
            gravity: 9.81,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "mini-cheetah" | "mini_cheetah" => Some(Self::mini_cheetah()),
            "cyberdog" => Some(Self::cyberdog()),
            "humanoid" => Some(Self::humanoid()),
            _ => None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let p: Self = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_file(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("robot params always serialize")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field, reason: &str| {
            Err(ModelError::InvalidParam {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return bad("mass", "must be positive");
        }
        if self.inertia_diag.iter().any(|&i| !(i > 0.0 && i.is_finite())) {
            return bad("inertia_diag", "entries must be positive");
        }
        let (n_len, n_legs) = match self.kind {
            RobotKind::Quadruped => (3, 4),
            RobotKind::Humanoid => (4, 1),
        };
        if self.leg_lengths.len() != n_len || self.leg_lengths.iter().any(|&l| !(l > 0.0)) {
            return bad("leg_lengths", &format!("expected {n_len} positive lengths"));
        }
        if self.hip_offsets.len() != n_legs {
            return bad("hip_offsets", &format!("expected {n_legs} entries"));
        }
        if self.joint_limits.len() != 3 || self.joint_limits.iter().any(|l| !(l[0] < l[1])) {
            return bad("joint_limits", "expected 3 ordered (min, max) pairs");
        }
        if self.torque_limits.len() != 3 || self.torque_limits.iter().any(|&t| !(t > 0.0)) {
            return bad("torque_limits", "expected 3 positive limits");
        }
        if self.velocity_limits.len() != 3 || self.velocity_limits.iter().any(|&v| !(v > 0.0)) {
            return bad("velocity_limits", "expected 3 positive limits");
        }
        if !(self.friction_coeff > 0.0) {
            return bad("friction_coeff", "must be positive");
        }
        if !(self.gravity > 0.0) {
            return bad("gravity", "must be positive");
        }
        Ok(())
    }

    pub fn inertia(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.inertia_diag))
    }

    /// Moment of inertia about a horizontal axis perpendicular to the jump direction.
    pub fn pitch_inertia(&self, heading: f64) -> f64 {
        let (s, c) = heading.sin_cos();
        self.inertia_diag[0] * s * s + self.inertia_diag[1] * c * c
    }

    /// Knee interior-angle limits (min, max), radians.
    pub fn knee_limits(&self) -> [f64; 2] {
        match self.kind {
            RobotKind::Quadruped => self.joint_limits[2],
            RobotKind::Humanoid => self.joint_limits[1],
        }
    }
}

fn quad_hips(x: f64, y: f64) -> Vec<[f64; 3]> {
    vec![[x, y, 0.0], [x, -y, 0.0], [-x, y, 0.0], [-x, -y, 0.0]]
}

fn quad_joint_limits() -> Vec<[f64; 2]> {
    let deg = std::f64::consts::PI / 180.0;
    vec![
        [-std::f64::consts::PI, std::f64::consts::PI],
        [-std::f64::consts::PI, std::f64::consts::PI],
        [10.0 * deg, 170.0 * deg],
    ]
}

/// Full 3-D rigid-body state. Euler angles are roll, pitch, yaw (Z-Y-X order),
/// `omega` is the body-frame angular rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub euler: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl ReducedState {
    pub fn at_rest(p: Vector3<f64>) -> Self {
        Self {
            p,
            v: Vector3::zeros(),
            euler: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.euler.x, self.euler.y, self.euler.z)
    }
}

/// A point force on the body: lever arm from the CoM and force, both in world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub r: Vector3<f64>,
    pub f: Vector3<f64>,
}

/// Linear (world) and angular (body) acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acceleration {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

pub fn srb_acceleration(state: &ReducedState, contacts: &[Contact], params: &RobotParams) -> Acceleration {
    let total_f: Vector3<f64> = contacts.iter().map(|c| c.f).sum();
    let torque_w: Vector3<f64> = contacts.iter().map(|c| c.r.cross(&c.f)).sum();
    let torque_b = state.rotation().inverse() * torque_w;
    let inertia = params.inertia();
    let gyro = state.omega.cross(&(inertia * state.omega));
    let angular = Vector3::new(
        (torque_b.x - gyro.x) / params.inertia_diag[0],
        (torque_b.y - gyro.y) / params.inertia_diag[1],
        (torque_b.z - gyro.z) / params.inertia_diag[2],
    );
    Acceleration {
        linear: total_f / params.mass - Vector3::new(0.0, 0.0, params.gravity),
        angular,
    }
}

/// Semi-explicit Euler: velocities first, then positions with the new velocities.
pub fn integrate_step(state: &ReducedState, acc: &Acceleration, dt: f64) -> ReducedState {
    let v = state.v + acc.linear * dt;
    let omega = state.omega + acc.angular * dt;
    let p = state.p + v * dt;
    let delta = Rotation3::from_scaled_axis(omega * dt);
    let (r, pch, y) = (state.rotation() * delta).euler_angles();
    ReducedState {
        p,
        v,
        euler: Vector3::new(r, pch, y),
        omega,
    }
}

/// In-plane state: `x` along the jump direction, `z` up, `theta` pitch about the
/// plane normal (positive tips the leading edge down).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanarState {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
    pub vx: f64,
    pub vz: f64,
    pub omega: f64,
}

impl PlanarState {
    pub fn at_rest(x: f64, z: f64, theta: f64) -> Self {
        Self {
            x,
            z,
            theta,
            ..Self::default()
        }
    }
}

/// How the in-plane force channels act on the body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlanarContact {
    /// Quadruped: channels `[u_J1, u_J2, u_z1, u_z2]` applied at ground points
    /// `s1`, `s2` along the jump direction.
    Edges { s1: f64, s2: f64 },
    /// Humanoid: channels `[f_x, f_z, tau_y]` applied at a single foot at the origin.
    Foot,
}

impl PlanarContact {
    pub fn channels(&self) -> usize {
        match self {
            Self::Edges { .. } => 4,
            Self::Foot => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarBody {
    pub mass: f64,
    pub inertia: f64,
    pub gravity: f64,
    pub contact: PlanarContact,
}

impl PlanarBody {
    pub fn new(params: &RobotParams, heading: f64, contact: PlanarContact) -> Self {
        Self {
            mass: params.mass,
            inertia: params.pitch_inertia(heading),
            gravity: params.gravity,
            contact,
        }
    }

    /// Accelerations `(ax, az, alpha)` for channel forces `u`.
    pub fn accel(&self, s: &PlanarState, u: &[f64]) -> (f64, f64, f64) {
        match self.contact {
            PlanarContact::Edges { s1, s2 } => {
                let fx = u[0] + u[1];
                let fz = u[2] + u[3];
                let tau = -s.z * fx - (s1 - s.x) * u[2] - (s2 - s.x) * u[3];
                (fx / self.mass, fz / self.mass - self.gravity, tau / self.inertia)
            }
            PlanarContact::Foot => {
                let tau = -s.z * u[0] + s.x * u[1] + u[2];
                (u[0] / self.mass, u[1] / self.mass - self.gravity, tau / self.inertia)
            }
        }
    }

    pub fn step(&self, s: &PlanarState, u: &[f64], h: f64) -> PlanarState {
        let (ax, az, al) = self.accel(s, u);
        let vx = s.vx + ax * h;
        let vz = s.vz + az * h;
        let omega = s.omega + al * h;
        PlanarState {
            x: s.x + vx * h,
            z: s.z + vz * h,
            theta: s.theta + omega * h,
            vx,
            vz,
            omega,
        }
    }

    /// Closed-form flight: no contact forces, constant pitch rate.
    pub fn ballistic(&self, s: &PlanarState, dt: f64) -> PlanarState {
        ballistic(s, dt, self.gravity)
    }
}

pub fn ballistic(s: &PlanarState, dt: f64, gravity: f64) -> PlanarState {
    PlanarState {
        x: s.x + s.vx * dt,
        z: s.z + s.vz * dt - 0.5 * gravity * dt * dt,
        theta: s.theta + s.omega * dt,
        vx: s.vx,
        vz: s.vz - gravity * dt,
        omega: s.omega,
    }
}

/// Rotation of the body for an in-plane pitch `theta` about the horizontal
/// normal of a plane with heading `heading`.
pub fn plane_rotation(heading: f64, theta: f64) -> Rotation3<f64> {
    let (s, c) = heading.sin_cos();
    let axis = Unit::new_normalize(Vector3::new(-s, c, 0.0));
    Rotation3::from_axis_angle(&axis, theta)
}

/// One integration step record: state at `t` and the channel forces applied
/// over the step that starts there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarSample {
    pub t: f64,
    pub state: PlanarState,
    pub u: [f64; 4],
    pub phase: u8,
}

/// Stance trajectory with the states at the profile's knot times.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarTrajectory {
    pub samples: Vec<PlanarSample>,
    pub at_half: PlanarState,
    pub at_t1: PlanarState,
    pub at_t2: PlanarState,
}

impl PlanarTrajectory {
    pub fn liftoff(&self) -> &PlanarState {
        &self.at_t2
    }
}

/// Integrates the stance phases of `profile` with semi-explicit Euler.
///
/// Each of `[0, t1/2]`, `[t1/2, t1]` and `[t1, t2]` is split into equal steps
/// no longer than `dt`, so the knot states are sampled exactly. Forces are
/// evaluated at the start of each step.
pub fn planar_rollout(
    profile: &GRFProfile,
    times: &PhaseTimes,
    body: &PlanarBody,
    init: &PlanarState,
    dt: f64,
) -> PlanarTrajectory {
    let half = 0.5 * times.t1;
    let mut segments = vec![(0.0, half, 1u8), (half, times.t1, 1u8)];
    if times.t2 > times.t1 {
        segments.push((times.t1, times.t2, 2));
    }
    let steps: usize = segments.iter().map(|&(a, b, _)| steps_for(b - a, dt)).sum();
    let mut samples = Vec::with_capacity(steps + 1);
    let mut s = *init;
    let mut knots = [*init; 3];
    let mut last_u = [0.0; 4];
    let mut last_phase = 1;
    for (k, &(a, b, phase)) in segments.iter().enumerate() {
        let n = steps_for(b - a, dt);
        let h = (b - a) / n as f64;
        for i in 0..n {
            let t = a + h * i as f64;
            let u = profile.phase_value(phase, t);
            samples.push(PlanarSample { t, state: s, u, phase });
            s = body.step(&s, &u, h);
        }
        knots[k] = s;
        last_u = profile.phase_value(phase, b);
        last_phase = phase;
    }
    samples.push(PlanarSample {
        t: times.t2,
        state: s,
        u: last_u,
        phase: last_phase,
    });
    PlanarTrajectory {
        samples,
        at_half: knots[0],
        at_t1: knots[1],
        at_t2: if times.t2 > times.t1 { knots[2] } else { knots[1] },
    }
}

fn steps_for(len: f64, dt: f64) -> usize {
    ((len / dt) - 1e-9).ceil().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn table_values() {
        let mc = RobotParams::mini_cheetah();
        assert_eq!(mc.mass, 11.4);
        assert_eq!(mc.inertia_diag, [0.07, 0.3, 0.34]);
        assert_eq!(mc.leg_lengths, vec![0.072, 0.211, 0.2]);
        let cd = RobotParams::cyberdog();
        assert_eq!(cd.mass, 14.0);
        assert_eq!(cd.inertia_diag, [0.08, 0.4, 0.45]);
        assert_eq!(cd.leg_lengths, vec![0.107, 0.2, 0.217]);
        let h = RobotParams::humanoid();
        assert_eq!(h.mass, 47.0);
        assert_eq!(h.inertia_diag, [11.6, 9.9, 2.0]);
        assert_eq!(h.leg_lengths[..2], [0.366, 0.340]);
        assert_eq!(h.leg_lengths[2..], [0.180, 0.120]);
        assert_eq!(h.torque_limits, vec![216.0, 320.0, 417.0]);
        assert_eq!(mc.torque_limits[1..], [24.0, 36.0]);
        assert_relative_eq!(mc.velocity_limits[1], 31.415926535897932, epsilon = 1e-12);
        for p in [mc, cd, h] {
            p.validate().unwrap();
        }
    }

    #[test]
    fn standing_balance() {
        let p = RobotParams::mini_cheetah();
        let s = ReducedState::at_rest(Vector3::new(0.0, 0.0, 0.3));
        let per_foot = p.mass * p.gravity / 4.0;
        let contacts: Vec<Contact> = p
            .hip_offsets
            .iter()
            .map(|h| Contact {
                r: Vector3::new(h[0], h[1], -0.3),
                f: Vector3::new(0.0, 0.0, per_foot),
            })
            .collect();
        let a = srb_acceleration(&s, &contacts, &p);
        assert!(a.linear.norm() < 1e-12);
        assert!(a.angular.norm() < 1e-12);
    }

    #[test]
    fn free_fall_and_single_force() {
        let p = RobotParams::mini_cheetah();
        let s = ReducedState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        let a = srb_acceleration(&s, &[], &p);
        assert_eq!(a.linear, Vector3::new(0.0, 0.0, -9.81));
        let c = Contact {
            r: Vector3::new(0.2, 0.0, -0.3),
            f: Vector3::new(0.0, 0.0, 50.0),
        };
        let a = srb_acceleration(&s, &[c], &p);
        assert_relative_eq!(a.linear.z, 50.0 / 11.4 - 9.81, epsilon = 1e-12);
        assert_relative_eq!(a.angular.y, -10.0 / 0.3, epsilon = 1e-12);
        assert_eq!(a.angular.x, 0.0);
        assert_eq!(a.angular.z, 0.0);
    }

    #[test]
    fn euler_step_order() {
        let p = RobotParams::mini_cheetah();
        let s = ReducedState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        let a = srb_acceleration(&s, &[], &p);
        let n = integrate_step(&s, &a, 0.01);
        assert_relative_eq!(n.v.z, -0.0981, epsilon = 1e-15);
        assert_relative_eq!(n.p.z, 1.0 - 0.0981 * 0.01, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = RobotParams::mini_cheetah();
        p.mass = 0.0;
        assert!(p.validate().is_err());
        let mut p = RobotParams::mini_cheetah();
        p.inertia_diag[1] = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let p = RobotParams::humanoid();
        let text = p.to_toml_string();
        assert!(text.contains("inertia_diag"));
        assert_eq!(RobotParams::from_toml_str(&text).unwrap(), p);
        assert!(RobotParams::from_toml_str("mass = 1.0").is_err());
    }

    #[test]
    fn planar_matches_rigid_body_on_forward_plane() {
        let p = RobotParams::mini_cheetah();
        let body = PlanarBody::new(&p, 0.0, PlanarContact::Edges { s1: 0.19, s2: -0.19 });
        let ps = PlanarState::at_rest(0.02, 0.25, 0.0);
        let u = [10.0, 10.0, 60.0, 45.0];
        let (ax, az, al) = body.accel(&ps, &u);
        let rs = ReducedState::at_rest(Vector3::new(0.02, 0.0, 0.25));
        let contacts = [
            Contact {
                r: Vector3::new(0.19 - 0.02, 0.0, -0.25),
                f: Vector3::new(u[0], 0.0, u[2]),
            },
            Contact {
                r: Vector3::new(-0.19 - 0.02, 0.0, -0.25),
                f: Vector3::new(u[1], 0.0, u[3]),
            },
        ];
        let a = srb_acceleration(&rs, &contacts, &p);
        assert_relative_eq!(a.linear.x, ax, epsilon = 1e-12);
        assert_relative_eq!(a.linear.z, az, epsilon = 1e-12);
        assert_relative_eq!(a.angular.y, al, epsilon = 1e-12);
    }
}
