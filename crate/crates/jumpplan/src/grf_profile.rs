//! Piecewise-polynomial ground-reaction profiles and the map between
//! profile coefficients and CoM waypoints.
//!
//! Each channel is `a1*t + a0` on `[0, t1]`, `gamma*(b2*t^2 + b1*t + b0)` on
//! `(t1, t2]` and zero in flight. Quadruped channels are
//! `[u_J1, u_J2, u_z1, u_z2]`; humanoid channels are `[f_x, f_z, tau_y]`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use thiserror::Error;

use crate::robot_model::{ballistic, planar_rollout, PlanarBody, PlanarState, PlanarTrajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("invalid phase times: {0}")]
    InvalidTimes(String),
    #[error("time {t} is outside [0, {t3}]")]
    OutOfRange { t: f64, t3: f64 },
    #[error("waypoint map is singular for the {0} channel")]
    Singular(&'static str),
    #[error("rotational waypoint solve did not converge (residual {residual:.3e} rad)")]
    NoConvergence { residual: f64 },
    #[error("expected {expected} optimization variables, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTimes {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl PhaseTimes {
    pub fn new(t1: f64, t2: f64, t3: f64) -> Result<Self, ProfileError> {
        let t = Self { t1, t2, t3 };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let ok = self.t1 > 0.0 && self.t2 >= self.t1 && self.t3 > self.t2 && self.t3.is_finite();
        if ok {
            Ok(())
        } else {
            Err(ProfileError::InvalidTimes(format!(
                "need 0 < t1 <= t2 < t3, got ({}, {}, {})",
                self.t1, self.t2, self.t3
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum JumpMode {
    /// Quadruped, single push-off phase.
    Omni,
    /// Quadruped, four-leg then two-leg push-off.
    Agile,
    /// Humanoid, single sagittal push-off.
    Humanoid,
}

impl JumpMode {
    pub fn dim(self) -> usize {
        match self {
            Self::Omni => 5,
            Self::Agile => 12,
            Self::Humanoid => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Omni => "omni",
            Self::Agile => "agile",
            Self::Humanoid => "humanoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "omni" => Some(Self::Omni),
            "agile" => Some(Self::Agile),
            "humanoid" => Some(Self::Humanoid),
            _ => None,
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Self::Humanoid => 3,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GRFProfile {
    pub channels: usize,
    pub gamma: bool,
    pub a0: [f64; 4],
    pub a1: [f64; 4],
    pub b0: [f64; 4],
    pub b1: [f64; 4],
    pub b2: [f64; 4],
}

impl GRFProfile {
    pub fn zero(channels: usize, gamma: bool) -> Self {
        Self {
            channels,
            gamma,
            ..Self::default()
        }
    }

    /// Channel values of the polynomial for `phase` (1 or 2) at `t`, ignoring phase bounds.
    pub fn phase_value(&self, phase: u8, t: f64) -> [f64; 4] {
        let mut u = [0.0; 4];
        for (i, v) in u.iter_mut().enumerate().take(self.channels) {
            *v = match phase {
                1 => self.a1[i] * t + self.a0[i],
                2 if self.gamma => self.b2[i] * t * t + self.b1[i] * t + self.b0[i],
                _ => 0.0,
            };
        }
        u
    }

    /// Channel values at `t`: phase one on `[0, t1]`, phase two on `(t1, t2]`, zero after.
    pub fn eval_u(&self, times: &PhaseTimes, t: f64) -> Result<[f64; 4], ProfileError> {
        if !(0.0..=times.t3).contains(&t) {
            return Err(ProfileError::OutOfRange { t, t3: times.t3 });
        }
        Ok(if t <= times.t1 {
            self.phase_value(1, t)
        } else if t <= times.t2 {
            self.phase_value(2, t)
        } else {
            [0.0; 4]
        })
    }

    /// Value just after `t1`.
    pub fn after_t1(&self, times: &PhaseTimes) -> [f64; 4] {
        if times.t2 > times.t1 {
            self.phase_value(2, times.t1)
        } else {
            [0.0; 4]
        }
    }

    pub fn coefficients(&self) -> Vec<f64> {
        let n = self.channels;
        [&self.a0, &self.a1, &self.b0, &self.b1, &self.b2]
            .iter()
            .flat_map(|c| c[..n].iter().copied())
            .collect()
    }

    pub fn to_record(&self, times: &PhaseTimes) -> String {
        let mut s = String::from("# ground reaction profile\n");
        let _ = writeln!(s, "channels {}", self.channels);
        let _ = writeln!(s, "gamma {}", u8::from(self.gamma));
        let _ = writeln!(s, "times {:+.17e} {:+.17e} {:+.17e}", times.t1, times.t2, times.t3);
        for (name, c) in [("a0", &self.a0), ("a1", &self.a1), ("b0", &self.b0), ("b1", &self.b1), ("b2", &self.b2)] {
            let _ = write!(s, "{name}");
            for v in &c[..self.channels] {
                let _ = write!(s, " {v:+.17e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_record(text: &str) -> Result<(Self, PhaseTimes), ProfileError> {
        let mut p = Self::default();
        let mut times = None;
        let mut seen = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| ProfileError::Parse { line, msg };
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let mut parts = raw.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let nums: Vec<f64> = parts
                .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad number `{t}`: {e}"))))
                .collect::<Result<_, _>>()?;
            match key {
                "channels" => {
                    p.channels = match nums.as_slice() {
                        [n] if *n == 3.0 || *n == 4.0 => *n as usize,
                        _ => return Err(err("channels must be 3 or 4".into())),
                    }
                }
                "gamma" => p.gamma = nums.first().copied().unwrap_or(0.0) != 0.0,
                "times" => match nums.as_slice() {
                    [a, b, c] => times = Some(PhaseTimes::new(*a, *b, *c).map_err(|e| err(e.to_string()))?),
                    _ => return Err(err("times needs 3 values".into())),
                },
                "a0" | "a1" | "b0" | "b1" | "b2" => {
                    if nums.len() != p.channels {
                        return Err(err(format!("expected {} values, got {}", p.channels, nums.len())));
                    }
                    let dst = match key {
                        "a0" => &mut p.a0,
                        "a1" => &mut p.a1,
                        "b0" => &mut p.b0,
                        "b1" => &mut p.b1,
                        _ => &mut p.b2,
                    };
                    dst[..nums.len()].copy_from_slice(&nums);
                    seen += 1;
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        let times = times.ok_or(ProfileError::Parse {
            line: 0,
            msg: "missing times".into(),
        })?;
        if seen != 5 {
            return Err(ProfileError::Parse {
                line: 0,
                msg: "missing coefficient rows".into(),
            });
        }
        Ok((p, times))
    }
}

/// In-plane CoM pose `[x, z, theta]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanarPose {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
}

impl PlanarPose {
    pub fn new(x: f64, z: f64, theta: f64) -> Self {
        Self { x, z, theta }
    }

    pub fn of(s: &PlanarState) -> Self {
        Self::new(s.x, s.z, s.theta)
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.z, self.theta)
    }

    fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Decision vector of the optimizer: waypoint poses and phase times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptVector {
    Omni {
        half: PlanarPose,
        t1: f64,
        t3: f64,
    },
    Agile {
        half: PlanarPose,
        lift: PlanarPose,
        push: PlanarPose,
        t1: f64,
        t2: f64,
        t3: f64,
    },
    Humanoid {
        start: PlanarPose,
        half: PlanarPose,
        t1: f64,
        t3: f64,
    },
}

impl OptVector {
    pub fn mode(&self) -> JumpMode {
        match self {
            Self::Omni { .. } => JumpMode::Omni,
            Self::Agile { .. } => JumpMode::Agile,
            Self::Humanoid { .. } => JumpMode::Humanoid,
        }
    }

    pub fn from_slice(mode: JumpMode, v: &[f64]) -> Result<Self, ProfileError> {
        if v.len() != mode.dim() {
            return Err(ProfileError::BadLength {
                expected: mode.dim(),
                got: v.len(),
            });
        }
        let p = PlanarPose::from_slice;
        Ok(match mode {
            JumpMode::Omni => Self::Omni {
                half: p(&v[0..3]),
                t1: v[3],
                t3: v[4],
            },
            JumpMode::Agile => Self::Agile {
                half: p(&v[0..3]),
                lift: p(&v[3..6]),
                push: p(&v[6..9]),
                t1: v[9],
                t2: v[10],
                t3: v[11],
            },
            JumpMode::Humanoid => Self::Humanoid {
                start: p(&v[0..3]),
                half: p(&v[3..6]),
                t1: v[6],
                t3: v[7],
            },
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let pv = |p: &PlanarPose| [p.x, p.z, p.theta];
        match self {
            Self::Omni { half, t1, t3 } => [&pv(half)[..], &[*t1, *t3]].concat(),
            Self::Agile {
                half,
                lift,
                push,
                t1,
                t2,
                t3,
            } => [&pv(half)[..], &pv(lift), &pv(push), &[*t1, *t2, *t3]].concat(),
            Self::Humanoid { start, half, t1, t3 } => [&pv(start)[..], &pv(half), &[*t1, *t3]].concat(),
        }
    }

    pub fn times(&self) -> PhaseTimes {
        match *self {
            Self::Omni { t1, t3, .. } | Self::Humanoid { t1, t3, .. } => PhaseTimes { t1, t2: t1, t3 },
            Self::Agile { t1, t2, t3, .. } => PhaseTimes { t1, t2, t3 },
        }
    }

    pub fn half(&self) -> PlanarPose {
        match *self {
            Self::Omni { half, .. } | Self::Agile { half, .. } | Self::Humanoid { half, .. } => half,
        }
    }
}

/// Fixed context of the waypoint map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseModel {
    pub body: PlanarBody,
    /// Initial state for quadruped modes; the humanoid start pose comes from the decision vector.
    pub start: PlanarState,
    pub dt: f64,
}

impl InverseModel {
    pub fn initial_state(&self, opt: &OptVector) -> PlanarState {
        match opt {
            OptVector::Humanoid { start, .. } => PlanarState::at_rest(start.x, start.z, start.theta),
            _ => self.start,
        }
    }

    pub fn rollout(&self, profile: &GRFProfile, times: &PhaseTimes, init: &PlanarState) -> PlanarTrajectory {
        planar_rollout(profile, times, &self.body, init, self.dt)
    }
}

/// Ballistic CoM state after `dt` of flight.
pub fn ballistic_target(s: &PlanarState, dt: f64, gravity: f64) -> PlanarState {
    ballistic(s, dt, gravity)
}

fn landing(model: &InverseModel, traj: &PlanarTrajectory, times: &PhaseTimes) -> PlanarState {
    ballistic(traj.liftoff(), times.t3 - times.t2, model.body.gravity)
}

/// Forward map: rolls the profile out and reads the decision vector and the
/// landing pose at `t3`.
pub fn profile_to_waypoints(
    profile: &GRFProfile,
    times: &PhaseTimes,
    mode: JumpMode,
    start: &PlanarState,
    model: &InverseModel,
) -> (OptVector, PlanarPose) {
    let traj = model.rollout(profile, times, start);
    let land = PlanarPose::of(&landing(model, &traj, times));
    let half = PlanarPose::of(&traj.at_half);
    let opt = match mode {
        JumpMode::Omni => OptVector::Omni {
            half,
            t1: times.t1,
            t3: times.t3,
        },
        JumpMode::Agile => OptVector::Agile {
            half,
            lift: PlanarPose::of(&traj.at_t1),
            push: PlanarPose::of(&traj.at_t2),
            t1: times.t1,
            t2: times.t2,
            t3: times.t3,
        },
        JumpMode::Humanoid => OptVector::Humanoid {
            start: PlanarPose::new(start.x, start.z, start.theta),
            half,
            t1: times.t1,
            t3: times.t3,
        },
    };
    (opt, land)
}

/// Solves `A w = b` for an affine map probed at the origin and unit vectors.
/// Square systems are solved exactly; wide ones return the minimum-norm
/// solution together with a null-space direction.
fn solve_affine(
    n: usize,
    eval: impl Fn(&[f64]) -> Vec<f64>,
    target: &[f64],
    channel: &'static str,
) -> Result<(DVector<f64>, Option<DVector<f64>>), ProfileError> {
    let base = eval(&vec![0.0; n]);
    let m = base.len();
    let mut a = DMatrix::zeros(m, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = eval(&e);
        for i in 0..m {
            a[(i, j)] = col[i] - base[i];
        }
    }
    let b = DVector::from_iterator(m, target.iter().zip(&base).map(|(t, b)| t - b));
    if m == n {
        let w = a.clone().lu().solve(&b).ok_or(ProfileError::Singular(channel))?;
        if !w.iter().all(|v| v.is_finite()) {
            return Err(ProfileError::Singular(channel));
        }
        return Ok((w, None));
    }
    if (m, n) != (2, 3) {
        return Err(ProfileError::Singular(channel));
    }
    let aat = &a * a.transpose();
    let y = aat.lu().solve(&b).ok_or(ProfileError::Singular(channel))?;
    let w = a.transpose() * y;
    let r0 = Vector3::new(a[(0, 0)], a[(0, 1)], a[(0, 2)]);
    let r1 = Vector3::new(a[(1, 0)], a[(1, 1)], a[(1, 2)]);
    let c = r0.cross(&r1);
    if c.norm() == 0.0 {
        return Err(ProfileError::Singular(channel));
    }
    let null_dir = DVector::from_column_slice(c.normalize().as_slice());
    Ok((w, Some(null_dir)))
}

const NEWTON_MAX_ITERS: usize = 20;
const NEWTON_TOL: f64 = 1e-11;

/// Damped Newton on a two-dimensional residual with a central-difference Jacobian.
fn newton2(f: impl Fn(Vector2<f64>) -> Vector2<f64>, x0: Vector2<f64>, scale: f64) -> Result<Vector2<f64>, ProfileError> {
    let mut x = x0;
    let mut r = f(x);
    for _ in 0..NEWTON_MAX_ITERS {
        if r.norm() < NEWTON_TOL {
            return Ok(x);
        }
        let h = scale * 1e-3;
        let mut jac = Matrix2::zeros();
        for k in 0..2 {
            let mut e = Vector2::zeros();
            e[k] = h;
            let d = (f(x + e) - f(x - e)) / (2.0 * h);
            jac.set_column(k, &d);
        }
        let step = jac.lu().solve(&(-r)).ok_or(ProfileError::NoConvergence { residual: r.norm() })?;
        let mut lambda = 1.0;
        loop {
            let cand = x + step * lambda;
            let rc = f(cand);
            if rc.norm() < r.norm() || lambda < 1e-4 {
                x = cand;
                r = rc;
                break;
            }
            lambda *= 0.5;
        }
    }
    if r.norm() < NEWTON_TOL {
        Ok(x)
    } else {
        Err(ProfileError::NoConvergence { residual: r.norm() })
    }
}

/// Phase-one channels from tangential, vertical and differential components,
/// each linear in `t / t1` (`w = [j0, j1, z0, z1, d0, d1]`).
fn phase_one(mode: JumpMode, w: &[f64; 6], t1: f64, p: &mut GRFProfile) {
    let lin = |c0: f64, c1: f64| (c0, c1 / t1);
    let (j, z, d) = (lin(w[0], w[1]), lin(w[2], w[3]), lin(w[4], w[5]));
    let (a0, a1) = match mode {
        JumpMode::Humanoid => ([j.0, z.0, d.0, 0.0], [j.1, z.1, d.1, 0.0]),
        _ => (
            [0.5 * j.0, 0.5 * j.0, 0.5 * (z.0 + d.0), 0.5 * (z.0 - d.0)],
            [0.5 * j.1, 0.5 * j.1, 0.5 * (z.1 + d.1), 0.5 * (z.1 - d.1)],
        ),
    };
    p.a0 = a0;
    p.a1 = a1;
}

/// Phase-two channels of the trailing pair, quadratic in `(t - t1) / (t2 - t1)`.
fn phase_two(jq: &[f64], zq: &[f64], times: &PhaseTimes, p: &mut GRFProfile) {
    let h = times.t2 - times.t1;
    let t1 = times.t1;
    let abs = |q: &[f64]| {
        (
            q[0] - q[1] * t1 / h + q[2] * t1 * t1 / (h * h),
            q[1] / h - 2.0 * q[2] * t1 / (h * h),
            q[2] / (h * h),
        )
    };
    let (j0, j1, j2) = abs(jq);
    let (z0, z1, z2) = abs(zq);
    p.b0 = [0.0, j0, 0.0, z0];
    p.b1 = [0.0, j1, 0.0, z1];
    p.b2 = [0.0, j2, 0.0, z2];
}

/// Inverse map: the profile whose rollout passes through the waypoints of
/// `opt` and reaches `land` at `t3`.
///
/// Translational channels are linear in their coefficients and are solved
/// directly; the pitch waypoints are then matched by damped Newton.
pub fn waypoints_to_profile(
    opt: &OptVector,
    land: &PlanarPose,
    model: &InverseModel,
) -> Result<GRFProfile, ProfileError> {
    let times = opt.times();
    times.validate()?;
    let mode = opt.mode();
    let init = model.initial_state(opt);
    let channels = model.body.contact.channels();
    let gamma = mode == JumpMode::Agile;
    let g = model.body.gravity;
    let scale = model.body.mass * g;

    // Phase one: observed at t1/2 and at t1 (agile) or at landing.
    let p1_times = PhaseTimes {
        t2: times.t1,
        ..times
    };
    let (target_a, target_b) = match opt {
        OptVector::Agile { half, lift, .. } => (*half, *lift),
        _ => (opt.half(), *land),
    };
    let observe = |w: &[f64; 6]| -> (PlanarState, PlanarState) {
        let mut p = GRFProfile::zero(channels, false);
        phase_one(mode, w, times.t1, &mut p);
        let traj = model.rollout(&p, &p1_times, &init);
        let b = if gamma {
            traj.at_t1
        } else {
            ballistic(&traj.at_t1, times.t3 - times.t1, g)
        };
        (traj.at_half, b)
    };
    let embed = |k: usize, v: &[f64]| {
        let mut w = [0.0; 6];
        w[k] = v[0] * scale;
        w[k + 1] = v[1] * scale;
        w
    };
    let (jw, _) = solve_affine(
        2,
        |v| {
            let (a, b) = observe(&embed(0, v));
            vec![a.x, b.x]
        },
        &[target_a.x, target_b.x],
        "tangential",
    )?;
    let (zw, _) = solve_affine(
        2,
        |v| {
            let (a, b) = observe(&embed(2, v));
            vec![a.z, b.z]
        },
        &[target_a.z, target_b.z],
        "vertical",
    )?;
    let with_d = |d: Vector2<f64>| [jw[0] * scale, jw[1] * scale, zw[0] * scale, zw[1] * scale, d.x, d.y];
    let d = newton2(
        |d| {
            let (a, b) = observe(&with_d(d));
            Vector2::new(a.theta - target_a.theta, b.theta - target_b.theta)
        },
        Vector2::zeros(),
        scale,
    )?;
    let mut profile = GRFProfile::zero(channels, gamma);
    phase_one(mode, &with_d(d), times.t1, &mut profile);

    if let OptVector::Agile { push, .. } = opt {
        let push = *push;
        let base = profile;
        let observe2 = |jq: &[f64], zq: &[f64]| -> (PlanarState, PlanarState) {
            let mut p = base;
            phase_two(jq, zq, &times, &mut p);
            let traj = model.rollout(&p, &times, &init);
            (traj.at_t2, landing(model, &traj, &times))
        };
        let zero = [0.0; 3];
        let scaled = |v: &[f64]| v.iter().map(|x| x * scale).collect::<Vec<_>>();
        let (jp, jn) = solve_affine(
            3,
            |v| {
                let (a, b) = observe2(&scaled(v), &zero);
                vec![a.x, b.x]
            },
            &[push.x, land.x],
            "tangential",
        )?;
        let (zp, zn) = solve_affine(
            3,
            |v| {
                let (a, b) = observe2(&zero, &scaled(v));
                vec![a.z, b.z]
            },
            &[push.z, land.z],
            "vertical",
        )?;
        let (jn, zn) = (jn.expect("wide system"), zn.expect("wide system"));
        let coeffs = |ab: Vector2<f64>| {
            let j: Vec<f64> = (0..3).map(|i| (jp[i] + ab.x * jn[i]) * scale).collect();
            let z: Vec<f64> = (0..3).map(|i| (zp[i] + ab.y * zn[i]) * scale).collect();
            (j, z)
        };
        let ab = newton2(
            |ab| {
                let (j, z) = coeffs(ab);
                let (a, b) = observe2(&j, &z);
                Vector2::new(a.theta - push.theta, b.theta - land.theta)
            },
            Vector2::zeros(),
            1.0,
        )?;
        let (j, z) = coeffs(ab);
        phase_two(&j, &z, &times, &mut profile);
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot_model::{PlanarContact, RobotParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn quad_model() -> InverseModel {
        let p = RobotParams::mini_cheetah();
        InverseModel {
            body: PlanarBody::new(&p, 0.0, PlanarContact::Edges { s1: 0.19, s2: -0.19 }),
            start: PlanarState::at_rest(0.0, 0.2, 0.0),
            dt: 1e-3,
        }
    }

    fn omni_profile(j: [f64; 2], z1: [f64; 2], z2: [f64; 2]) -> GRFProfile {
        let mut p = GRFProfile::zero(4, false);
        p.a0 = [j[0] / 2.0, j[0] / 2.0, z1[0], z2[0]];
        p.a1 = [j[1] / 2.0, j[1] / 2.0, z1[1], z2[1]];
        p
    }

    #[test]
    fn phase_boundaries() {
        let mut p = GRFProfile::zero(4, true);
        p.a0 = [1.0; 4];
        p.a1 = [2.0; 4];
        p.b0 = [3.0; 4];
        p.b1 = [0.5; 4];
        p.b2 = [-1.0; 4];
        let t = PhaseTimes::new(0.2, 0.3, 0.6).unwrap();
        assert_eq!(p.eval_u(&t, 0.2).unwrap()[0], 2.0 * 0.2 + 1.0);
        assert_eq!(p.after_t1(&t)[0], -1.0 * 0.04 + 0.5 * 0.2 + 3.0);
        assert_eq!(p.eval_u(&t, 0.45).unwrap(), [0.0; 4]);
        assert!(p.eval_u(&t, 0.61).is_err());
        let mut q = p;
        q.gamma = false;
        let t0 = PhaseTimes::new(0.2, 0.2, 0.6).unwrap();
        assert_eq!(q.eval_u(&t0, 0.25).unwrap(), [0.0; 4]);
    }

    #[test]
    fn ballistic_example() {
        let s = PlanarState {
            vx: 1.0,
            vz: 2.0,
            ..PlanarState::default()
        };
        let b = ballistic_target(&s, 0.3, 9.81);
        assert_relative_eq!(b.x, 0.3, epsilon = 1e-12);
        assert_relative_eq!(b.z, 0.15855, epsilon = 1e-12);
        let r = ballistic_target(&PlanarState::at_rest(0.1, 0.4, 0.2), 0.0, 9.81);
        assert_eq!(PlanarPose::of(&r), PlanarPose::new(0.1, 0.4, 0.2));
    }

    #[test]
    fn omni_roundtrip() {
        let m = quad_model();
        let prof = omni_profile([60.0, 140.0], [70.0, 160.0], [60.0, 170.0]);
        let times = PhaseTimes::new(0.22, 0.22, 0.6).unwrap();
        let (opt, land) = profile_to_waypoints(&prof, &times, JumpMode::Omni, &m.start, &m);
        let back = waypoints_to_profile(&opt, &land, &m).unwrap();
        for (a, b) in prof.coefficients().iter().zip(back.coefficients()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn agile_roundtrip_reproduces_waypoints() {
        let m = quad_model();
        let mut prof = omni_profile([40.0, 100.0], [60.0, 80.0], [60.0, 90.0]);
        prof.gamma = true;
        prof.b0 = [0.0, 30.0, 0.0, 120.0];
        prof.b1 = [0.0, 40.0, 0.0, 50.0];
        prof.b2 = [0.0, -20.0, 0.0, -100.0];
        let times = PhaseTimes::new(0.15, 0.3, 0.6).unwrap();
        let (opt, land) = profile_to_waypoints(&prof, &times, JumpMode::Agile, &m.start, &m);
        let back = waypoints_to_profile(&opt, &land, &m).unwrap();
        let (opt2, land2) = profile_to_waypoints(&back, &times, JumpMode::Agile, &m.start, &m);
        for (a, b) in opt.to_vec().iter().zip(opt2.to_vec()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((land.as_vector() - land2.as_vector()).norm() < 1e-9);
        assert_eq!(back.a0[0], back.a0[1]);
        assert_eq!(back.b0[0], 0.0);
    }

    #[test]
    fn humanoid_roundtrip() {
        let p = RobotParams::humanoid();
        let m = InverseModel {
            body: PlanarBody::new(&p, 0.0, PlanarContact::Foot),
            start: PlanarState::default(),
            dt: 1e-3,
        };
        let mut prof = GRFProfile::zero(3, false);
        prof.a0 = [100.0, 500.0, -5.0, 0.0];
        prof.a1 = [900.0, 1500.0, 20.0, 0.0];
        let times = PhaseTimes::new(0.3, 0.3, 0.7).unwrap();
        let start = PlanarState::at_rest(-0.05, 0.75, 0.05);
        let (opt, land) = profile_to_waypoints(&prof, &times, JumpMode::Humanoid, &start, &m);
        let back = waypoints_to_profile(&opt, &land, &m).unwrap();
        for (a, b) in prof.coefficients().iter().zip(back.coefficients()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn record_roundtrip_and_errors() {
        let prof = omni_profile([60.0, 140.0], [70.0, 160.0], [60.0, 170.0]);
        let times = PhaseTimes::new(0.22, 0.22, 0.6).unwrap();
        let text = prof.to_record(&times);
        let (p2, t2) = GRFProfile::from_record(&text).unwrap();
        assert_eq!(p2, prof);
        assert_eq!(t2, times);
        let broken = text.replace("a1", "a1 1.0");
        match GRFProfile::from_record(&broken) {
            Err(ProfileError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_times_rejected() {
        assert!(PhaseTimes::new(0.3, 0.2, 0.5).is_err());
        assert!(PhaseTimes::new(0.2, 0.2, 0.2).is_err());
        let m = quad_model();
        let opt = OptVector::Omni {
            half: PlanarPose::new(0.0, 0.25, 0.0),
            t1: 0.3,
            t3: 0.3,
        };
        assert!(matches!(
            waypoints_to_profile(&opt, &PlanarPose::default(), &m),
            Err(ProfileError::InvalidTimes(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn omni_inverse_is_exact(
            j0 in 0.0..80.0f64, j1 in 0.0..150.0f64,
            z10 in 20.0..120.0f64, z11 in -50.0..200.0f64,
            z20 in 20.0..120.0f64, z21 in -50.0..200.0f64,
            t1 in 0.1..0.3f64, flight in 0.1..0.6f64,
        ) {
            let m = quad_model();
            let prof = omni_profile([j0, j1], [z10, z11], [z20, z21]);
            let times = PhaseTimes::new(t1, t1, t1 + flight).unwrap();
            let (opt, land) = profile_to_waypoints(&prof, &times, JumpMode::Omni, &m.start, &m);
            let back = waypoints_to_profile(&opt, &land, &m).unwrap();
            for (a, b) in prof.coefficients().iter().zip(back.coefficients()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
