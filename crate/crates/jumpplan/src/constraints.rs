//! Kinodynamic constraint checks along a stance trajectory and the
//! prioritized penalty fitness built from them.

use std::fmt::Write as _;

use nalgebra::Vector3;
use thiserror::Error;

use crate::robot_model::{RobotKind, RobotParams};

/// Fitness values below this certify that no constraint is violated.
pub const FEASIBLE_FITNESS: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstraintError {
    #[error("trajectory has no stance samples")]
    NoStance,
    #[error("malformed constraint record: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintKind {
    ContactForce,
    FrictionCone,
    Zmp,
    JointAngle,
    JointVelocity,
    JointPosition,
    JointTorque,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 7] = [
        Self::ContactForce,
        Self::FrictionCone,
        Self::Zmp,
        Self::JointAngle,
        Self::JointVelocity,
        Self::JointPosition,
        Self::JointTorque,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Decade exponent `n` of the penalty weight.
    pub fn priority(self) -> i32 {
        match self {
            Self::ContactForce => 15,
            Self::FrictionCone => 13,
            Self::Zmp => 12,
            Self::JointAngle => 11,
            Self::JointVelocity => 9,
            Self::JointPosition => 8,
            Self::JointTorque => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ContactForce => "contact_force",
            Self::FrictionCone => "friction_cone",
            Self::Zmp => "zmp",
            Self::JointAngle => "joint_angle",
            Self::JointVelocity => "joint_velocity",
            Self::JointPosition => "joint_position",
            Self::JointTorque => "joint_torque",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Self::ContactForce => "N",
            Self::FrictionCone => "1",
            Self::Zmp | Self::JointPosition => "m",
            Self::JointAngle => "rad",
            Self::JointVelocity => "rad/s",
            Self::JointTorque => "N*m",
        }
    }
}

/// Worst-case violation per constraint (native units, zero when satisfied)
/// and the take-off energy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConstraintReport {
    pub sigma: [f64; 7],
    pub energy: f64,
}

impl ConstraintReport {
    pub fn violation(&self, kind: ConstraintKind) -> f64 {
        self.sigma[kind.index()]
    }

    pub fn active(&self, kind: ConstraintKind) -> bool {
        self.violation(kind) > 0.0
    }

    pub fn all_satisfied(&self) -> bool {
        ConstraintKind::ALL.iter().all(|&k| !self.active(k))
    }

    pub fn raise(&mut self, kind: ConstraintKind, amount: f64) {
        let s = &mut self.sigma[kind.index()];
        if amount > *s {
            *s = amount;
        }
    }

    pub fn fitness(&self) -> f64 {
        fitness(self)
    }

    pub fn to_record(&self) -> String {
        let mut s = String::from("# constraint priority active violation unit\n");
        for k in ConstraintKind::ALL {
            let _ = writeln!(
                s,
                "{} {} {} {:+.17e} {}",
                k.name(),
                k.priority(),
                u8::from(self.active(k)),
                self.violation(k),
                k.unit()
            );
        }
        let _ = writeln!(s, "energy {:+.17e}", self.energy);
        let _ = writeln!(s, "fitness {:+.17e}", self.fitness());
        s
    }

    pub fn from_record(text: &str) -> Result<Self, ConstraintError> {
        let mut r = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|e| ConstraintError::Parse(format!("`{s}`: {e}")));
            match f.as_slice() {
                ["energy", v] => r.energy = num(v)?,
                ["fitness", _] => {}
                [name, _, _, v, _] => {
                    let k = ConstraintKind::ALL
                        .into_iter()
                        .find(|k| k.name() == *name)
                        .ok_or_else(|| ConstraintError::Parse(format!("unknown constraint `{name}`")))?;
                    r.sigma[k.index()] = num(v)?;
                }
                _ => return Err(ConstraintError::Parse(format!("bad line `{line}`"))),
            }
        }
        Ok(r)
    }
}

/// `sum W_n (10^(n+3) + 10^n sigma_n) + energy`.
pub fn fitness(report: &ConstraintReport) -> f64 {
    let penalty: f64 = ConstraintKind::ALL
        .iter()
        .filter(|&&k| report.active(k))
        .map(|&k| {
            let n = k.priority();
            10f64.powi(n + 3) + 10f64.powi(n) * report.violation(k)
        })
        .sum();
    penalty + report.energy
}

/// Thresholds the trajectory is checked against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub min_normal_force: f64,
    pub friction: f64,
    /// Interior knee angle range, radians.
    pub knee: [f64; 2],
    /// Limits on the non-knee joint coordinates (first two joint classes for
    /// quadrupeds: none; humanoid: ankle and hip).
    pub joint_ranges: [Option<[f64; 2]>; 3],
    pub velocity: [f64; 3],
    pub torque: [f64; 3],
    pub min_joint_height: f64,
    /// Converts an unreachable-foot distance into an equivalent knee overextension.
    pub reach_to_angle: f64,
    pub zmp: Option<[f64; 2]>,
}

impl Limits {
    pub fn for_robot(params: &RobotParams) -> Self {
        let (joint_ranges, reach, zmp) = match params.kind {
            RobotKind::Quadruped => ([None, None, None], params.leg_lengths[1], None),
            RobotKind::Humanoid => (
                [Some(params.joint_limits[0]), None, Some(params.joint_limits[2])],
                params.leg_lengths[0],
                Some([-params.leg_lengths[3], params.leg_lengths[2]]),
            ),
        };
        Self {
            min_normal_force: 1.0,
            friction: params.friction_coeff,
            knee: params.knee_limits(),
            joint_ranges,
            velocity: to3(&params.velocity_limits),
            torque: to3(&params.torque_limits),
            min_joint_height: crate::leg_kinematics::MIN_JOINT_HEIGHT,
            reach_to_angle: 1.0 / reach,
            zmp,
        }
    }
}

fn to3(v: &[f64]) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

/// Joint state of one leg at one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointSample {
    pub q: [f64; 3],
    pub qdot: [f64; 3],
    pub tau: [f64; 3],
    /// Interior knee angle, radians.
    pub knee_interior: f64,
    /// Heights of the non-foot joints (hip, knee) above ground.
    pub heights: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LegKinematics {
    Solved(JointSample),
    /// Foot out of reach by this distance (m).
    Unreachable(f64),
}

/// One stance leg at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegSample {
    /// Ground reaction on the robot, world frame.
    pub force: Vector3<f64>,
    pub kin: LegKinematics,
}

/// All stance legs at one integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub legs: Vec<LegSample>,
    /// Zero-moment point along the foot (humanoid only).
    pub zmp: Option<f64>,
}

/// Worst-case constraint violations over the stance steps plus the energy integral.
pub fn evaluate_constraints(steps: &[StepRecord], limits: &Limits) -> Result<ConstraintReport, ConstraintError> {
    if steps.iter().all(|s| s.legs.is_empty()) {
        return Err(ConstraintError::NoStance);
    }
    use ConstraintKind::*;
    let mut r = ConstraintReport::default();
    for step in steps {
        for leg in &step.legs {
            let f = leg.force;
            r.raise(ContactForce, limits.min_normal_force - f.z);
            if f.z > limits.min_normal_force {
                r.raise(FrictionCone, f.xy().norm() / f.z - limits.friction);
            }
            match leg.kin {
                LegKinematics::Unreachable(deficit) => {
                    r.raise(JointAngle, (std::f64::consts::PI - limits.knee[1]) + deficit * limits.reach_to_angle);
                }
                LegKinematics::Solved(j) => {
                    let k = j.knee_interior;
                    r.raise(JointAngle, limits.knee[0] - k);
                    r.raise(JointAngle, k - limits.knee[1]);
                    for (range, q) in limits.joint_ranges.iter().zip(j.q) {
                        if let Some([lo, hi]) = range {
                            r.raise(JointAngle, lo - q);
                            r.raise(JointAngle, q - hi);
                        }
                    }
                    for i in 0..3 {
                        r.raise(JointVelocity, j.qdot[i].abs() - limits.velocity[i]);
                        r.raise(JointTorque, j.tau[i].abs() - limits.torque[i]);
                    }
                    for h in j.heights {
                        r.raise(JointPosition, limits.min_joint_height - h);
                    }
                }
            }
        }
        if let (Some(p), Some([back, front])) = (step.zmp, limits.zmp) {
            r.raise(Zmp, back - p);
            r.raise(Zmp, p - front);
        }
    }
    r.energy = energy(steps);
    Ok(r)
}

/// Trapezoidal integral of `sum |tau * qdot|` over the stance steps.
pub fn energy(steps: &[StepRecord]) -> f64 {
    let t: Vec<f64> = steps.iter().map(|s| s.t).collect();
    let p: Vec<f64> = steps
        .iter()
        .map(|s| {
            s.legs
                .iter()
                .filter_map(|l| match l.kin {
                    LegKinematics::Solved(j) => Some((0..3).map(|i| (j.tau[i] * j.qdot[i]).abs()).sum::<f64>()),
                    LegKinematics::Unreachable(_) => None,
                })
                .sum()
        })
        .collect();
    trapezoid(&t, &p)
}

pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2).zip(y.windows(2)).map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solved(tau: f64, qdot: f64) -> LegKinematics {
        LegKinematics::Solved(JointSample {
            q: [0.0, -0.8, 1.6],
            qdot: [qdot; 3],
            tau: [tau; 3],
            knee_interior: 1.5,
            heights: [0.25, 0.12],
        })
    }

    fn step(t: f64, fz: f64, fx: f64) -> StepRecord {
        StepRecord {
            t,
            legs: (0..4)
                .map(|_| LegSample {
                    force: Vector3::new(fx, 0.0, fz),
                    kin: solved(0.0, 0.0),
                })
                .collect(),
            zmp: None,
        }
    }

    fn limits() -> Limits {
        Limits::for_robot(&RobotParams::mini_cheetah())
    }

    #[test]
    fn hover_is_feasible() {
        let w = 11.4 * 9.81 / 4.0;
        let steps: Vec<_> = (0..10).map(|i| step(i as f64 * 1e-3, w, 0.0)).collect();
        let r = evaluate_constraints(&steps, &limits()).unwrap();
        assert!(r.all_satisfied());
        assert_eq!(r.fitness(), 0.0);
    }

    #[test]
    fn contact_and_friction_deficits() {
        let mut s = step(0.0, 30.0, 0.0);
        s.legs[2].force.z = 0.5;
        let r = evaluate_constraints(&[s], &limits()).unwrap();
        assert!((r.violation(ConstraintKind::ContactForce) - 0.5).abs() < 1e-12);
        assert!(!r.active(ConstraintKind::FrictionCone));

        let r = evaluate_constraints(&[step(0.0, 20.0, 20.0)], &limits()).unwrap();
        assert!((r.violation(ConstraintKind::FrictionCone) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn limits_and_unreachable_legs() {
        let mut s = step(0.0, 30.0, 0.0);
        s.legs[0].kin = solved(40.0, 0.0);
        s.legs[1].kin = LegKinematics::Unreachable(0.02);
        let r = evaluate_constraints(&[s], &limits()).unwrap();
        assert!((r.violation(ConstraintKind::JointTorque) - 16.0).abs() < 1e-12);
        let expected = 10f64.to_radians() + 0.02 / 0.211;
        assert!((r.violation(ConstraintKind::JointAngle) - expected).abs() < 1e-12);
        assert!(matches!(
            evaluate_constraints(&[StepRecord { t: 0.0, legs: vec![], zmp: None }], &limits()),
            Err(ConstraintError::NoStance)
        ));
    }

    #[test]
    fn zmp_bounds() {
        let l = Limits::for_robot(&RobotParams::humanoid());
        let mut s = step(0.0, 100.0, 0.0);
        s.legs.truncate(1);
        s.zmp = Some(0.0);
        assert!(!evaluate_constraints(&[s.clone()], &l).unwrap().active(ConstraintKind::Zmp));
        s.zmp = Some(0.2);
        let r = evaluate_constraints(&[s], &l).unwrap();
        assert!((r.violation(ConstraintKind::Zmp) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy(&[step(0.0, 30.0, 0.0), step(0.3, 30.0, 0.0)]), 0.0);
        // 12 joints at 10 W each for 0.3 s.
        let steps: Vec<_> = (0..=300)
            .map(|i| {
                let mut s = step(i as f64 * 1e-3, 30.0, 0.0);
                for l in &mut s.legs {
                    l.kin = solved(5.0, 2.0);
                }
                s
            })
            .collect();
        assert!((energy(&steps) - 36.0).abs() < 1e-9);
    }

    #[test]
    fn trapezoid_matches_refined_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |t: f64| (c[0] + c[1] * (3.0 * t).sin() + c[2] * t * t + c[3] * (5.0 * t).cos()).abs() * 10.0;
        let grid = |n: usize| -> f64 {
            let t: Vec<f64> = (0..=n).map(|i| 0.3 * i as f64 / n as f64).collect();
            let y: Vec<f64> = t.iter().map(|&t| f(t)).collect();
            trapezoid(&t, &y)
        };
        assert!((grid(300) - grid(3000)).abs() < 1e-3);
    }

    #[test]
    fn fitness_examples() {
        let r = ConstraintReport {
            energy: 36.0,
            ..Default::default()
        };
        assert_eq!(fitness(&r), 36.0);
        let mut r = ConstraintReport {
            energy: 5.0,
            ..Default::default()
        };
        r.raise(ConstraintKind::ContactForce, 2.0);
        assert_eq!(fitness(&r), 1e18 + 2e15 + 5.0);
    }

    #[test]
    fn contact_dominates_torque() {
        let contact_min = 10f64.powi(18);
        let mut torque = ConstraintReport::default();
        torque.raise(ConstraintKind::JointTorque, 1e6);
        assert!(contact_min > fitness(&torque));
    }

    /// Largest violation magnitude for which one priority step of two decades
    /// still dominates every combination of lower-priority violations.
    #[test]
    fn dominance_bound_for_two_decade_gap() {
        for &top in &ConstraintKind::ALL {
            let n = top.priority();
            let lower: Vec<_> = ConstraintKind::ALL.iter().filter(|k| k.priority() <= n - 2).collect();
            let cap = 8e4;
            let worst: f64 = lower.iter().map(|k| 10f64.powi(k.priority() + 3) + 10f64.powi(k.priority()) * cap).sum();
            assert!(10f64.powi(n + 3) > worst, "{top:?}");
        }
    }

    #[test]
    fn record_roundtrip() {
        let mut r = ConstraintReport {
            energy: 12.5,
            ..Default::default()
        };
        r.raise(ConstraintKind::JointVelocity, 0.25);
        assert_eq!(ConstraintReport::from_record(&r.to_record()).unwrap(), r);
    }

    proptest! {
        #[test]
        fn fitness_is_monotone(
            sig in proptest::collection::vec(0.0..1e6f64, 7),
            k in 0usize..7, bump in 0.0..1e3f64, e in 0.0..100.0f64,
        ) {
            let mut r = ConstraintReport { energy: e, ..Default::default() };
            r.sigma.copy_from_slice(&sig);
            let base = fitness(&r);
            let mut up = r;
            up.sigma[k] += bump;
            prop_assert!(fitness(&up) >= base);
            up.energy += bump;
            prop_assert!(fitness(&up) >= base);
            if base < FEASIBLE_FITNESS {
                prop_assert!(r.all_satisfied());
            }
        }
    }
}
