//! Jump setup and verification simulator: stance rollout under the planned
//! ground reactions, joint-level analysis of every stance step, ballistic
//! flight to touchdown and trajectory export.

use std::fmt::Write as _;

use nalgebra::{Rotation3, Vector2, Vector3};
use thiserror::Error;

use crate::constraints::{
    evaluate_constraints, ConstraintError, ConstraintKind, ConstraintReport, JointSample, LegKinematics, LegSample, Limits, StepRecord,
};
use crate::grf_profile::{waypoints_to_profile, GRFProfile, InverseModel, JumpMode, OptVector, PhaseTimes, PlanarPose, ProfileError};
use crate::jump_plane::{build_plane, decompose, JumpPlaneSpec, PlaneError, ResultantForces};
use crate::leg_kinematics::{check_leg, humanoid_ik, humanoid_torque, interior_knee, joint_torque, wrap_angle, KinError, LegId, Stance};
use crate::robot_model::{
    ballistic, integrate_step, plane_rotation, srb_acceleration, Contact, PlanarBody, PlanarContact, PlanarState,
    PlanarTrajectory, ReducedState, RobotKind, RobotParams, DEFAULT_DT,
};

/// Crouched CoM height of a quadruped before take-off, m.
pub const QUAD_START_HEIGHT: f64 = 0.15;
/// Humanoid CoM height above the ankle when standing for landing, m.
pub const HUMANOID_LAND_HEIGHT: f64 = 0.70;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Plane(#[from] PlaneError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error("yaw targets are not supported by the {0} planner")]
    UnsupportedYaw(&'static str),
    #[error("{mode} jumps need a {needed} robot")]
    WrongRobot { mode: &'static str, needed: &'static str },
    #[error("humanoid jumps are sagittal; lateral target offset {0} m")]
    NotSagittal(f64),
    #[error("target is not finite")]
    NonFinite,
}

/// Landing CoM position: horizontal offset from the take-off CoM and height
/// above the take-off ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpTarget {
    pub position: Vector3<f64>,
    pub yaw: Option<f64>,
    /// Accept a target straight up (no heading).
    pub vertical: bool,
}

impl JumpTarget {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            position: Vector3::new(x, y, z),
            yaw: None,
            vertical: false,
        }
    }
}

/// Which quantity the `0.3 s` bound of the phase-time space limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PushBoundReading {
    /// End of push-off `t2` itself.
    #[default]
    PushEnd,
    /// Duration `t2 - t1` of the second push-off phase.
    SecondPhase,
}

/// Feasible phase times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TSpace {
    pub t1: [f64; 2],
    pub t2_max: f64,
    pub push_bound: f64,
    pub reading: PushBoundReading,
    pub flight_max: f64,
}

impl Default for TSpace {
    fn default() -> Self {
        Self {
            t1: [0.1, 0.5],
            t2_max: 0.5,
            push_bound: 0.3,
            reading: PushBoundReading::PushEnd,
            flight_max: 0.6,
        }
    }
}

impl TSpace {
    /// Total amount by which `times` leaves the space (0 when inside).
    pub fn violation(&self, t: &PhaseTimes) -> f64 {
        let over = |v: f64| v.max(0.0);
        let push = match self.reading {
            PushBoundReading::PushEnd => t.t2,
            PushBoundReading::SecondPhase => t.t2 - t.t1,
        };
        let flight = t.t3 - t.t2;
        let mut v = over(self.t1[0] - t.t1) + over(t.t1 - self.t1[1]);
        v += over(t.t1 - t.t2) + over(t.t2 - self.t2_max) + over(push - self.push_bound);
        v += over(flight - self.flight_max);
        if flight <= 0.0 {
            v += 1e-3 - flight;
        }
        v
    }

    /// Largest admissible push-off end for the given mode.
    pub fn push_end_max(&self, gamma: bool) -> f64 {
        match (self.reading, gamma) {
            (PushBoundReading::PushEnd, _) => self.push_bound.min(self.t2_max),
            (PushBoundReading::SecondPhase, false) => self.t1[1].min(self.t2_max),
            (PushBoundReading::SecondPhase, true) => self.t2_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetupOptions {
    pub start_height: f64,
    pub dt: f64,
    pub t_space: TSpace,
}

impl Default for SetupOptions {
    fn default() -> Self {
        Self {
            start_height: QUAD_START_HEIGHT,
            dt: DEFAULT_DT,
            t_space: TSpace::default(),
        }
    }
}

/// Everything fixed for one jump: robot, plane, start and landing pose.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSetup {
    pub params: RobotParams,
    pub mode: JumpMode,
    pub target: JumpTarget,
    pub heading: f64,
    pub stance: Stance,
    /// World CoM at the start (quadruped) or the stance foot position (humanoid).
    pub origin: Vector3<f64>,
    pub plane: Option<JumpPlaneSpec>,
    pub model: InverseModel,
    pub landing: PlanarPose,
    pub limits: Limits,
    pub t_space: TSpace,
    /// Window the flight must pass through, if any.
    pub obstacle: Option<Obstacle>,
}

impl JumpSetup {
    pub fn new(target: JumpTarget, mode: JumpMode, params: &RobotParams, opts: &SetupOptions) -> Result<Self, SimError> {
        if !target.position.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFinite);
        }
        if target.yaw.is_some_and(|y| y != 0.0) {
            return Err(SimError::UnsupportedYaw(mode.name()));
        }
        let limits = Limits::for_robot(params);
        let p = target.position;
        let horiz = p.xy().norm();
        match mode {
            JumpMode::Omni | JumpMode::Agile => {
                if params.kind != RobotKind::Quadruped {
                    return Err(SimError::WrongRobot {
                        mode: mode.name(),
                        needed: "quadruped",
                    });
                }
                let stance = Stance::nominal(params);
                let com = Vector3::new(0.0, 0.0, opts.start_height);
                let plane = build_plane(&(com + p), target.vertical, &stance, &com)?;
                let (s1, s2) = plane.edge_positions();
                let body = PlanarBody::new(params, plane.heading, PlanarContact::Edges { s1, s2 });
                Ok(Self {
                    params: params.clone(),
                    mode,
                    target,
                    heading: plane.heading,
                    stance,
                    origin: com,
                    model: InverseModel {
                        body,
                        start: PlanarState::at_rest(0.0, opts.start_height, 0.0),
                        dt: opts.dt,
                    },
                    plane: Some(plane),
                    landing: PlanarPose::new(horiz, p.z, 0.0),
                    limits,
                    t_space: opts.t_space,
                    obstacle: None,
                })
            }
            JumpMode::Humanoid => {
                if params.kind != RobotKind::Humanoid {
                    return Err(SimError::WrongRobot {
                        mode: "humanoid",
                        needed: "humanoid",
                    });
                }
                if p.y.abs() > 1e-9 {
                    return Err(SimError::NotSagittal(p.y));
                }
                if horiz < 1e-12 && !target.vertical {
                    return Err(PlaneError::DegenerateTarget.into());
                }
                let heading = if p.x < 0.0 { std::f64::consts::PI } else { 0.0 };
                let body = PlanarBody::new(params, heading, PlanarContact::Foot);
                Ok(Self {
                    params: params.clone(),
                    mode,
                    target,
                    heading,
                    stance: Stance {
                        feet: vec![Vector3::zeros()],
                        contact: vec![true],
                    },
                    origin: Vector3::zeros(),
                    plane: None,
                    model: InverseModel {
                        body,
                        start: PlanarState::at_rest(0.0, HUMANOID_LAND_HEIGHT, 0.0),
                        dt: opts.dt,
                    },
                    landing: PlanarPose::new(horiz, HUMANOID_LAND_HEIGHT + p.z, 0.0),
                    limits,
                    t_space: opts.t_space,
                    obstacle: None,
                })
            }
        }
    }

    pub fn with_obstacle(mut self, obstacle: Option<Obstacle>) -> Self {
        self.obstacle = obstacle;
        self
    }

    pub fn with_dt(&self, dt: f64) -> Self {
        let mut s = self.clone();
        s.model.dt = dt;
        s
    }

    pub fn direction(&self) -> Vector3<f64> {
        Vector3::new(self.heading.cos(), self.heading.sin(), 0.0)
    }

    /// World CoM for an in-plane state.
    pub fn com_world(&self, s: &PlanarState) -> Vector3<f64> {
        let h = self.direction() * s.x;
        Vector3::new(self.origin.x + h.x, self.origin.y + h.y, s.z)
    }

    /// World CoM the jump should land at.
    pub fn target_world(&self) -> Vector3<f64> {
        self.com_world(&PlanarState::at_rest(self.landing.x, self.landing.z, 0.0))
    }

    /// Ground reactions that planar channel values `u` put on each stance foot (world frame).
    pub fn foot_forces(&self, u: &[f64; 4], phase: u8) -> Vec<(usize, Vector3<f64>)> {
        match &self.plane {
            Some(plane) => {
                let f = decompose(&ResultantForces(*u), plane);
                let trail = &plane.edges[1];
                (0..4)
                    .filter(|&i| phase == 1 || i == trail.m.index() || i == trail.l.index())
                    .map(|i| (i, f[i]))
                    .collect()
            }
            None => {
                let d = self.direction();
                vec![(0, d * u[0] + Vector3::z() * u[1])]
            }
        }
    }
}

/// Planned profile and stance rollout of a decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StancePlan {
    pub profile: GRFProfile,
    pub times: PhaseTimes,
    pub trajectory: PlanarTrajectory,
}

pub fn plan_stance(opt: &OptVector, setup: &JumpSetup) -> Result<StancePlan, SimError> {
    let profile = waypoints_to_profile(opt, &setup.landing, &setup.model)?;
    let times = opt.times();
    let init = setup.model.initial_state(opt);
    let trajectory = setup.model.rollout(&profile, &times, &init);
    Ok(StancePlan {
        profile,
        times,
        trajectory,
    })
}

/// Joint-level record of every stance step.
#[derive(Debug, Clone, PartialEq)]
pub struct StanceAnalysis {
    pub steps: Vec<StepRecord>,
    /// Per step and leg: foot forces (world), indexed like the stance.
    pub forces: Vec<Vec<(usize, Vector3<f64>)>>,
    /// First step time at which a leg left its configuration space.
    pub c_space_exit: Option<f64>,
}

#[derive(Clone, Copy)]
struct LegPose {
    q: Result<[f64; 3], f64>,
    tau: [f64; 3],
    heights: [f64; 2],
    knee: f64,
}

fn quad_leg(setup: &JumpSetup, com: &Vector3<f64>, rot: &Rotation3<f64>, i: usize, f: &Vector3<f64>) -> LegPose {
    let leg = LegId::ALL[i];
    let check = check_leg(com, rot, &setup.stance.feet[i], leg, &setup.params);
    match (check.q, check.points_world) {
        (Ok(q), Some(pts)) => {
            let tau = joint_torque(&q, leg, &(rot.inverse() * f), &setup.params);
            LegPose {
                q: Ok(q.0),
                tau: tau.into(),
                heights: [pts.hip.z, pts.knee.z],
                knee: interior_knee(q.0[2]),
            }
        }
        (Err(KinError::Unreachable { deficit }), _) => unreachable_pose(deficit),
        _ => unreachable_pose(f64::INFINITY),
    }
}

fn unreachable_pose(deficit: f64) -> LegPose {
    LegPose {
        q: Err(deficit),
        tau: [0.0; 3],
        heights: [0.0; 2],
        knee: 0.0,
    }
}

fn humanoid_leg(setup: &JumpSetup, s: &PlanarState, u: &[f64; 4]) -> LegPose {
    let drop = setup.params.hip_offsets[0][2];
    let hip = Vector2::new(s.x - drop * s.theta.sin(), s.z + drop * s.theta.cos());
    match humanoid_ik(&hip, s.theta, &setup.params) {
        Ok(leg) => LegPose {
            q: Ok(leg.q.0),
            tau: humanoid_torque(&leg, &hip, [u[0], u[1], u[2]]).into(),
            heights: [hip.y, leg.knee.y],
            knee: interior_knee(leg.q.0[1]),
        },
        Err(KinError::Unreachable { deficit }) => unreachable_pose(deficit),
        Err(_) => unreachable_pose(f64::INFINITY),
    }
}

/// Joint angles, velocities, torques and contact forces at every stance step.
pub fn analyze_stance(plan: &StancePlan, setup: &JumpSetup) -> StanceAnalysis {
    let samples = &plan.trajectory.samples;
    let humanoid = setup.mode == JumpMode::Humanoid;
    let mut poses: Vec<Vec<(usize, Vector3<f64>, LegPose)>> = Vec::with_capacity(samples.len());
    for smp in samples {
        if humanoid {
            let f = setup.direction() * smp.u[0] + Vector3::z() * smp.u[1];
            let pose = humanoid_leg(setup, &smp.state, &smp.u);
            // Two legs share the wrench; both are recorded.
            let half = f * 0.5;
            poses.push(vec![(0, half, pose), (1, half, pose)]);
        } else {
            let com = setup.com_world(&smp.state);
            let rot = plane_rotation(setup.heading, smp.state.theta);
            let legs = setup
                .foot_forces(&smp.u, smp.phase)
                .into_iter()
                .map(|(i, f)| (i, f, quad_leg(setup, &com, &rot, i, &f)))
                .collect();
            poses.push(legs);
        }
    }
    let n = samples.len();
    let mut steps = Vec::with_capacity(n);
    let mut forces = Vec::with_capacity(n);
    let mut c_space_exit = None;
    for k in 0..n {
        let (a, b) = if k + 1 < n { (k, k + 1) } else { (k.saturating_sub(1), k) };
        let dt = samples[b].t - samples[a].t;
        let q_of = |step: usize, leg: usize| {
            poses[step]
                .iter()
                .find(|(i, _, _)| *i == leg)
                .and_then(|(_, _, p)| p.q.ok())
        };
        let mut legs = Vec::with_capacity(poses[k].len());
        let mut exited = false;
        for (i, f, pose) in &poses[k] {
            let kin = match pose.q {
                Err(deficit) => {
                    exited = true;
                    LegKinematics::Unreachable(deficit)
                }
                Ok(q) => {
                    let qdot = match (q_of(a, *i), q_of(b, *i)) {
                        (Some(qa), Some(qb)) if dt > 0.0 => std::array::from_fn(|j| wrap_angle(qb[j] - qa[j]) / dt),
                        _ => [0.0; 3],
                    };
                    let [kmin, kmax] = setup.limits.knee;
                    if pose.knee < kmin || pose.knee > kmax || pose.heights.iter().any(|&h| h < setup.limits.min_joint_height)
                    {
                        exited = true;
                    }
                    LegKinematics::Solved(JointSample {
                        q,
                        qdot,
                        tau: pose.tau,
                        knee_interior: pose.knee,
                        heights: pose.heights,
                    })
                }
            };
            legs.push(LegSample { force: *f, kin });
        }
        if exited && c_space_exit.is_none() {
            c_space_exit = Some(samples[k].t);
        }
        let u = &samples[k].u;
        let zmp = (humanoid && u[1] > 0.0).then(|| -u[2] / u[1]);
        forces.push(poses[k].iter().map(|(i, f, _)| (*i, *f)).collect());
        steps.push(StepRecord {
            t: samples[k].t,
            legs,
            zmp,
        });
    }
    StanceAnalysis {
        steps,
        forces,
        c_space_exit,
    }
}

/// Constraint report of a decision vector. A window obstacle adds its
/// aperture violation to the position class.
pub fn evaluate_plan(plan: &StancePlan, setup: &JumpSetup) -> Result<(ConstraintReport, StanceAnalysis), SimError> {
    let analysis = analyze_stance(plan, setup);
    let mut report = evaluate_constraints(&analysis.steps, &setup.limits)?;
    if let Some(obstacle) = &setup.obstacle {
        let path = flight_path(plan, setup);
        let miss = obstacle.aperture_violation(path.iter().map(|(_, s)| setup.com_world(s)));
        let k = ConstraintKind::JointPosition.index();
        report.sigma[k] = report.sigma[k].max(miss);
    }
    Ok((report, analysis))
}

/// Axis-aligned box given by its centre and full extents, m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
}

impl ObstacleBox {
    fn covers_xy(&self, p: &Vector3<f64>) -> bool {
        (0..2).all(|i| (p[i] - self.center[i]).abs() <= 0.5 * self.size[i])
    }

    fn bottom(&self) -> f64 {
        self.center[2] - 0.5 * self.size[2]
    }

    fn top(&self) -> f64 {
        self.center[2] + 0.5 * self.size[2]
    }
}

/// Window-shaped obstacle: the wall above the opening and the wall below it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub above: ObstacleBox,
    pub below: ObstacleBox,
}

impl Obstacle {
    /// Layout `[above centre, above size, below centre, below size]`.
    pub fn from_array(v: &[f64; 12]) -> Self {
        let b = |o: usize| ObstacleBox {
            center: [v[o], v[o + 1], v[o + 2]],
            size: [v[o + 3], v[o + 4], v[o + 5]],
        };
        Self { above: b(0), below: b(6) }
    }

    pub fn to_array(&self) -> [f64; 12] {
        let mut v = [0.0; 12];
        for (o, b) in [(0, &self.above), (6, &self.below)] {
            v[o..o + 3].copy_from_slice(&b.center);
            v[o + 3..o + 6].copy_from_slice(&b.size);
        }
        v
    }

    /// Largest depth by which CoM points inside the window's footprint hit either wall.
    pub fn aperture_violation(&self, path: impl Iterator<Item = Vector3<f64>>) -> f64 {
        path.map(|p| {
            let low = if self.below.covers_xy(&p) { self.below.top() - p.z } else { 0.0 };
            let high = if self.above.covers_xy(&p) { p.z - self.above.bottom() } else { 0.0 };
            low.max(high).max(0.0)
        })
        .fold(0.0, f64::max)
    }
}

/// Ballistic CoM states from lift-off to `t3` at integration resolution.
fn flight_path(plan: &StancePlan, setup: &JumpSetup) -> Vec<(f64, PlanarState)> {
    let liftoff = *plan.trajectory.liftoff();
    let flight_time = plan.times.t3 - plan.times.t2;
    let n = (flight_time / setup.model.dt).ceil().max(1.0) as usize;
    (1..=n)
        .map(|i| {
            let tau = flight_time * i as f64 / n as f64;
            (plan.times.t2 + tau, ballistic(&liftoff, tau, setup.params.gravity))
        })
        .collect()
}

/// Zero-moment point of the humanoid foot at one stance step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZmpRecord {
    pub t: f64,
    /// Along the foot, positive toward the toe, m.
    pub p: f64,
    /// Heel and toe limits.
    pub bounds: [f64; 2],
}

impl ZmpRecord {
    pub fn inside(&self) -> bool {
        self.bounds[0] < self.p && self.p < self.bounds[1]
    }
}

/// `-tau / f_z` for a foot wrench.
pub fn zmp_of(f_z: f64, tau_y: f64) -> f64 {
    -tau_y / f_z
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub plan: StancePlan,
    pub analysis: StanceAnalysis,
    pub report: ConstraintReport,
    pub liftoff: PlanarState,
    pub landing: PlanarState,
    /// Touchdown CoM from the full rigid-body stance integration (world).
    pub landing_world: Vector3<f64>,
    pub landing_velocity: Vector3<f64>,
    /// Roll, pitch, yaw at touchdown from the full rigid-body integration.
    pub landing_attitude: Vector3<f64>,
    pub target_error: f64,
    pub flight: Vec<(f64, PlanarState)>,
    pub zmp: Vec<ZmpRecord>,
    /// First time the ZMP leaves the foot, if ever.
    pub zmp_violation: Option<f64>,
    pub warnings: Vec<String>,
}

impl SimOutcome {
    pub fn feasible(&self) -> bool {
        self.report.all_satisfied()
    }

    /// Horizontal CoM travel from the first stance sample to touchdown.
    pub fn jump_distance(&self) -> f64 {
        let start = self.plan.trajectory.samples[0].state;
        self.landing.x - start.x
    }

    pub fn c_space_exit(&self) -> Option<f64> {
        self.analysis.c_space_exit
    }
}

fn srb_stance(setup: &JumpSetup, plan: &StancePlan, analysis: &StanceAnalysis) -> ReducedState {
    let samples = &plan.trajectory.samples;
    let s0 = samples[0].state;
    let mut st = ReducedState::at_rest(setup.com_world(&s0));
    let (r, p, y) = plane_rotation(setup.heading, s0.theta).euler_angles();
    st.euler = Vector3::new(r, p, y);
    let feet: Vec<Vector3<f64>> = if setup.plane.is_some() {
        setup.stance.feet.clone()
    } else {
        vec![setup.origin]
    };
    for k in 0..samples.len().saturating_sub(1) {
        let h = samples[k + 1].t - samples[k].t;
        let mut contacts: Vec<Contact> = analysis.forces[k]
            .iter()
            .map(|(i, f)| Contact {
                r: feet[(*i).min(feet.len() - 1)] - st.p,
                f: *f,
            })
            .collect();
        if setup.plane.is_none() {
            // Ankle torque as a couple about the plane normal.
            let f = setup.direction() * samples[k].u[2];
            contacts.push(Contact { r: Vector3::z(), f });
            contacts.push(Contact { r: Vector3::zeros(), f: -f });
        }
        let acc = srb_acceleration(&st, &contacts, &setup.params);
        st = integrate_step(&st, &acc, h);
    }
    st
}

/// Plans the stance for `opt`, re-checks every constraint, flies the body to
/// touchdown at `t3` and measures the landing error.
pub fn simulate_jump(opt: &OptVector, setup: &JumpSetup) -> Result<SimOutcome, SimError> {
    let plan = plan_stance(opt, setup)?;
    let (report, analysis) = evaluate_plan(&plan, setup)?;
    let liftoff = *plan.trajectory.liftoff();
    let flight_time = plan.times.t3 - plan.times.t2;
    let g = setup.params.gravity;
    let landing = ballistic(&liftoff, flight_time, g);

    let srb = srb_stance(setup, &plan, &analysis);
    let landing_world = srb.p + srb.v * flight_time - Vector3::z() * (0.5 * g * flight_time * flight_time);
    let landing_velocity = srb.v - Vector3::z() * (g * flight_time);
    let flip = Rotation3::from_scaled_axis(srb.rotation() * srb.omega * flight_time);
    let (r, p, y) = (flip * srb.rotation()).euler_angles();
    let target_error = (landing_world - setup.target_world()).norm();

    let flight = flight_path(&plan, setup);

    let mut warnings = Vec::new();
    if let Some(t) = analysis.c_space_exit {
        warnings.push(format!("leg leaves its configuration space at t = {t:.4} s"));
    }
    let apex_floor = flight.iter().map(|(_, s)| s.z).fold(f64::INFINITY, f64::min);
    if apex_floor < setup.limits.min_joint_height {
        warnings.push(format!("CoM drops to {apex_floor:.3} m during flight"));
    }
    if let Some(obstacle) = &setup.obstacle {
        let miss = obstacle.aperture_violation(flight.iter().map(|(_, s)| setup.com_world(s)));
        if miss > 0.0 {
            warnings.push(format!("flight path hits the window frame by {miss:.3} m"));
        }
    }

    let zmp: Vec<ZmpRecord> = match setup.limits.zmp {
        Some(bounds) => analysis
            .steps
            .iter()
            .filter_map(|s| s.zmp.map(|p| ZmpRecord { t: s.t, p, bounds }))
            .collect(),
        None => Vec::new(),
    };
    let zmp_violation = zmp.iter().find(|z| !z.inside()).map(|z| z.t);
    if let Some(t) = zmp_violation {
        warnings.push(format!("ZMP leaves the foot at t = {t:.4} s"));
    }
    Ok(SimOutcome {
        plan,
        analysis,
        report,
        liftoff,
        landing,
        landing_world,
        landing_velocity,
        landing_attitude: Vector3::new(r, p, y),
        target_error,
        flight,
        zmp,
        zmp_violation,
        warnings,
    })
}

/// Humanoid entry point: `simulate_jump` with the ZMP trace.
pub fn simulate_humanoid(opt: &OptVector, setup: &JumpSetup) -> Result<SimOutcome, SimError> {
    if setup.mode != JumpMode::Humanoid {
        return Err(SimError::WrongRobot {
            mode: setup.mode.name(),
            needed: "humanoid",
        });
    }
    simulate_jump(opt, setup)
}

/// Stance and flight trajectory as CSV at integration resolution.
pub fn trajectory_csv(out: &SimOutcome, setup: &JumpSetup) -> String {
    let humanoid = setup.mode == JumpMode::Humanoid;
    let mut s = String::from("t,phase,x,z,theta,vx,vz,omega");
    if humanoid {
        s.push_str(",fx,fz,tau_y,zmp");
        for j in ["ankle", "knee", "hip"] {
            let _ = write!(s, ",tau_{j}");
        }
    } else {
        s.push_str(",uJ1,uJ2,uz1,uz2");
        for f in 1..=4 {
            let _ = write!(s, ",f{f}x,f{f}y,f{f}z");
        }
        for leg in 1..=4 {
            for j in 1..=3 {
                let _ = write!(s, ",tau{leg}_{j}");
            }
        }
    }
    s.push('\n');
    let num = |s: &mut String, v: f64| {
        let _ = write!(s, ",{v:+.9e}");
    };
    let state = |s: &mut String, t: f64, phase: &str, st: &PlanarState| {
        let _ = write!(s, "{t:.6},{phase}");
        for v in [st.x, st.z, st.theta, st.vx, st.vz, st.omega] {
            let _ = write!(s, ",{v:+.9e}");
        }
    };
    for (k, smp) in out.plan.trajectory.samples.iter().enumerate() {
        state(&mut s, smp.t, if smp.phase == 1 { "push1" } else { "push2" }, &smp.state);
        let step = &out.analysis.steps[k];
        let torques = |leg: usize| -> [f64; 3] {
            step.legs
                .get(leg)
                .and_then(|l| match l.kin {
                    LegKinematics::Solved(j) => Some(j.tau),
                    LegKinematics::Unreachable(_) => None,
                })
                .unwrap_or([f64::NAN; 3])
        };
        if humanoid {
            for v in [smp.u[0], smp.u[1], smp.u[2], step.zmp.unwrap_or(f64::NAN)] {
                num(&mut s, v);
            }
            for v in torques(0) {
                num(&mut s, v);
            }
        } else {
            for v in smp.u {
                num(&mut s, v);
            }
            let forces = &out.analysis.forces[k];
            for i in 0..4 {
                let f = forces.iter().find(|(j, _)| *j == i).map(|(_, f)| *f).unwrap_or_default();
                for v in f.iter() {
                    num(&mut s, *v);
                }
            }
            for i in 0..4 {
                let pos = forces.iter().position(|(j, _)| *j == i);
                let tau = pos.map(torques).unwrap_or([0.0; 3]);
                for v in tau {
                    num(&mut s, v);
                }
            }
        }
        s.push('\n');
    }
    let extra = if humanoid { 7 } else { 4 + 12 + 12 };
    for (t, st) in &out.flight {
        state(&mut s, *t, "flight", st);
        for _ in 0..extra {
            s.push_str(",0");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::de::DEConfig;
    use crate::planner::optimize_jump;
    use approx::assert_abs_diff_eq;

    fn cheetah(x: f64, y: f64, z: f64) -> Result<JumpSetup, SimError> {
        JumpSetup::new(JumpTarget::new(x, y, z), JumpMode::Omni, &RobotParams::mini_cheetah(), &SetupOptions::default())
    }

    fn hover_setup() -> JumpSetup {
        let target = JumpTarget {
            position: Vector3::new(0.0, 0.0, QUAD_START_HEIGHT),
            yaw: None,
            vertical: true,
        };
        JumpSetup::new(target, JumpMode::Omni, &RobotParams::mini_cheetah(), &SetupOptions::default()).unwrap()
    }

    #[test]
    fn hover_lands_where_it_started() {
        let setup = hover_setup();
        let opt = OptVector::Omni {
            half: PlanarPose::new(0.0, QUAD_START_HEIGHT, 0.0),
            t1: 0.2,
            t3: 0.2 + 1e-6,
        };
        let out = simulate_jump(&opt, &setup).unwrap();
        assert_abs_diff_eq!(out.landing.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(out.landing.z, QUAD_START_HEIGHT, epsilon = 1e-9);
        assert!(out.target_error < 1e-9, "error {}", out.target_error);
        let c = out.plan.profile.coefficients();
        let weight = setup.params.mass * setup.params.gravity;
        let eval = |t: f64| out.plan.profile.eval_u(&out.plan.times, t).unwrap();
        let (u0, u1) = (eval(0.0), eval(0.19));
        for u in [u0, u1] {
            assert_abs_diff_eq!(u[0] + u[1], 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!(u[2] + u[3], weight, epsilon = 1e-6);
        }
        assert!(c.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_target_is_degenerate() {
        assert!(matches!(cheetah(0.0, 0.0, 0.0), Err(SimError::Plane(PlaneError::DegenerateTarget))));
    }

    #[test]
    fn yaw_targets_are_rejected() {
        let mut t = JumpTarget::new(1.0, 0.0, 0.25);
        t.yaw = Some(0.5);
        let err = JumpSetup::new(t, JumpMode::Omni, &RobotParams::mini_cheetah(), &SetupOptions::default());
        assert!(matches!(err, Err(SimError::UnsupportedYaw("omni"))));
    }

    #[test]
    fn robot_must_match_mode() {
        let hum = JumpSetup::new(JumpTarget::new(1.0, 0.0, 0.0), JumpMode::Omni, &RobotParams::humanoid(), &SetupOptions::default());
        assert!(matches!(hum, Err(SimError::WrongRobot { .. })));
        let side = JumpSetup::new(JumpTarget::new(1.0, 0.3, 0.0), JumpMode::Humanoid, &RobotParams::humanoid(), &SetupOptions::default());
        assert!(matches!(side, Err(SimError::NotSagittal(_))));
    }

    #[test]
    fn zmp_sign_and_threshold() {
        assert_eq!(zmp_of(400.0, 0.0), 0.0);
        let p = zmp_of(100.0, -20.0);
        assert_abs_diff_eq!(p, 0.2, epsilon = 1e-15);
        let bounds = Limits::for_robot(&RobotParams::humanoid()).zmp.unwrap();
        assert!(ZmpRecord { t: 0.0, p: 0.0, bounds }.inside());
        assert!(!ZmpRecord { t: 0.0, p, bounds }.inside());
    }

    #[test]
    fn forward_jump_lands_on_target_and_refines() {
        let setup = cheetah(1.0, 0.0, 0.25).unwrap();
        let (sol, out) = optimize_jump(&setup, None, &DEConfig::cold().with_seed(0)).unwrap();
        assert!(out.target_error < 0.05);
        assert!(out.feasible());
        let fine = simulate_jump(&sol.opt, &setup.with_dt(setup.model.dt / 2.0)).unwrap();
        assert!((fine.landing_world - out.landing_world).norm() < 1e-3);

        // Same profile, finer integration: first-order Euler drift only.
        let fine_model = InverseModel { dt: setup.model.dt / 2.0, ..setup.model };
        let traj = fine_model.rollout(&out.plan.profile, &out.plan.times, &setup.model.start);
        let land = ballistic(traj.liftoff(), out.plan.times.t3 - out.plan.times.t2, setup.params.gravity);
        let drift = (land.x - out.landing.x).hypot(land.z - out.landing.z);
        assert!(drift < 1e-2);

        let csv = trajectory_csv(&out, &setup);
        let header = csv.lines().next().unwrap();
        assert!(header.starts_with("t,phase,x,z,theta,vx,vz,omega,uJ1,uJ2,uz1,uz2,f1x"));
        let cols = header.split(',').count();
        assert!(csv.lines().all(|l| l.split(',').count() == cols));
    }

    #[test]
    fn stance_end_is_flight_start() {
        let setup = cheetah(0.6, 0.2, 0.2).unwrap();
        let opt = OptVector::Omni {
            half: PlanarPose::new(0.05, 0.18, 0.0),
            t1: 0.25,
            t3: 0.55,
        };
        let out = simulate_jump(&opt, &setup).unwrap();
        let first = out.flight.first().unwrap().1;
        let expected = ballistic(&out.liftoff, out.flight[0].0 - out.plan.times.t2, setup.params.gravity);
        for (a, b) in [(first.x, expected.x), (first.z, expected.z), (first.vz, expected.vz), (first.theta, expected.theta)] {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_eq!(ballistic(&out.liftoff, 0.0, setup.params.gravity), out.liftoff);
        assert_abs_diff_eq!(out.flight.last().unwrap().0, out.plan.times.t3, epsilon = 1e-12);
    }

    fn window(sill: f64, lintel: f64) -> Obstacle {
        // 0.2 m deep wall at x = 0.5 spanning y in [-0.5, 0.5].
        Obstacle::from_array(&[0.5, 0.0, lintel + 0.5, 0.2, 1.0, 1.0, 0.5, 0.0, sill / 2.0, 0.2, 1.0, sill])
    }

    #[test]
    fn aperture_depth_of_a_path() {
        let w = window(0.3, 0.6);
        assert_eq!(Obstacle::from_array(&w.to_array()), w);
        let through = [Vector3::new(0.5, 0.0, 0.45), Vector3::new(0.9, 0.0, 0.2)];
        assert_eq!(w.aperture_violation(through.into_iter()), 0.0);
        let low = [Vector3::new(0.45, 0.1, 0.25)];
        assert_abs_diff_eq!(w.aperture_violation(low.into_iter()), 0.05, epsilon = 1e-12);
        let high = [Vector3::new(0.55, 0.0, 0.7)];
        assert_abs_diff_eq!(w.aperture_violation(high.into_iter()), 0.1, epsilon = 1e-12);
        // Beside the wall nothing is hit.
        assert_eq!(w.aperture_violation([Vector3::new(0.5, 0.8, 0.0)].into_iter()), 0.0);
    }

    #[test]
    fn blocked_window_flags_the_position_class() {
        let setup = cheetah(1.0, 0.0, 0.25).unwrap();
        let (sol, free) = optimize_jump(&setup, None, &DEConfig::cold().with_seed(0)).unwrap();
        assert!(free.feasible());
        let wide = simulate_jump(&sol.opt, &setup.clone().with_obstacle(Some(window(0.0, 5.0)))).unwrap();
        assert!(wide.feasible());
        let shut = simulate_jump(&sol.opt, &setup.with_obstacle(Some(window(2.0, 5.0)))).unwrap();
        assert!(shut.report.active(ConstraintKind::JointPosition));
        assert!(shut.warnings.iter().any(|w| w.contains("window frame")));
    }

    #[test]
    fn simulate_humanoid_needs_humanoid() {
        let setup = cheetah(1.0, 0.0, 0.25).unwrap();
        let opt = OptVector::Omni {
            half: PlanarPose::new(0.05, 0.18, 0.0),
            t1: 0.25,
            t3: 0.55,
        };
        assert!(matches!(simulate_humanoid(&opt, &setup), Err(SimError::WrongRobot { .. })));
    }
}
