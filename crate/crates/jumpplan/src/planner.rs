//! Jump optimization: search-space construction, the fitness of a decision
//! vector and the optimizer driver with optional warm start.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::constraints::{ConstraintReport, FEASIBLE_FITNESS};
use crate::de::{optimize, DEConfig, DEError, DEOutcome, SearchSpace};
use crate::grf_profile::{JumpMode, OptVector};
use crate::jump_sim::{evaluate_plan, plan_stance, simulate_jump, JumpSetup, SimError, SimOutcome};

/// Base fitness of vectors that do not define a jump at all (times outside
/// their space, waypoint map without solution).
pub const INVALID_FITNESS: f64 = 1e30;

/// Landing error accepted as a successful solve, m.
pub const LANDING_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Setup(#[from] SimError),
    #[error(transparent)]
    Optimizer(#[from] DEError),
    #[error("no feasible jump after {generations} generations (best fitness {fitness:.3e})")]
    Infeasible {
        generations: usize,
        fitness: f64,
        best: Box<Solution>,
    },
}

/// Bounds of the decision vector for a jump.
pub fn search_space(setup: &JumpSetup) -> SearchSpace {
    let ts = &setup.t_space;
    let z0 = setup.model.start.z;
    let t1 = [ts.t1[0], ts.t1[1].min(ts.push_end_max(false))];
    let flight_hi = |push_hi: f64| push_hi + ts.flight_max;
    let (lower, upper, c) = match setup.mode {
        JumpMode::Omni => (
            vec![-0.05, z0 - 0.06, -0.3, t1[0], t1[0]],
            vec![0.20, z0 + 0.18, 0.3, t1[1], flight_hi(t1[1])],
            3,
        ),
        JumpMode::Agile => {
            let t2_hi = ts.push_end_max(true);
            let t1_hi = ts.t1[1].min(t2_hi);
            (
                vec![-0.05, z0 - 0.06, -0.3, -0.05, z0 - 0.06, -0.6, -0.05, z0 - 0.04, -0.8, ts.t1[0], ts.t1[0], ts.t1[0]],
                vec![0.20, z0 + 0.18, 0.3, 0.30, z0 + 0.20, 0.6, 0.40, z0 + 0.22, 0.8, t1_hi, t2_hi, flight_hi(t2_hi)],
                9,
            )
        }
        JumpMode::Humanoid => (
            vec![-0.15, 0.50, -0.3, -0.15, 0.50, -0.4, t1[0], t1[0]],
            vec![0.15, 0.80, 0.3, 0.35, 0.82, 0.4, t1[1], flight_hi(t1[1])],
            6,
        ),
    };
    SearchSpace::new(lower, upper, c).expect("built-in bounds are ordered")
}

/// Evaluation of one decision vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    Invalid { fitness: f64, reason: String },
    Planned { fitness: f64, report: ConstraintReport },
}

impl Evaluation {
    pub fn fitness(&self) -> f64 {
        match self {
            Self::Invalid { fitness, .. } | Self::Planned { fitness, .. } => *fitness,
        }
    }
}

pub fn evaluate(setup: &JumpSetup, v: &[f64]) -> Evaluation {
    let opt = match OptVector::from_slice(setup.mode, v) {
        Ok(o) => o,
        Err(e) => {
            return Evaluation::Invalid {
                fitness: INVALID_FITNESS * 10.0,
                reason: e.to_string(),
            }
        }
    };
    let off = setup.t_space.violation(&opt.times());
    if off > 0.0 {
        return Evaluation::Invalid {
            fitness: INVALID_FITNESS * (1.0 + off),
            reason: format!("phase times outside their space by {off:.3e} s"),
        };
    }
    let planned = plan_stance(&opt, setup).and_then(|plan| evaluate_plan(&plan, setup));
    match planned {
        Ok((report, _)) => Evaluation::Planned {
            fitness: report.fitness(),
            report,
        },
        Err(e) => Evaluation::Invalid {
            fitness: INVALID_FITNESS,
            reason: e.to_string(),
        },
    }
}

pub fn fitness(setup: &JumpSetup, v: &[f64]) -> f64 {
    evaluate(setup, v).fitness()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub opt: OptVector,
    pub fitness: f64,
    pub report: Option<ConstraintReport>,
    pub search: DEOutcome,
    pub wall_time: Duration,
    pub warm: bool,
}

impl Solution {
    pub fn generations(&self) -> usize {
        self.search.generations
    }

    pub fn generations_to_feasibility(&self) -> Option<usize> {
        self.search.generations_to_feasibility
    }
}

/// Runs the optimizer for `setup`. With `warm`, the initial population is
/// drawn from a small box around the stored vector. Success needs every
/// constraint satisfied and a simulated landing within `LANDING_TOLERANCE`.
pub fn optimize_jump(setup: &JumpSetup, warm: Option<&OptVector>, cfg: &DEConfig) -> Result<(Solution, SimOutcome), PlanError> {
    let started = Instant::now();
    let space = search_space(setup);
    let init = match warm {
        Some(w) if w.mode() == setup.mode => space.around(&w.to_vec(), cfg.warm_box)?,
        _ => space.clone(),
    };
    let f = |v: &[f64]| fitness(setup, v);
    let search = optimize(&space, &init, cfg, &f)?;
    let opt = OptVector::from_slice(setup.mode, &search.best).map_err(SimError::from)?;
    let report = match evaluate(setup, &search.best) {
        Evaluation::Planned { report, .. } => Some(report),
        Evaluation::Invalid { .. } => None,
    };
    let solution = Solution {
        opt,
        fitness: search.best_fitness,
        report,
        wall_time: started.elapsed(),
        warm: warm.is_some(),
        search,
    };
    let failed = |s: Solution| PlanError::Infeasible {
        generations: s.search.generations,
        fitness: s.fitness,
        best: Box::new(s),
    };
    if solution.fitness >= FEASIBLE_FITNESS {
        return Err(failed(solution));
    }
    let outcome = simulate_jump(&opt, setup)?;
    if !outcome.feasible() || outcome.target_error >= LANDING_TOLERANCE {
        return Err(failed(solution));
    }
    Ok((solution, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grf_profile::PlanarPose;
    use crate::jump_sim::{JumpTarget, SetupOptions};
    use crate::robot_model::RobotParams;

    fn forward() -> JumpSetup {
        JumpSetup::new(JumpTarget::new(1.0, 0.0, 0.25), JumpMode::Omni, &RobotParams::mini_cheetah(), &SetupOptions::default()).unwrap()
    }

    #[test]
    fn space_dimension_follows_mode() {
        assert_eq!(search_space(&forward()).dim(), 5);
        let agile = JumpSetup::new(JumpTarget::new(0.5, 0.0, 0.3), JumpMode::Agile, &RobotParams::mini_cheetah(), &SetupOptions::default()).unwrap();
        assert_eq!(search_space(&agile).dim(), 12);
        let hum = JumpSetup::new(JumpTarget::new(1.2, 0.0, 0.0), JumpMode::Humanoid, &RobotParams::humanoid(), &SetupOptions::default()).unwrap();
        assert_eq!(search_space(&hum).dim(), 8);
    }

    #[test]
    fn times_outside_their_space_are_invalid() {
        let setup = forward();
        let v = OptVector::Omni {
            half: PlanarPose::new(0.05, 0.2, 0.0),
            t1: 0.05,
            t3: 0.4,
        }
        .to_vec();
        match evaluate(&setup, &v) {
            Evaluation::Invalid { fitness, .. } => assert!(fitness > INVALID_FITNESS),
            other => panic!("expected invalid, got {other:?}"),
        }
        assert!(fitness(&setup, &[1.0, 2.0]) >= INVALID_FITNESS);
    }

    #[test]
    fn planned_vectors_score_below_invalid() {
        let setup = forward();
        let space = search_space(&setup);
        let mid: Vec<f64> = space.lower.iter().zip(&space.upper).map(|(a, b)| 0.5 * (a + b)).collect();
        let e = evaluate(&setup, &mid);
        assert!(e.fitness() < INVALID_FITNESS, "{e:?}");
        assert_eq!(e.fitness(), fitness(&setup, &mid));
    }
}
