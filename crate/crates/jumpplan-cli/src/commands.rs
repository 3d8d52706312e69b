//! Optimize, simulate, relocalize and pre-motion library commands.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use jumpplan::de::DEConfig;
use jumpplan::grf_profile::JumpMode;
use jumpplan::jump_sim::{simulate_jump, trajectory_csv, JumpSetup, JumpTarget, Obstacle, SetupOptions, SimOutcome};
use jumpplan::planner::{optimize_jump, PlanError, LANDING_TOLERANCE};
use jumpplan::premotion::{self, BuildRequest, PreMotionLibrary, TargetGrid};
use jumpplan::robot_model::{RobotKind, RobotParams, DEFAULT_DT};
use nalgebra::{Isometry3, Point3, UnitQuaternion, Vector3};
use reloc::{bnb_search, inlier_points, leveling_rotation, refine_pose, BnbConfig, RefineConfig};

use crate::error::CliError;
use crate::manifest::{OutDir, RunManifest};
use crate::solution::SolutionRecord;
use crate::{BuildArgs, GridArgs, LookupArgs, OptimizeArgs, RelocArgs, RobotArgs, SimulateArgs, StatsArgs, CONFIG_ENV};

pub fn parse_mode(s: &str) -> Result<JumpMode, CliError> {
    JumpMode::parse(s).ok_or_else(|| CliError::Usage(format!("unknown mode `{s}` (expected omni, agile or humanoid)")))
}

/// Robot from a preset name or config path, then `$JUMPPLAN_CONFIG`, then
/// the preset matching `mode`.
pub fn resolve_robot(choice: Option<&str>, mode: JumpMode) -> Result<RobotParams, CliError> {
    let env = std::env::var(CONFIG_ENV).ok().filter(|v| !v.is_empty());
    let Some(choice) = choice.map(str::to_owned).or(env) else {
        let name = if mode == JumpMode::Humanoid { "humanoid" } else { "mini-cheetah" };
        return Ok(RobotParams::preset(name).expect("built-in preset"));
    };
    if let Some(p) = RobotParams::preset(&choice) {
        return Ok(p);
    }
    RobotParams::from_file(Path::new(&choice)).map_err(|e| match e {
        jumpplan::robot_model::ModelError::Io { .. } => CliError::Usage(format!("`{choice}` is neither a robot preset nor a readable config: {e}")),
        other => CliError::BadInput(format!("{choice}: {other}")),
    })
}

/// Cold and warm optimizer settings. A config file replaces the cold
/// settings; the warm ones keep their own mutation and crossover rates.
pub fn de_configs(args: &RobotArgs) -> Result<(DEConfig, DEConfig), CliError> {
    let cold = match &args.de_config {
        Some(p) => DEConfig::from_file(p).map_err(|e| CliError::BadInput(e.to_string()))?,
        None => DEConfig::cold(),
    };
    let w = DEConfig::warm();
    Ok((cold, DEConfig { f: w.f, cr: w.cr, pmu: w.pmu, ..cold }))
}

pub fn grid_of(g: &GridArgs) -> Result<(TargetGrid, Vec<JumpMode>), CliError> {
    if !(g.step > 0.0 && g.step.is_finite()) {
        return Err(CliError::Usage(format!("--step must be positive, got {}", g.step)));
    }
    let v = &g.grid;
    let grid = TargetGrid {
        lower: [v[0], v[2], v[4]],
        upper: [v[1], v[3], v[5]],
        step: g.step,
    };
    let modes = g.modes.iter().map(|m| parse_mode(m)).collect::<Result<Vec<_>, _>>()?;
    if modes.is_empty() {
        return Err(CliError::Usage("--modes is empty".into()));
    }
    Ok((grid, modes))
}

fn target3(v: &[f64]) -> Result<Vector3<f64>, CliError> {
    let t = Vector3::new(v[0], v[1], v[2]);
    if !t.iter().all(|x| x.is_finite()) {
        return Err(CliError::Usage(format!("target must be finite, got {v:?}")));
    }
    Ok(t)
}

fn fmt3(v: &Vector3<f64>) -> String {
    format!("{:+.6} {:+.6} {:+.6}", v.x, v.y, v.z)
}

fn robot_label(args: &RobotArgs, params: &RobotParams) -> String {
    args.robot.clone().filter(|r| RobotParams::preset(r).is_some()).unwrap_or_else(|| params.name.clone())
}

fn write_outcome(out: &mut OutDir, outcome: &SimOutcome, setup: &JumpSetup) -> Result<(), CliError> {
    out.write("trajectory.csv", &trajectory_csv(outcome, setup))?;
    out.write("constraints.txt", &outcome.report.to_record())?;
    out.write("profile.txt", &outcome.plan.profile.to_record(&outcome.plan.times))
}

fn outcome_summary(outcome: &SimOutcome, setup: &JumpSetup) -> String {
    let mut s = format!(
        "landing error {:.4} m, landing {}, distance {:.3} m",
        outcome.target_error,
        fmt3(&outcome.landing_world),
        outcome.jump_distance()
    );
    if setup.mode == JumpMode::Humanoid {
        let (lo, hi) = outcome
            .zmp
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| (lo.min(z.p), hi.max(z.p)));
        let _ = write!(s, ", ZMP range [{lo:+.4}, {hi:+.4}] m");
    }
    for w in &outcome.warnings {
        let _ = write!(s, "\nwarning: {w}");
    }
    s
}

pub fn optimize(args: &OptimizeArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mode = parse_mode(&args.mode)?;
    let params = resolve_robot(args.robot.robot.as_deref(), mode)?;
    let (cold, warm_cfg) = de_configs(&args.robot)?;
    let position = target3(&args.target)?;
    let obstacle = args
        .obstacle
        .as_ref()
        .map(|v| <[f64; 12]>::try_from(v.as_slice()).map(|a| Obstacle::from_array(&a)))
        .transpose()
        .map_err(|_| CliError::Usage("--obstacle takes 12 numbers".into()))?;
    let target = JumpTarget {
        position,
        yaw: args.yaw,
        vertical: args.vertical,
    };
    let setup = JumpSetup::new(target, mode, &params, &SetupOptions::default())
        .map_err(|e| CliError::Unreachable(format!("cannot pose a jump to {}: {e}", fmt3(&position))))?
        .with_obstacle(obstacle);

    let mut manifest = RunManifest::new("optimize", args.seed);
    manifest
        .input("target", fmt3(&position))
        .input("yaw", args.yaw.unwrap_or(0.0))
        .input("mode", mode.name())
        .input("vertical", args.vertical)
        .input("robot", params.to_toml_string())
        .input("optimizer", format!("{cold:?}"));
    if let Some(o) = &obstacle {
        manifest.input("obstacle", format!("{:?}", o.to_array()));
    }

    let warm = match &args.library {
        Some(dir) => {
            let lib = PreMotionLibrary::load(dir)?;
            manifest.input("library", lib.index_text(&lib.records_text()));
            lib.lookup(&position, mode, cold.radius).cloned()
        }
        None => None,
    };
    let cfg = if warm.is_some() { warm_cfg } else { cold }.with_seed(args.seed);
    let result = optimize_jump(&setup, warm.as_ref().map(|e| &e.opt), &cfg);
    let mut out = OutDir::new(args.out.as_deref())?;

    let (solution, outcome, error) = match result {
        Ok((s, o)) => (s, Some(o), None),
        Err(PlanError::Infeasible { best, .. }) => {
            let outcome = simulate_jump(&best.opt, &setup).ok();
            let msg = format!("no feasible jump found (best fitness {:.3e})", best.fitness);
            (*best, outcome, Some(CliError::Infeasible(msg)))
        }
        Err(PlanError::Optimizer(e)) => return Err(CliError::Usage(e.to_string())),
        Err(PlanError::Setup(e)) => return Err(CliError::Infeasible(format!("verification failed: {e}"))),
    };

    let record = SolutionRecord {
        robot: robot_label(&args.robot, &params),
        target,
        obstacle,
        opt: solution.opt,
        fitness: solution.fitness,
        generations: solution.generations(),
        generations_to_feasibility: solution.generations_to_feasibility(),
        warm: solution.warm,
    };
    out.write("solution.txt", &record.to_text())?;
    if let Some(o) = &outcome {
        write_outcome(&mut out, o, &setup)?;
    }
    manifest.status = if error.is_none() { "feasible" } else { "infeasible" }.into();
    manifest
        .stat("warm_start", solution.warm)
        .stat("generations", solution.generations())
        .stat(
            "generations_to_feasibility",
            solution.generations_to_feasibility().map_or("none".into(), |g| g.to_string()),
        )
        .stat("fitness", format!("{:+.17e}", solution.fitness));
    if let Some(o) = &outcome {
        manifest.stat("landing_error", format!("{:.9}", o.target_error));
    }
    let total = started.elapsed();
    out.finish(manifest, &[("solve_wall_s", solution.wall_time), ("total_wall_s", total)])?;

    println!(
        "{} {} jump to {}: fitness {:.4e}, {} generations{}, {:.3} s",
        if error.is_none() { "feasible" } else { "infeasible" },
        mode.name(),
        fmt3(&position),
        solution.fitness,
        solution.generations(),
        if solution.warm { " (warm start)" } else { "" },
        solution.wall_time.as_secs_f64()
    );
    if let Some(o) = &outcome {
        println!("{}", outcome_summary(o, &setup));
    }
    error.map_or(Ok(()), Err)
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let text = std::fs::read_to_string(&args.solution).map_err(|e| CliError::io(&args.solution, e))?;
    let rec = SolutionRecord::parse(&text, &args.solution.display().to_string())?;
    let mode = rec.opt.mode();
    let choice = args.robot.robot.clone().or_else(|| RobotParams::preset(&rec.robot).map(|_| rec.robot.clone()));
    let params = resolve_robot(choice.as_deref(), mode)?;
    if params.name != rec.robot && RobotParams::preset(&rec.robot).map(|p| p.name) != Some(params.name.clone()) {
        return Err(CliError::Usage(format!(
            "solution was planned for robot `{}` but `{}` was given; pass --robot",
            rec.robot, params.name
        )));
    }
    let dt = args.dt.unwrap_or(DEFAULT_DT);
    if !(dt > 0.0) {
        return Err(CliError::Usage(format!("--dt must be positive, got {dt}")));
    }
    let opts = SetupOptions { dt, ..SetupOptions::default() };
    let setup = JumpSetup::new(rec.target, mode, &params, &opts)
        .map_err(|e| CliError::BadInput(format!("stored target cannot be set up: {e}")))?
        .with_obstacle(rec.obstacle);
    let outcome = simulate_jump(&rec.opt, &setup).map_err(|e| CliError::BadInput(format!("stored solution cannot be simulated: {e}")))?;
    let ok = outcome.feasible() && outcome.target_error < LANDING_TOLERANCE;

    let mut out = OutDir::new(args.out.as_deref())?;
    write_outcome(&mut out, &outcome, &setup)?;
    let mut manifest = RunManifest::new("simulate", 0);
    manifest
        .input("solution", &text)
        .input("robot", params.to_toml_string())
        .input("dt", dt);
    manifest.status = if ok { "feasible" } else { "infeasible" }.into();
    manifest
        .stat("landing_error", format!("{:.9}", outcome.target_error))
        .stat("fitness", format!("{:+.17e}", outcome.report.fitness()));
    out.finish(manifest, &[("total_wall_s", started.elapsed())])?;

    println!(
        "{}: fitness {:.4e}",
        if ok { "feasible" } else { "infeasible" },
        outcome.report.fitness()
    );
    println!("{}", outcome_summary(&outcome, &setup));
    if ok {
        Ok(())
    } else {
        Err(CliError::Infeasible("stored solution violates constraints or misses the target".into()))
    }
}

pub fn reloc(args: &RelocArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let map = reloc::read_map(&args.map).map_err(|e| with_path(e, &args.map))?;
    let mut points = reloc::read_cloud(&args.cloud).map_err(|e| with_path(e, &args.cloud))?;
    let leveling = match &args.gravity {
        Some(g) => {
            let g = Vector3::new(g[0], g[1], g[2]);
            let r = (g.norm() > 0.0)
                .then(|| leveling_rotation(&g))
                .flatten()
                .ok_or_else(|| CliError::Usage(format!("cannot level against gravity {g:?}")))?;
            points.iter_mut().for_each(|p| *p = r * *p);
            UnitQuaternion::from_rotation_matrix(&r)
        }
        None => UnitQuaternion::identity(),
    };
    let cfg = BnbConfig {
        eps: args.eps,
        z_star: args.z_star,
        ..BnbConfig::default()
    };
    let coarse = bnb_search(&points, &map, &cfg)?;
    let mut pose = coarse.pose.isometry();
    let mut refined = None;
    if !args.no_refine {
        let inliers = inlier_points(&coarse.pose, &points, &map, cfg.eps);
        let rc = RefineConfig {
            huber: cfg.eps,
            ..RefineConfig::default()
        };
        let r = refine_pose(&pose, &inliers, &map, &rc, None)?;
        pose = r.pose;
        refined = Some(r);
    }
    // Sensor-to-map transform of the raw cloud.
    let full = pose * Isometry3::from_parts(Default::default(), leveling);
    let (roll, pitch, yaw) = full.rotation.euler_angles();
    let t = full.translation.vector;

    let mut text = String::from("# sensor-to-map pose\n");
    let b = &coarse.pose;
    let _ = writeln!(
        text,
        "coarse theta {:+.9} x {:+.9} y {:+.9} z {:+.9} inliers {} nodes {} upper_bound {}",
        b.theta,
        b.x,
        b.y,
        b.z,
        coarse.inliers,
        coarse.nodes_expanded,
        coarse.remaining_upper.max(coarse.coarse_inliers)
    );
    let _ = writeln!(
        text,
        "pose x {:+.9} y {:+.9} z {:+.9} roll {:+.9} pitch {:+.9} yaw {:+.9}",
        t.x, t.y, t.z, roll, pitch, yaw
    );
    if let Some(r) = &refined {
        let _ = writeln!(text, "refine cost {:+.9e} iterations {}", r.cost, r.iterations);
    }
    let inliers = points
        .iter()
        .filter(|p| map.distance(&(pose * Point3::from(**p)).coords) <= cfg.eps)
        .count();
    let _ = writeln!(text, "inliers {inliers} of {}", points.len());

    let mut out = OutDir::new(args.out.as_deref())?;
    out.write("pose.txt", &text)?;
    let mut manifest = RunManifest::new("reloc", 0);
    manifest
        .input("map", map.to_text())
        .input("cloud", reloc::map::cloud_text(&points))
        .input("z_star", args.z_star)
        .input("eps", args.eps)
        .input("refine", !args.no_refine);
    manifest.status = "ok".into();
    manifest.stat("inliers", inliers).stat("nodes", coarse.nodes_expanded);
    out.finish(manifest, &[("total_wall_s", started.elapsed())])?;
    print!("{text}");
    Ok(())
}

fn with_path(e: reloc::RelocError, path: &Path) -> CliError {
    match e {
        reloc::RelocError::Io(source) => CliError::io(path, source),
        other => other.into(),
    }
}

pub fn premotion_build(args: &BuildArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let (grid, modes) = grid_of(&args.grid)?;
    let params = resolve_robot(args.robot.robot.as_deref(), modes[0])?;
    if modes.iter().any(|m| (*m == JumpMode::Humanoid) != (params.kind == RobotKind::Humanoid)) {
        return Err(CliError::Usage(format!("robot `{}` cannot run every requested mode", params.name)));
    }
    let (cold, _) = de_configs(&args.robot)?;
    let partial = if args.out.join(premotion::INDEX_FILE).exists() {
        Some(PreMotionLibrary::load(&args.out)?)
    } else {
        None
    };
    let req = BuildRequest {
        grid,
        modes: modes.clone(),
        config: cold.with_seed(args.seed),
        params: params.clone(),
        options: SetupOptions::default(),
    };
    let report = premotion::build(&req, partial);

    let mut out = OutDir::new(Some(&args.out))?;
    report.library.save(&args.out)?;
    let mut failures = String::from("x,y,z,mode,reason\n");
    for f in &report.failures {
        let _ = writeln!(
            failures,
            "{:.6},{:.6},{:.6},{},\"{}\"",
            f.target.x,
            f.target.y,
            f.target.z,
            f.mode.name(),
            f.reason.replace('"', "'")
        );
    }
    out.write("failures.csv", &failures)?;
    let mut manifest = RunManifest::new("premotion build", args.seed);
    manifest
        .input("grid", format!("{:?} {:?} {}", grid.lower, grid.upper, grid.step))
        .input("modes", modes.iter().map(|m| m.name()).collect::<Vec<_>>().join(","))
        .input("robot", params.to_toml_string())
        .input("optimizer", format!("{cold:?}"));
    manifest.status = "ok".into();
    manifest
        .stat("entries", report.library.len())
        .stat("solved", report.solved)
        .stat("reused", report.reused)
        .stat("failed", report.failures.len());
    out.finish(manifest, &[("total_wall_s", started.elapsed())])?;
    println!(
        "library at {}: {} entries ({} solved now, {} kept, {} failed)",
        args.out.display(),
        report.library.len(),
        report.solved,
        report.reused,
        report.failures.len()
    );
    Ok(())
}

pub fn premotion_stats(args: &StatsArgs) -> Result<(), CliError> {
    let lib = PreMotionLibrary::load(&args.library)?;
    let s = lib.stats();
    println!("entries {}", s.entries);
    for (m, n) in &s.per_mode {
        println!("mode {} {}", m.name(), n);
    }
    println!("mean_fitness {:.6e}", s.mean_fitness);
    println!("mean_generations {:.3}", s.mean_generations);
    println!("bytes {}", s.bytes);
    if args.verify {
        let mode = s.per_mode.first().map_or(JumpMode::Omni, |(m, _)| *m);
        let params = resolve_robot(args.robot.robot.as_deref(), mode)?;
        let stale = lib.inconsistent(&params, &SetupOptions::default());
        for (id, f) in &stale {
            println!("stale {id} fitness {f:.6e}");
        }
        if !stale.is_empty() {
            return Err(CliError::BadInput(format!("{} entries no longer evaluate as feasible", stale.len())));
        }
        println!("verified all entries");
    }
    Ok(())
}

pub fn premotion_lookup(args: &LookupArgs) -> Result<(), CliError> {
    let lib = PreMotionLibrary::load(&args.library)?;
    let mode = parse_mode(&args.mode)?;
    let target = target3(&args.target)?;
    match lib.lookup(&target, mode, args.radius) {
        Some(e) => println!(
            "entry {} target {} distance {:.6} fitness {:.6e} generations {}",
            e.id,
            fmt3(&e.target),
            (e.target - target).norm(),
            e.fitness,
            e.generations
        ),
        None => println!("none within {} m", args.radius),
    }
    Ok(())
}
