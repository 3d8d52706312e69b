//! Success rates and search effort over a target grid, cold and warm.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use jumpplan::de::DEConfig;
use jumpplan::grf_profile::{JumpMode, OptVector};
use jumpplan::jump_sim::{JumpSetup, JumpTarget, SetupOptions};
use jumpplan::planner::optimize_jump;
use jumpplan::premotion::{target_seed, PreMotionLibrary};
use jumpplan::robot_model::RobotParams;
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::commands::{de_configs, grid_of, resolve_robot};
use crate::error::CliError;
use crate::manifest::{OutDir, RunManifest};
use crate::BenchArgs;

/// Compass label of a horizontal offset, x forward (N) and y to the left (W).
pub fn direction(p: &Vector3<f64>) -> &'static str {
    const TOL: f64 = 1e-9;
    let sx = if p.x > TOL { 1 } else if p.x < -TOL { -1 } else { 0 };
    let sy = if p.y > TOL { 1 } else if p.y < -TOL { -1 } else { 0 };
    match (sx, sy) {
        (1, 0) => "N",
        (1, -1) => "NE",
        (0, -1) => "E",
        (-1, -1) => "SE",
        (-1, 0) => "S",
        (-1, 1) => "SW",
        (0, 1) => "W",
        (1, 1) => "NW",
        _ => "UP",
    }
}

const TIMING_TABLE: &str = "bench_timing.csv";

const DIRECTIONS: [&str; 9] = ["N", "NE", "E", "SE", "S", "SW", "W", "NW", "UP"];

#[derive(Debug, Clone, Copy)]
struct Attempt {
    feasible: bool,
    /// Generations until the best member became feasible; failures count as
    /// the full budget plus one.
    effort: usize,
    wall: Duration,
}

struct Cell {
    target: Vector3<f64>,
    mode: JumpMode,
    seed: u64,
    cold: Attempt,
    warm: Option<Attempt>,
}

fn attempt(setup: &JumpSetup, warm: Option<&OptVector>, cfg: &DEConfig) -> Attempt {
    let started = Instant::now();
    let censored = cfg.max_gen + 1;
    let (feasible, effort) = match optimize_jump(setup, warm, cfg) {
        Ok((s, _)) => (true, s.generations_to_feasibility().unwrap_or(censored)),
        Err(_) => (false, censored),
    };
    Attempt {
        feasible,
        effort,
        wall: started.elapsed(),
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn opt_num(v: Option<f64>, prec: usize) -> String {
    v.map_or(String::new(), |x| format!("{x:.prec$}"))
}

fn solve_cell(
    target: Vector3<f64>,
    mode: JumpMode,
    seed: u64,
    params: &RobotParams,
    cfgs: &(DEConfig, DEConfig),
    library: Option<&PreMotionLibrary>,
) -> Cell {
    let failed = Attempt {
        feasible: false,
        effort: cfgs.0.max_gen + 1,
        wall: Duration::ZERO,
    };
    let Ok(setup) = JumpSetup::new(JumpTarget::new(target.x, target.y, target.z), mode, params, &SetupOptions::default()) else {
        return Cell { target, mode, seed, cold: failed, warm: None };
    };
    let cold = attempt(&setup, None, &cfgs.0.with_seed(seed));
    let warm = library
        .and_then(|lib| lib.lookup(&target, mode, cfgs.0.radius))
        .map(|e| attempt(&setup, Some(&e.opt), &cfgs.1.with_seed(seed)));
    Cell { target, mode, seed, cold, warm }
}

pub fn run(args: &BenchArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let (grid, modes) = grid_of(&args.grid)?;
    let params = resolve_robot(args.robot.robot.as_deref(), modes[0])?;
    let cfgs = de_configs(&args.robot)?;
    let library = args.library.as_deref().map(PreMotionLibrary::load).transpose()?;

    let jobs: Vec<(Vector3<f64>, JumpMode, u64)> = grid
        .points()
        .into_iter()
        .flat_map(|p| modes.iter().flat_map(move |&m| (0..args.seeds).map(move |k| (p, m, k))))
        .map(|(p, m, k)| (p, m, target_seed(args.seed.wrapping_add(k), &p, m)))
        .collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(p, m, s)| solve_cell(p, m, s, &params, &cfgs, library.as_ref()))
        .collect();

    let mut table = String::from(
        "direction,mode,attempts,cold_success,cold_rate,cold_median_generations,warm_attempts,warm_success,warm_rate,warm_median_generations\n",
    );
    let mut timing = String::from("direction,mode,cold_mean_s,cold_median_s,warm_mean_s,warm_median_s\n");
    for dir in DIRECTIONS {
        for &mode in &modes {
            let group: Vec<&Cell> = cells.iter().filter(|c| c.mode == mode && direction(&c.target) == dir).collect();
            if group.is_empty() {
                continue;
            }
            let warm: Vec<Attempt> = group.iter().filter_map(|c| c.warm).collect();
            let rate = |a: &[Attempt]| {
                let ok = a.iter().filter(|x| x.feasible).count();
                let r = (!a.is_empty()).then(|| 100.0 * ok as f64 / a.len() as f64);
                (ok, r)
            };
            let cold: Vec<Attempt> = group.iter().map(|c| c.cold).collect();
            let (cold_ok, cold_rate) = rate(&cold);
            let (warm_ok, warm_rate) = rate(&warm);
            let effort = |a: &[Attempt]| median(a.iter().map(|x| x.effort as f64).collect());
            let _ = writeln!(
                table,
                "{dir},{},{},{cold_ok},{},{},{},{warm_ok},{},{}",
                mode.name(),
                cold.len(),
                opt_num(cold_rate, 1),
                opt_num(effort(&cold), 1),
                warm.len(),
                opt_num(warm_rate, 1),
                opt_num(effort(&warm), 1)
            );
            let secs = |a: &[Attempt]| a.iter().map(|x| x.wall.as_secs_f64()).collect::<Vec<_>>();
            let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            let _ = writeln!(
                timing,
                "{dir},{},{},{},{},{}",
                mode.name(),
                opt_num(mean(secs(&cold)), 4),
                opt_num(median(secs(&cold)), 4),
                opt_num(mean(secs(&warm)), 4),
                opt_num(median(secs(&warm)), 4)
            );
        }
    }
    let mut detail = String::from("x,y,z,mode,seed,cold_feasible,cold_generations,warm_feasible,warm_generations\n");
    for c in &cells {
        let _ = writeln!(
            detail,
            "{:.6},{:.6},{:.6},{},{},{},{},{},{}",
            c.target.x,
            c.target.y,
            c.target.z,
            c.mode.name(),
            c.seed,
            u8::from(c.cold.feasible),
            c.cold.effort,
            c.warm.map_or(String::new(), |w| u8::from(w.feasible).to_string()),
            c.warm.map_or(String::new(), |w| w.effort.to_string())
        );
    }

    let mut out = OutDir::new(args.out.as_deref())?;
    out.write("bench.csv", &table)?;
    out.write("cells.csv", &detail)?;
    let mut manifest = RunManifest::new("bench", args.seed);
    manifest
        .input("grid", format!("{:?} {:?} {}", grid.lower, grid.upper, grid.step))
        .input("modes", modes.iter().map(|m| m.name()).collect::<Vec<_>>().join(","))
        .input("seeds", args.seeds)
        .input("robot", params.to_toml_string())
        .input("optimizer", format!("{:?}", cfgs.0));
    if let Some(lib) = &library {
        manifest.input("library", lib.index_text(&lib.records_text()));
    }
    manifest.status = "ok".into();
    manifest.stat("attempts", cells.len());
    // Per-direction wall times are not reproducible, so they stay out of bench.csv.
    if let Some(d) = out.path() {
        let p = d.join(TIMING_TABLE);
        std::fs::write(&p, &timing).map_err(|e| CliError::io(&p, e))?;
        manifest.stat("timing_table", TIMING_TABLE);
    }
    out.finish(manifest, &[("total_wall_s", started.elapsed())])?;
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compass_labels() {
        let d = |x, y| direction(&Vector3::new(x, y, 0.3));
        assert_eq!(d(1.0, 0.0), "N");
        assert_eq!(d(0.0, 0.5), "W");
        assert_eq!(d(0.5, 0.5), "NW");
        assert_eq!(d(0.5, -0.5), "NE");
        assert_eq!(d(-0.5, 0.5), "SW");
        assert_eq!(d(-0.5, -0.5), "SE");
        assert_eq!(d(0.0, 0.0), "UP");
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }
}
