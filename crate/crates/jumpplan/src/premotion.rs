//! Pre-motion library: solved jumps over a grid of targets, stored as a
//! plain-text index plus fixed-width records, queried by nearest target.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constraints::FEASIBLE_FITNESS;
use crate::de::DEConfig;
use crate::grf_profile::{JumpMode, OptVector};
use crate::jump_sim::{JumpSetup, JumpTarget, Obstacle, SetupOptions};
use crate::planner::{evaluate, optimize_jump, PlanError};
use crate::robot_model::RobotParams;

pub const INDEX_FILE: &str = "premotion.index";
pub const RECORD_FILE: &str = "premotion.dat";
/// Default lookup radius, m.
pub const LOOKUP_RADIUS: f64 = 0.05;
/// Targets closer than this (same mode) are the same entry, m.
pub const DUPLICATE_DISTANCE: f64 = 1e-6;

const FORMAT_LINE: &str = "# jumpplan pre-motion index v1";
const OPT_SLOTS: usize = 12;
const FIELD_WIDTH: usize = 24;

#[derive(Debug, Error)]
pub enum PremotionError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{file}:{line}: {msg}")]
    Parse { file: &'static str, line: usize, msg: String },
    #[error("record checksum mismatch: index says {expected}, records hash to {found}")]
    Checksum { expected: String, found: String },
    #[error("{0}")]
    Invariant(String),
}

fn parse_err(file: &'static str, line: usize, msg: impl Into<String>) -> PremotionError {
    PremotionError::Parse {
        file,
        line,
        msg: msg.into(),
    }
}

/// One solved target.
#[derive(Debug, Clone, PartialEq)]
pub struct PreMotionEntry {
    pub id: usize,
    pub target: Vector3<f64>,
    pub yaw: f64,
    pub obstacle: Option<Obstacle>,
    pub opt: OptVector,
    pub fitness: f64,
    pub generations: usize,
}

impl PreMotionEntry {
    pub fn mode(&self) -> JumpMode {
        self.opt.mode()
    }

    fn record_line(&self) -> String {
        let mut s = format!("{:>8} {:<8}", self.id, self.mode().name());
        let num = |s: &mut String, v: f64| {
            let _ = write!(s, " {:>w$}", format!("{v:+.16e}"), w = FIELD_WIDTH);
        };
        for v in [self.target.x, self.target.y, self.target.z, self.yaw, self.fitness] {
            num(&mut s, v);
        }
        let opt = self.opt.to_vec();
        let _ = write!(s, " {:>6} {:>2}", self.generations, opt.len());
        for k in 0..OPT_SLOTS {
            num(&mut s, opt.get(k).copied().unwrap_or(0.0));
        }
        let obstacle = self.obstacle.map(|o| o.to_array());
        let _ = write!(s, " {}", u8::from(obstacle.is_some()));
        for v in obstacle.unwrap_or([0.0; 12]) {
            num(&mut s, v);
        }
        s
    }

    fn parse_record(line: &str, lineno: usize) -> Result<Self, PremotionError> {
        let err = |msg: String| parse_err(RECORD_FILE, lineno, msg);
        let fields: Vec<&str> = line.split_whitespace().collect();
        let expected = 2 + 5 + 2 + OPT_SLOTS + 1 + 12;
        if fields.len() != expected {
            return Err(err(format!("expected {expected} fields, found {}", fields.len())));
        }
        let float = |k: usize| -> Result<f64, PremotionError> {
            fields[k]
                .parse::<f64>()
                .map_err(|e| err(format!("field {} `{}`: {e}", k + 1, fields[k])))
        };
        let int = |k: usize| -> Result<usize, PremotionError> {
            fields[k]
                .parse::<usize>()
                .map_err(|e| err(format!("field {} `{}`: {e}", k + 1, fields[k])))
        };
        let id = int(0)?;
        let mode = JumpMode::parse(fields[1]).ok_or_else(|| err(format!("unknown mode `{}`", fields[1])))?;
        let target = Vector3::new(float(2)?, float(3)?, float(4)?);
        let (yaw, fitness) = (float(5)?, float(6)?);
        let generations = int(7)?;
        let n = int(8)?;
        if n != mode.dim() {
            return Err(err(format!("{} vectors have {} components, record has {n}", mode.name(), mode.dim())));
        }
        let opt_values = (9..9 + n).map(float).collect::<Result<Vec<_>, _>>()?;
        let opt = OptVector::from_slice(mode, &opt_values).map_err(|e| err(e.to_string()))?;
        let obstacle = match fields[9 + OPT_SLOTS] {
            "0" => None,
            "1" => {
                let base = 10 + OPT_SLOTS;
                let mut o = [0.0; 12];
                for (k, slot) in o.iter_mut().enumerate() {
                    *slot = float(base + k)?;
                }
                Some(Obstacle::from_array(&o))
            }
            other => return Err(err(format!("obstacle flag `{other}`"))),
        };
        Ok(Self {
            id,
            target,
            yaw,
            obstacle,
            opt,
            fitness,
            generations,
        })
    }
}

type CellKey = (JumpMode, [i64; 3]);

/// Entries plus a uniform voxel index over their targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PreMotionLibrary {
    entries: Vec<PreMotionEntry>,
    cells: HashMap<CellKey, Vec<usize>>,
}

fn cell_of(p: &Vector3<f64>) -> [i64; 3] {
    std::array::from_fn(|i| (p[i] / LOOKUP_RADIUS).floor() as i64)
}

impl PreMotionLibrary {
    /// Builds the library, renumbering entries in (mode, target) order.
    pub fn new(mut entries: Vec<PreMotionEntry>) -> Result<Self, PremotionError> {
        entries.sort_by(|a, b| {
            a.mode()
                .cmp(&b.mode())
                .then_with(|| a.target.iter().zip(b.target.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
        });
        let mut lib = Self::default();
        for (id, mut e) in entries.into_iter().enumerate() {
            e.id = id;
            lib.push(e)?;
        }
        Ok(lib)
    }

    fn push(&mut self, e: PreMotionEntry) -> Result<(), PremotionError> {
        if !(e.fitness < FEASIBLE_FITNESS) {
            return Err(PremotionError::Invariant(format!("entry {} stores an infeasible vector (fitness {:.3e})", e.id, e.fitness)));
        }
        if let Some(other) = self.nearest(&e.target, e.mode(), DUPLICATE_DISTANCE) {
            return Err(PremotionError::Invariant(format!(
                "entries {} and {} share the target ({:.6}, {:.6}, {:.6})",
                other.id, e.id, e.target.x, e.target.y, e.target.z
            )));
        }
        self.cells.entry((e.mode(), cell_of(&e.target))).or_default().push(self.entries.len());
        self.entries.push(e);
        Ok(())
    }

    pub fn entries(&self) -> &[PreMotionEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, target: &Vector3<f64>, mode: JumpMode) -> bool {
        self.nearest(target, mode, DUPLICATE_DISTANCE).is_some()
    }

    fn nearest(&self, target: &Vector3<f64>, mode: JumpMode, r: f64) -> Option<&PreMotionEntry> {
        let reach = (r / LOOKUP_RADIUS).ceil() as i64;
        let c = cell_of(target);
        let mut best: Option<(f64, &PreMotionEntry)> = None;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let key = (mode, [c[0] + dx, c[1] + dy, c[2] + dz]);
                    for &i in self.cells.get(&key).into_iter().flatten() {
                        let e = &self.entries[i];
                        let d = (e.target - target).norm();
                        if d < r && best.is_none_or(|(bd, be)| d < bd || (d == bd && e.id < be.id)) {
                            best = Some((d, e));
                        }
                    }
                }
            }
        }
        best.map(|(_, e)| e)
    }

    /// Nearest entry of `mode` strictly closer than `r`; ties go to the lower id.
    pub fn lookup(&self, target: &Vector3<f64>, mode: JumpMode, r: f64) -> Option<&PreMotionEntry> {
        self.nearest(target, mode, r)
    }

    /// Same contract as `lookup`, by scanning every entry.
    pub fn lookup_linear(&self, target: &Vector3<f64>, mode: JumpMode, r: f64) -> Option<&PreMotionEntry> {
        self.entries
            .iter()
            .filter(|e| e.mode() == mode)
            .map(|e| ((e.target - target).norm(), e))
            .filter(|(d, _)| *d < r)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)))
            .map(|(_, e)| e)
    }

    /// Record file contents.
    pub fn records_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&e.record_line());
            s.push('\n');
        }
        s
    }

    /// Index manifest for the given record text.
    pub fn index_text(&self, records: &str) -> String {
        let digest = hex::encode(Sha256::digest(records.as_bytes()));
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_LINE}");
        let _ = writeln!(s, "# records: {RECORD_FILE}");
        let _ = writeln!(
            s,
            "# record fields: id mode x y z yaw fitness generations n v1..v{OPT_SLOTS} (zero padded) obstacle_flag o1..o12"
        );
        let _ = writeln!(s, "# count: {}", self.entries.len());
        let _ = writeln!(s, "# sha256: {digest}");
        let _ = writeln!(s, "# id mode x y z");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:>8} {:<8} {:+.6} {:+.6} {:+.6}",
                e.id,
                e.mode().name(),
                e.target.x,
                e.target.y,
                e.target.z
            );
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<(), PremotionError> {
        fs::create_dir_all(dir)?;
        let records = self.records_text();
        fs::write(dir.join(RECORD_FILE), &records)?;
        fs::write(dir.join(INDEX_FILE), self.index_text(&records))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PremotionError> {
        let index = fs::read_to_string(dir.join(INDEX_FILE))?;
        let records = fs::read_to_string(dir.join(RECORD_FILE))?;
        Self::from_texts(&index, &records)
    }

    /// Parses both files. Records are parsed first so that a damaged record
    /// is reported by line before the checksum is compared.
    pub fn from_texts(index: &str, records: &str) -> Result<Self, PremotionError> {
        let mut lines = index.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == FORMAT_LINE => {}
            _ => return Err(parse_err(INDEX_FILE, 1, "missing format line")),
        }
        let mut count = None;
        let mut digest = None;
        let mut listed = Vec::new();
        for (k, line) in lines {
            let lineno = k + 1;
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("count:") {
                    count = Some(v.trim().parse::<usize>().map_err(|e| parse_err(INDEX_FILE, lineno, e.to_string()))?);
                } else if let Some(v) = rest.strip_prefix("sha256:") {
                    digest = Some(v.trim().to_string());
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(parse_err(INDEX_FILE, lineno, format!("expected 5 fields, found {}", f.len())));
            }
            let id = f[0].parse::<usize>().map_err(|e| parse_err(INDEX_FILE, lineno, e.to_string()))?;
            let mode = JumpMode::parse(f[1]).ok_or_else(|| parse_err(INDEX_FILE, lineno, format!("unknown mode `{}`", f[1])))?;
            let xyz = f[2..5]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|e| parse_err(INDEX_FILE, lineno, e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            listed.push((lineno, id, mode, Vector3::new(xyz[0], xyz[1], xyz[2])));
        }
        let count = count.ok_or_else(|| parse_err(INDEX_FILE, 0, "missing `# count:` line"))?;
        let expected = digest.ok_or_else(|| parse_err(INDEX_FILE, 0, "missing `# sha256:` line"))?;

        let mut entries = Vec::with_capacity(count);
        for (k, line) in records.lines().enumerate() {
            entries.push(PreMotionEntry::parse_record(line, k + 1)?);
        }
        if !records.is_empty() && !records.ends_with('\n') {
            return Err(parse_err(RECORD_FILE, entries.len(), "record file is truncated"));
        }
        if entries.len() != count || listed.len() != count {
            return Err(parse_err(
                RECORD_FILE,
                entries.len() + 1,
                format!("index lists {count} entries, found {} index lines and {} records", listed.len(), entries.len()),
            ));
        }
        let found = hex::encode(Sha256::digest(records.as_bytes()));
        if found != expected {
            return Err(PremotionError::Checksum { expected, found });
        }
        for ((lineno, id, mode, target), e) in listed.iter().zip(&entries) {
            if *id != e.id || *mode != e.mode() || (target - e.target).amax() > 1e-6 {
                return Err(parse_err(INDEX_FILE, *lineno, format!("entry {id} disagrees with its record")));
            }
        }
        let mut lib = Self::default();
        for (k, e) in entries.into_iter().enumerate() {
            if e.id != k {
                return Err(parse_err(RECORD_FILE, k + 1, format!("record id {} out of sequence", e.id)));
            }
            lib.push(e)?;
        }
        Ok(lib)
    }

    pub fn stats(&self) -> LibraryStats {
        let mut per_mode: Vec<(JumpMode, usize)> = Vec::new();
        for e in &self.entries {
            match per_mode.iter_mut().find(|(m, _)| *m == e.mode()) {
                Some((_, n)) => *n += 1,
                None => per_mode.push((e.mode(), 1)),
            }
        }
        let n = self.entries.len().max(1) as f64;
        let records = self.records_text();
        LibraryStats {
            entries: self.entries.len(),
            per_mode,
            mean_fitness: self.entries.iter().map(|e| e.fitness).sum::<f64>() / n,
            mean_generations: self.entries.iter().map(|e| e.generations as f64).sum::<f64>() / n,
            bytes: records.len() + self.index_text(&records).len(),
        }
    }

    /// Entries whose stored vector no longer scores feasible under the current code.
    pub fn inconsistent(&self, params: &RobotParams, options: &SetupOptions) -> Vec<(usize, f64)> {
        self.entries
            .par_iter()
            .filter_map(|e| {
                let fitness = setup_for(&e.target, e.yaw, e.obstacle, e.mode(), params, options)
                    .map(|s| evaluate(&s, &e.opt.to_vec()).fitness())
                    .unwrap_or(f64::INFINITY);
                (fitness >= FEASIBLE_FITNESS).then_some((e.id, fitness))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryStats {
    pub entries: usize,
    pub per_mode: Vec<(JumpMode, usize)>,
    pub mean_fitness: f64,
    pub mean_generations: f64,
    /// Size of index plus records, bytes.
    pub bytes: usize,
}

fn setup_for(
    target: &Vector3<f64>,
    yaw: f64,
    obstacle: Option<Obstacle>,
    mode: JumpMode,
    params: &RobotParams,
    options: &SetupOptions,
) -> Result<JumpSetup, crate::jump_sim::SimError> {
    let t = JumpTarget {
        position: *target,
        yaw: (yaw != 0.0).then_some(yaw),
        vertical: false,
    };
    Ok(JumpSetup::new(t, mode, params, options)?.with_obstacle(obstacle))
}

/// Regular grid of targets with inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetGrid {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub step: f64,
}

impl TargetGrid {
    /// Grid points in x-major order, snapped to 1e-9 m; empty when any axis is empty.
    pub fn points(&self) -> Vec<Vector3<f64>> {
        if !(self.step > 0.0) || (0..3).any(|i| !(self.upper[i] >= self.lower[i])) {
            return Vec::new();
        }
        let axis = |i: usize| -> Vec<f64> {
            let n = ((self.upper[i] - self.lower[i]) / self.step + 1e-9).floor() as usize;
            (0..=n).map(|k| ((self.lower[i] + k as f64 * self.step) * 1e9).round() / 1e9).collect()
        };
        let (xs, ys, zs) = (axis(0), axis(1), axis(2));
        let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
        for &x in &xs {
            for &y in &ys {
                out.extend(zs.iter().map(|&z| Vector3::new(x, y, z)));
            }
        }
        out
    }
}

/// Seed of one grid target, independent of where it sits in the work list.
pub fn target_seed(base: u64, target: &Vector3<f64>, mode: JumpMode) -> u64 {
    let mut h = base ^ (mode as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for v in target.iter() {
        let q = (v * 1e6).round() as i64 as u64;
        h = splitmix(h ^ q);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct BuildRequest {
    pub grid: TargetGrid,
    pub modes: Vec<JumpMode>,
    pub config: DEConfig,
    pub params: RobotParams,
    pub options: SetupOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildFailure {
    pub target: Vector3<f64>,
    pub mode: JumpMode,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub library: PreMotionLibrary,
    pub failures: Vec<BuildFailure>,
    /// Targets solved in this run (excludes those taken from the partial library).
    pub solved: usize,
    pub reused: usize,
}

/// Solves every grid target cold and collects the feasible ones. Targets
/// already present in `partial` are kept as they are.
pub fn build(req: &BuildRequest, partial: Option<PreMotionLibrary>) -> BuildReport {
    let partial = partial.unwrap_or_default();
    let todo: Vec<(Vector3<f64>, JumpMode)> = req
        .grid
        .points()
        .into_iter()
        .flat_map(|p| req.modes.iter().map(move |&m| (p, m)))
        .filter(|(p, m)| !partial.contains(p, *m))
        .collect();
    let results: Vec<Result<PreMotionEntry, BuildFailure>> = todo
        .par_iter()
        .map(|(p, mode)| solve_target(req, p, *mode))
        .collect();
    let reused = partial.len();
    let mut entries = partial.entries;
    let mut failures = Vec::new();
    let mut solved = 0;
    for r in results {
        match r {
            Ok(e) => {
                solved += 1;
                entries.push(e);
            }
            Err(f) => failures.push(f),
        }
    }
    let library = PreMotionLibrary::new(entries).expect("grid targets are distinct and feasible");
    BuildReport {
        library,
        failures,
        solved,
        reused,
    }
}

fn solve_target(req: &BuildRequest, p: &Vector3<f64>, mode: JumpMode) -> Result<PreMotionEntry, BuildFailure> {
    let fail = |reason: String| BuildFailure {
        target: *p,
        mode,
        reason,
    };
    let setup = setup_for(p, 0.0, None, mode, &req.params, &req.options).map_err(|e| fail(e.to_string()))?;
    let cfg = req.config.with_seed(target_seed(req.config.seed, p, mode));
    match optimize_jump(&setup, None, &cfg) {
        Ok((sol, _)) => Ok(PreMotionEntry {
            id: 0,
            target: *p,
            yaw: 0.0,
            obstacle: None,
            opt: sol.opt,
            fitness: sol.fitness,
            generations: sol.generations(),
        }),
        Err(PlanError::Infeasible { fitness, .. }) => Err(fail(format!("infeasible, best fitness {fitness:.3e}"))),
        Err(e) => Err(fail(e.to_string())),
    }
}
