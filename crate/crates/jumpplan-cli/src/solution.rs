//! Text record of an optimized jump, enough to rebuild and re-simulate it.

use std::fmt::Write as _;

use jumpplan::grf_profile::{JumpMode, OptVector};
use jumpplan::jump_sim::{JumpTarget, Obstacle};
use nalgebra::Vector3;

use crate::error::CliError;

const HEADER: &str = "# jumpplan solution v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionRecord {
    pub robot: String,
    pub target: JumpTarget,
    pub obstacle: Option<Obstacle>,
    pub opt: OptVector,
    pub fitness: f64,
    pub generations: usize,
    pub generations_to_feasibility: Option<usize>,
    pub warm: bool,
}

fn floats(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| format!("{x:+.17e}")).collect::<Vec<_>>().join(" ")
}

impl SolutionRecord {
    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER}\n");
        let _ = writeln!(s, "robot {}", self.robot);
        let _ = writeln!(s, "mode {}", self.opt.mode().name());
        let _ = writeln!(s, "target {}", floats(self.target.position.iter().copied()));
        let _ = writeln!(s, "vertical {}", u8::from(self.target.vertical));
        match &self.obstacle {
            Some(o) => {
                let _ = writeln!(s, "obstacle {}", floats(o.to_array()));
            }
            None => s.push_str("obstacle none\n"),
        }
        let _ = writeln!(s, "opt {}", floats(self.opt.to_vec()));
        let _ = writeln!(s, "fitness {:+.17e}", self.fitness);
        let _ = writeln!(s, "generations {}", self.generations);
        match self.generations_to_feasibility {
            Some(g) => {
                let _ = writeln!(s, "generations_to_feasibility {g}");
            }
            None => s.push_str("generations_to_feasibility none\n"),
        }
        let _ = writeln!(s, "warm {}", u8::from(self.warm));
        s
    }

    pub fn parse(text: &str, name: &str) -> Result<Self, CliError> {
        let err = |line: usize, msg: String| CliError::BadInput(format!("{name}:{line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(err(1, format!("expected `{HEADER}`"))),
        }
        let mut fields = std::collections::HashMap::new();
        for (n, line) in lines.filter(|(_, l)| !l.is_empty()) {
            let (k, v) = line.split_once(' ').ok_or_else(|| err(n, format!("malformed line `{line}`")))?;
            fields.insert(k.to_string(), (n, v.trim().to_string()));
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| err(0, format!("missing `{k}`")));
        let nums = |k: &str| -> Result<Vec<f64>, CliError> {
            let (n, v) = get(k)?;
            v.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| err(*n, format!("`{t}`: {e}"))))
                .collect()
        };
        let count = |k: &str| -> Result<usize, CliError> {
            let (n, v) = get(k)?;
            v.parse().map_err(|e| err(*n, format!("`{v}`: {e}")))
        };

        let (mode_line, mode_name) = get("mode")?;
        let mode = JumpMode::parse(mode_name).ok_or_else(|| err(*mode_line, format!("unknown mode `{mode_name}`")))?;
        let t = nums("target")?;
        if t.len() != 3 {
            return Err(err(get("target")?.0, "target needs 3 values".into()));
        }
        let opt_line = get("opt")?.0;
        let opt = OptVector::from_slice(mode, &nums("opt")?).map_err(|e| err(opt_line, e.to_string()))?;
        let obstacle = match get("obstacle")?.1.as_str() {
            "none" => None,
            _ => {
                let line = get("obstacle")?.0;
                let v: [f64; 12] = nums("obstacle")?
                    .try_into()
                    .map_err(|_| err(line, "obstacle needs 12 values".into()))?;
                Some(Obstacle::from_array(&v))
            }
        };
        let gtf = match get("generations_to_feasibility")?.1.as_str() {
            "none" => None,
            _ => Some(count("generations_to_feasibility")?),
        };
        Ok(Self {
            robot: get("robot")?.1.clone(),
            target: JumpTarget {
                position: Vector3::new(t[0], t[1], t[2]),
                yaw: None,
                vertical: count("vertical")? != 0,
            },
            obstacle,
            opt,
            fitness: nums("fitness")?.first().copied().unwrap_or(f64::NAN),
            generations: count("generations")?,
            generations_to_feasibility: gtf,
            warm: count("warm")? != 0,
        })
    }
}
