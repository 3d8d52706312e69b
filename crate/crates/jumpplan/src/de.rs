//! Differential evolution with Latin-hypercube initialization.
//!
//! Every random draw comes from a ChaCha stream derived from the master seed,
//! the generation and the individual, so results do not depend on how many
//! threads evaluate the population.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::FEASIBLE_FITNESS;

#[derive(Debug, Error)]
pub enum DEError {
    #[error("invalid optimizer setting `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("population of {0} is too small for rand/1 mutation (need at least 4)")]
    PopulationTooSmall(usize),
    #[error("failed to read optimizer config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed optimizer config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DEConfig {
    /// Mutation scale.
    pub f: f64,
    /// Crossover probability.
    pub cr: f64,
    /// Probability that a trial vector gets one component reset uniformly.
    pub pmu: f64,
    pub np: usize,
    pub max_gen: usize,
    /// Warm-start neighborhood radius, m.
    pub radius: f64,
    /// Half-width of the warm-start box as a fraction of each bound range.
    pub warm_box: f64,
    /// Stop once feasible and the best fitness improved by less than this
    /// relative amount over `stall_generations`.
    pub stall_tol: f64,
    pub stall_generations: usize,
    pub seed: u64,
}

impl Default for DEConfig {
    fn default() -> Self {
        Self::cold()
    }
}

impl DEConfig {
    /// Settings for a search without an initial guess.
    pub fn cold() -> Self {
        Self {
            f: 0.85,
            cr: 0.75,
            pmu: 0.05,
            np: 20,
            max_gen: 200,
            radius: 0.05,
            warm_box: 0.1,
            stall_tol: 1e-3,
            stall_generations: 15,
            seed: 0,
        }
    }

    /// Settings for a search started around a stored solution.
    pub fn warm() -> Self {
        Self {
            f: 0.9,
            cr: 0.95,
            pmu: 0.5,
            ..Self::cold()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), DEError> {
        let bad = |field, reason: &str| {
            Err(DEError::InvalidConfig {
                field,
                reason: reason.into(),
            })
        };
        if !(self.f > 0.0 && self.f <= 2.0) {
            return bad("f", "must lie in (0, 2]");
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return bad("cr", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.pmu) {
            return bad("pmu", "must lie in [0, 1]");
        }
        if self.np < 4 {
            return bad("np", "must be at least 4");
        }
        if !(self.radius > 0.0) {
            return bad("radius", "must be positive");
        }
        if !(self.warm_box > 0.0) {
            return bad("warm_box", "must be positive");
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DEError> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self, DEError> {
        let text = std::fs::read_to_string(path).map_err(|source| DEError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

/// Box bounds of the decision vector. The first `c_dims` entries are
/// waypoint coordinates, the rest are phase times.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub c_dims: usize,
}

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, c_dims: usize) -> Result<Self, DEError> {
        if lower.len() != upper.len() || lower.is_empty() || c_dims > lower.len() {
            return Err(DEError::InvalidSpace("bound vectors must be non-empty and equally long".into()));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i] && lower[i].is_finite() && upper[i].is_finite())) {
            return Err(DEError::InvalidSpace(format!(
                "dimension {i}: need finite lower < upper, got [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper, c_dims })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, v)| (self.lower[i]..=self.upper[i]).contains(v))
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Box of `frac` of each range on either side of `center`, intersected with this space.
    pub fn around(&self, center: &[f64], frac: f64) -> Result<Self, DEError> {
        let (lower, upper) = (0..self.dim())
            .map(|i| {
                let w = frac * (self.upper[i] - self.lower[i]);
                let c = center[i].clamp(self.lower[i], self.upper[i]);
                ((c - w).max(self.lower[i]), (c + w).min(self.upper[i]))
            })
            .unzip();
        Self::new(lower, upper, self.c_dims)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Latin hypercube sample: along every axis each of the `np` equal strata
/// holds exactly one point.
pub fn lhs_sample(space: &SearchSpace, np: usize, rng: &mut impl rand::Rng) -> Vec<Vec<f64>> {
    let mut pop = vec![vec![0.0; space.dim()]; np];
    let mut strata: Vec<usize> = (0..np).collect();
    for d in 0..space.dim() {
        strata.shuffle(rng);
        let (lo, hi) = (space.lower[d], space.upper[d]);
        let w = (hi - lo) / np as f64;
        for (ind, &k) in pop.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            ind[d] = (lo + w * (k as f64 + u)).min(hi);
        }
    }
    pop
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub members: Vec<Vec<f64>>,
    pub fitness: Vec<f64>,
}

impl Population {
    pub fn evaluate<F: Fn(&[f64]) -> f64 + Sync>(members: Vec<Vec<f64>>, f: &F) -> Self {
        let fitness = members.par_iter().map(|m| f(m)).collect();
        Self { members, fitness }
    }

    /// Index of the best member; ties go to the lowest index.
    pub fn best(&self) -> usize {
        let mut b = 0;
        for (i, &v) in self.fitness.iter().enumerate() {
            if v < self.fitness[b] {
                b = i;
            }
        }
        b
    }

    pub fn best_fitness(&self) -> f64 {
        self.fitness[self.best()]
    }
}

/// rand/1/bin trial vector for `target`, with optional single-component reset.
pub fn trial_vector(pop: &[Vec<f64>], target: usize, cfg: &DEConfig, space: &SearchSpace, rng: &mut impl rand::Rng) -> Vec<f64> {
    let np = pop.len();
    let mut pick = |taken: &[usize]| loop {
        let r = rng.random_range(0..np);
        if !taken.contains(&r) {
            break r;
        }
    };
    let r1 = pick(&[target]);
    let r2 = pick(&[target, r1]);
    let r3 = pick(&[target, r1, r2]);
    let dim = space.dim();
    let jrand = rng.random_range(0..dim);
    let mut trial: Vec<f64> = (0..dim)
        .map(|j| {
            let cross: f64 = rng.random();
            if cross < cfg.cr || j == jrand {
                pop[r1][j] + cfg.f * (pop[r2][j] - pop[r3][j])
            } else {
                pop[target][j]
            }
        })
        .collect();
    let reset: f64 = rng.random();
    if reset < cfg.pmu {
        let j = rng.random_range(0..dim);
        trial[j] = rng.random_range(space.lower[j]..=space.upper[j]);
    }
    space.clamp(&mut trial);
    trial
}

/// One generation: mutation, crossover, reset, clamping and greedy selection
/// (ties keep the incumbent).
pub fn de_step<F: Fn(&[f64]) -> f64 + Sync>(
    pop: &Population,
    cfg: &DEConfig,
    space: &SearchSpace,
    generation: usize,
    f: &F,
) -> Result<Population, DEError> {
    let np = pop.members.len();
    if np < 4 {
        return Err(DEError::PopulationTooSmall(np));
    }
    let trials: Vec<Vec<f64>> = (0..np)
        .map(|i| {
            let mut rng = stream(cfg.seed, 1 + (generation * np + i) as u64);
            trial_vector(&pop.members, i, cfg, space, &mut rng)
        })
        .collect();
    let scored = Population::evaluate(trials, f);
    let mut next = pop.clone();
    for i in 0..np {
        if scored.fitness[i] < pop.fitness[i] {
            next.members[i] = scored.members[i].clone();
            next.fitness[i] = scored.fitness[i];
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DEOutcome {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    /// Generations run after initialization.
    pub generations: usize,
    /// First generation whose best member was feasible (0 = initial population).
    pub generations_to_feasibility: Option<usize>,
    /// Best fitness after initialization and after every generation.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

impl DEOutcome {
    pub fn feasible(&self) -> bool {
        self.best_fitness < FEASIBLE_FITNESS
    }
}

/// Minimizes `f` over `space`, starting from a Latin hypercube sample of `init`.
pub fn optimize<F: Fn(&[f64]) -> f64 + Sync>(
    space: &SearchSpace,
    init: &SearchSpace,
    cfg: &DEConfig,
    f: &F,
) -> Result<DEOutcome, DEError> {
    cfg.validate()?;
    if init.dim() != space.dim() {
        return Err(DEError::InvalidSpace("initial box dimension differs from the search space".into()));
    }
    let mut members = lhs_sample(init, cfg.np, &mut stream(cfg.seed, 0));
    for m in &mut members {
        space.clamp(m);
    }
    let mut pop = Population::evaluate(members, f);
    let mut history = vec![pop.best_fitness()];
    let mut to_feasible = (history[0] < FEASIBLE_FITNESS).then_some(0);
    let mut generation = 0;
    while generation < cfg.max_gen {
        if to_feasible.is_some() && history.len() > cfg.stall_generations {
            let now = history[history.len() - 1];
            let then = history[history.len() - 1 - cfg.stall_generations];
            if then - now <= cfg.stall_tol * then.abs() {
                break;
            }
        }
        pop = de_step(&pop, cfg, space, generation, f)?;
        generation += 1;
        let best = pop.best_fitness();
        history.push(best);
        if to_feasible.is_none() && best < FEASIBLE_FITNESS {
            to_feasible = Some(generation);
        }
    }
    let b = pop.best();
    Ok(DEOutcome {
        best: pop.members[b].clone(),
        best_fitness: pop.fitness[b],
        generations: generation,
        generations_to_feasibility: to_feasible,
        history,
        evaluations: cfg.np * (generation + 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(dim: usize) -> SearchSpace {
        SearchSpace::new(vec![0.0; dim], vec![1.0; dim], dim).unwrap()
    }

    #[test]
    fn table_settings() {
        let c = DEConfig::cold();
        assert_eq!((c.f, c.cr, c.pmu, c.np, c.max_gen), (0.85, 0.75, 0.05, 20, 200));
        let w = DEConfig::warm();
        assert_eq!((w.f, w.cr, w.pmu, w.np, w.max_gen), (0.9, 0.95, 0.5, 20, 200));
        assert_eq!(c.radius, 0.05);
        assert!(DEConfig { np: 3, ..c }.validate().is_err());
        assert!(DEConfig { f: 0.0, ..c }.validate().is_err());
        assert!(DEConfig { cr: 1.5, ..c }.validate().is_err());
    }

    #[test]
    fn config_from_toml() {
        let c = DEConfig::from_toml_str("f = 0.5\nseed = 9\n").unwrap();
        assert_eq!((c.f, c.seed, c.np), (0.5, 9, 20));
        assert!(DEConfig::from_toml_str("np = 2").is_err());
        assert!(DEConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn lhs_strata_four_by_two() {
        let pop = lhs_sample(&unit(2), 4, &mut stream(1, 0));
        for d in 0..2 {
            let mut cells: Vec<usize> = pop.iter().map(|p| (p[d] * 4.0).floor() as usize).collect();
            cells.sort();
            assert_eq!(cells, vec![0, 1, 2, 3]);
        }
        let one = lhs_sample(&unit(3), 1, &mut stream(2, 0));
        assert!(unit(3).contains(&one[0]));
    }

    #[test]
    fn lhs_pooled_counts_are_equal() {
        let np = 50;
        let space = SearchSpace::new(vec![-2.0, 0.0], vec![3.0, 0.1], 1).unwrap();
        let mut counts = vec![[0usize; 50]; 2];
        for seed in 0..200 {
            for p in lhs_sample(&space, np, &mut stream(seed, 0)) {
                for d in 0..2 {
                    let w = (space.upper[d] - space.lower[d]) / np as f64;
                    let k = (((p[d] - space.lower[d]) / w).floor() as usize).min(np - 1);
                    counts[d][k] += 1;
                }
            }
        }
        assert!(counts.iter().all(|c| c.iter().all(|&n| n == 200)));
    }

    #[test]
    fn degenerate_operator_copies_base_vector() {
        let cfg = DEConfig {
            f: 0.0,
            cr: 1.0,
            pmu: 0.0,
            ..DEConfig::cold()
        };
        let space = unit(3);
        let pop: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 10.0; 3]).collect();
        let mut rng = stream(3, 0);
        for _ in 0..50 {
            let t = trial_vector(&pop, 0, &cfg, &space, &mut rng);
            assert!(pop[1..].iter().any(|p| *p == t));
        }
    }

    #[test]
    fn small_population_rejected() {
        let space = unit(2);
        let pop = Population::evaluate(vec![vec![0.5; 2]; 3], &|x: &[f64]| x[0]);
        assert!(matches!(
            de_step(&pop, &DEConfig::cold(), &space, 0, &|x: &[f64]| x[0]),
            Err(DEError::PopulationTooSmall(3))
        ));
    }

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn sphere_converges() {
        let space = SearchSpace::new(vec![-5.0; 5], vec![5.0; 5], 5).unwrap();
        let cfg = DEConfig {
            stall_generations: usize::MAX / 2,
            ..DEConfig::cold()
        };
        let mean: f64 = (0..20)
            .map(|s| optimize(&space, &space, &cfg.with_seed(s), &sphere).unwrap().best_fitness)
            .sum::<f64>()
            / 20.0;
        assert!(mean < 1e-3, "mean best {mean}");
    }

    #[test]
    fn deterministic_and_monotone() {
        let space = SearchSpace::new(vec![-5.0; 4], vec![5.0; 4], 4).unwrap();
        let cfg = DEConfig::cold().with_seed(11);
        let a = optimize(&space, &space, &cfg, &sphere).unwrap();
        let b = optimize(&space, &space, &cfg, &sphere).unwrap();
        assert_eq!(a, b);
        assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| optimize(&space, &space, &cfg, &sphere).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn warm_box_is_clipped() {
        let space = SearchSpace::new(vec![0.0, -1.0], vec![1.0, 1.0], 1).unwrap();
        let b = space.around(&[0.05, 0.0], 0.1).unwrap();
        assert_eq!(b.lower, vec![0.0, -0.2]);
        assert!((b.upper[0] - 0.15).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn step_stays_in_bounds(seed in 0u64..1000, gen in 0usize..50) {
            let space = SearchSpace::new(vec![-1.0, 0.0, 2.0], vec![1.0, 0.5, 3.0], 2).unwrap();
            let f = |x: &[f64]| x.iter().map(|v| v.sin()).sum::<f64>();
            let pop = Population::evaluate(lhs_sample(&space, 8, &mut stream(seed, 0)), &f);
            let cfg = DEConfig { f: 2.0, pmu: 0.5, np: 8, ..DEConfig::cold() }.with_seed(seed);
            let next = de_step(&pop, &cfg, &space, gen, &f).unwrap();
            prop_assert!(next.members.iter().all(|m| space.contains(m)));
            prop_assert!(next.best_fitness() <= pop.best_fitness());
            for i in 0..8 {
                prop_assert!(next.fitness[i] <= pop.fitness[i]);
            }
        }
    }
}
