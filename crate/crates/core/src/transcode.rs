//! Per-station transcoding: choose one ladder level per tile so the total
//! bit cost fits the station budget and the (optionally significance
//! weighted) total resolution is maximal. This is a multiple-choice knapsack;
//! [`optimize_levels_ga`] solves it with a genetic algorithm and
//! [`optimize_levels_exact`] by enumeration for small instances.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hetnet::{tile_cost, DeliveryBudget, Level, ResolutionLadder};
use crate::scene::TileId;
use crate::significance::SignificanceMap;
use crate::Mode;

/// Largest search space the exact solver will enumerate.
pub const EXACT_SEARCH_LIMIT: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscodeError {
    #[error("tile {0} has no significance weight")]
    MissingWeight(TileId),
    #[error("{levels}^{tiles} assignments exceed the exact-search limit of {EXACT_SEARCH_LIMIT}")]
    TooLarge { tiles: usize, levels: usize },
    #[error("budget of {available_bits} bits cannot carry every tile at the lowest level ({required_bits} bits, short by {deficit_bits})")]
    Infeasible { required_bits: u64, available_bits: u64, deficit_bits: u64 },
    #[error("invalid GA parameters: {0}")]
    InvalidParams(String),
    #[error("level {level} of tile {tile} is not on the ladder")]
    UnknownLevel { tile: TileId, level: Level },
}

/// What one resolution step is worth in the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveUnit {
    /// 1-based ladder index (`l1` = 1, ..., `l5` = 5).
    #[default]
    LevelIndex,
    /// Linear scale fraction of the level.
    Scale,
}

impl ObjectiveUnit {
    fn value(self, ladder: &ResolutionLadder, level: Level) -> f64 {
        match self {
            ObjectiveUnit::LevelIndex => level.index() as f64,
            ObjectiveUnit::Scale => ladder.scale(level),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LevelAssignment {
    levels: BTreeMap<TileId, Level>,
}

impl LevelAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tile: TileId, level: Level) {
        self.levels.insert(tile, level);
    }

    pub fn get(&self, tile: TileId) -> Option<Level> {
        self.levels.get(&tile).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TileId, Level)> + '_ {
        self.levels.iter().map(|(t, l)| (*t, *l))
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn uniform(tiles: impl IntoIterator<Item = TileId>, level: Level) -> Self {
        tiles.into_iter().map(|t| (t, level)).collect()
    }

    pub fn total_bits(&self, ladder: &ResolutionLadder, budget: &DeliveryBudget) -> u64 {
        self.levels.values().map(|l| tile_cost(ladder.scale(*l), budget)).sum()
    }
}

impl FromIterator<(TileId, Level)> for LevelAssignment {
    fn from_iter<I: IntoIterator<Item = (TileId, Level)>>(iter: I) -> Self {
        Self { levels: iter.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism_count: usize,
    pub rng_seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population_size: 64,
            generations: 200,
            crossover_rate: 0.9,
            mutation_rate: 0.05,
            elitism_count: 2,
            rng_seed: 0,
        }
    }
}

impl GaParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), TranscodeError> {
        if self.population_size < 2 {
            return Err(TranscodeError::InvalidParams("population_size must be at least 2".into()));
        }
        if self.elitism_count >= self.population_size {
            return Err(TranscodeError::InvalidParams("elitism_count must be below population_size".into()));
        }
        for (name, rate) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(TranscodeError::InvalidParams(format!("{name} must lie in [0,1]")));
            }
        }
        Ok(())
    }
}

/// One station's transcoding instance, with per-level costs and objective
/// values precomputed. Tiles are held in tile order.
#[derive(Debug, Clone)]
pub struct TranscodeProblem {
    tiles: Vec<TileId>,
    weights: Vec<f64>,
    level_bits: Vec<u64>,
    level_value: Vec<f64>,
    levels: Vec<Level>,
    budget_bits: u64,
}

impl TranscodeProblem {
    /// `items` pairs each tile with its significance weight. In conventional
    /// mode the weights are ignored and every tile counts 1.
    pub fn new(
        items: &[(TileId, f64)],
        ladder: &ResolutionLadder,
        delivery: &DeliveryBudget,
        budget_bits: u64,
        mode: Mode,
        unit: ObjectiveUnit,
    ) -> Self {
        let mut items = items.to_vec();
        items.sort_by_key(|(t, _)| *t);
        items.dedup_by_key(|(t, _)| *t);
        let levels: Vec<Level> = (1..=ladder.len() as u8).map(Level).collect();
        Self {
            tiles: items.iter().map(|(t, _)| *t).collect(),
            weights: items
                .iter()
                .map(|(_, w)| match mode {
                    Mode::Semantic => *w,
                    Mode::Conventional => 1.0,
                })
                .collect(),
            level_bits: levels.iter().map(|l| tile_cost(ladder.scale(*l), delivery)).collect(),
            level_value: levels.iter().map(|l| unit.value(ladder, *l)).collect(),
            levels,
            budget_bits,
        }
    }

    /// Builds the item list from a significance map; every tile must have a
    /// weight.
    pub fn from_map(
        tiles: &[TileId],
        weights: &SignificanceMap,
        ladder: &ResolutionLadder,
        delivery: &DeliveryBudget,
        budget_bits: u64,
        mode: Mode,
        unit: ObjectiveUnit,
    ) -> Result<Self, TranscodeError> {
        let items = tiles
            .iter()
            .map(|&t| match (weights.get(t), mode) {
                (Some(w), _) => Ok((t, w)),
                (None, Mode::Conventional) => Ok((t, 1.0)),
                (None, Mode::Semantic) => Err(TranscodeError::MissingWeight(t)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(&items, ladder, delivery, budget_bits, mode, unit))
    }

    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn budget_bits(&self) -> u64 {
        self.budget_bits
    }

    /// Genes are 0-based level offsets.
    pub fn score(&self, genome: &[u8]) -> f64 {
        genome.iter().zip(&self.weights).map(|(&g, w)| w * self.level_value[g as usize]).sum()
    }

    pub fn bits(&self, genome: &[u8]) -> u64 {
        genome.iter().map(|&g| self.level_bits[g as usize]).sum()
    }

    pub fn score_of(&self, assignment: &LevelAssignment) -> f64 {
        self.score(&self.genome_of(assignment))
    }

    fn genome_of(&self, assignment: &LevelAssignment) -> Vec<u8> {
        self.tiles.iter().map(|t| assignment.get(*t).map_or(0, |l| l.index() - 1)).collect()
    }

    fn to_assignment(&self, genome: &[u8]) -> LevelAssignment {
        self.tiles.iter().zip(genome).map(|(t, &g)| (*t, self.levels[g as usize])).collect()
    }

    fn check_feasible(&self) -> Result<(), TranscodeError> {
        let required = self.level_bits[0] * self.tiles.len() as u64;
        if required > self.budget_bits {
            return Err(TranscodeError::Infeasible {
                required_bits: required,
                available_bits: self.budget_bits,
                deficit_bits: required - self.budget_bits,
            });
        }
        Ok(())
    }

    /// Downgrade one level at a time, always the step losing the least
    /// objective per bit saved, until the genome fits the budget.
    fn repair(&self, genome: &mut [u8]) {
        let mut bits = self.bits(genome);
        while bits > self.budget_bits {
            let loss_per_bit = |i: usize| {
                let g = genome[i] as usize;
                let loss = self.weights[i] * (self.level_value[g] - self.level_value[g - 1]);
                loss / (self.level_bits[g] - self.level_bits[g - 1]).max(1) as f64
            };
            let victim = (0..genome.len())
                .filter(|&i| genome[i] > 0)
                .min_by(|&a, &b| loss_per_bit(a).total_cmp(&loss_per_bit(b)).then(a.cmp(&b)))
                .expect("all-lowest genome is feasible");
            bits -= self.level_bits[genome[victim] as usize] - self.level_bits[genome[victim] as usize - 1];
            genome[victim] -= 1;
        }
    }

    /// Spend leftover budget: repeatedly take the single-level upgrade with
    /// the best objective gain per extra bit that still fits.
    fn fill(&self, genome: &mut [u8]) {
        let top = (self.levels.len() - 1) as u8;
        let mut bits = self.bits(genome);
        loop {
            let mut best: Option<(f64, usize)> = None;
            for (i, &g) in genome.iter().enumerate() {
                if g == top {
                    continue;
                }
                let extra = self.level_bits[g as usize + 1] - self.level_bits[g as usize];
                if bits + extra > self.budget_bits {
                    continue;
                }
                let gain = self.weights[i] * (self.level_value[g as usize + 1] - self.level_value[g as usize]);
                let ratio = gain / extra.max(1) as f64;
                if best.is_none_or(|(r, _)| ratio > r) {
                    best = Some((ratio, i));
                }
            }
            let Some((_, i)) = best else { break };
            bits += self.level_bits[genome[i] as usize + 1] - self.level_bits[genome[i] as usize];
            genome[i] += 1;
        }
    }
}

/// Semantic: `Σ W(t)·u(level_t)`; conventional: `Σ u(level_t)`, where `u` is
/// the level index or scale per `unit`.
pub fn objective(
    assignment: &LevelAssignment,
    weights: &SignificanceMap,
    mode: Mode,
    ladder: &ResolutionLadder,
    unit: ObjectiveUnit,
) -> Result<f64, TranscodeError> {
    let mut total = 0.0;
    for (t, level) in assignment.iter() {
        if !ladder.contains(level) {
            return Err(TranscodeError::UnknownLevel { tile: t, level });
        }
        let w = match mode {
            Mode::Semantic => weights.get(t).ok_or(TranscodeError::MissingWeight(t))?,
            Mode::Conventional => 1.0,
        };
        total += w * unit.value(ladder, level);
    }
    Ok(total)
}

/// Enumerates every assignment. Among optimal ones the lexicographically
/// smallest level vector (in tile order) wins.
pub fn optimize_levels_exact(problem: &TranscodeProblem) -> Result<LevelAssignment, TranscodeError> {
    let n = problem.tile_count();
    let l = problem.level_count();
    let space = (l as u64).checked_pow(n as u32);
    if space.is_none_or(|s| s > EXACT_SEARCH_LIMIT) {
        return Err(TranscodeError::TooLarge { tiles: n, levels: l });
    }
    problem.check_feasible()?;

    let mut genome = vec![0u8; n];
    let mut best = genome.clone();
    let mut best_score = problem.score(&genome);
    let top = (l - 1) as u8;
    'outer: loop {
        // odometer: last tile varies fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                break 'outer;
            }
            pos -= 1;
            if genome[pos] < top {
                genome[pos] += 1;
                break;
            }
            genome[pos] = 0;
        }
        if problem.bits(&genome) <= problem.budget_bits {
            let s = problem.score(&genome);
            if s > best_score {
                best_score = s;
                best.copy_from_slice(&genome);
            }
        }
    }
    Ok(problem.to_assignment(&best))
}

fn tournament<'a>(pop: &'a [(Vec<u8>, f64)], rng: &mut ChaCha8Rng) -> &'a [u8] {
    const SIZE: usize = 3;
    let mut best = rng.gen_range(0..pop.len());
    for _ in 1..SIZE {
        let c = rng.gen_range(0..pop.len());
        if pop[c].1 > pop[best].1 || (pop[c].1 == pop[best].1 && c < best) {
            best = c;
        }
    }
    &pop[best].0
}

fn rank(pop: &mut [(Vec<u8>, f64)]) {
    pop.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
}

/// Genetic algorithm over level vectors: tournament selection, uniform
/// crossover, per-gene random-reset mutation, elitism, and greedy repair so
/// every individual stays within budget. The best individual is finally
/// topped up with any upgrades that still fit. Deterministic in
/// `params.rng_seed`.
pub fn optimize_levels_ga(problem: &TranscodeProblem, params: &GaParams) -> Result<LevelAssignment, TranscodeError> {
    params.validate()?;
    problem.check_feasible()?;
    let n = problem.tile_count();
    if n == 0 {
        return Ok(LevelAssignment::new());
    }
    let levels = problem.level_count() as u8;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);

    let mut seeded = vec![0u8; n];
    problem.fill(&mut seeded);
    let mut pop: Vec<(Vec<u8>, f64)> = Vec::with_capacity(params.population_size);
    pop.push((seeded.clone(), problem.score(&seeded)));
    pop.push((vec![0u8; n], problem.score(&vec![0u8; n])));
    while pop.len() < params.population_size {
        let mut g: Vec<u8> = (0..n).map(|_| rng.gen_range(0..levels)).collect();
        problem.repair(&mut g);
        problem.fill(&mut g);
        let s = problem.score(&g);
        pop.push((g, s));
    }
    pop.truncate(params.population_size);
    rank(&mut pop);

    for _ in 0..params.generations {
        let mut next: Vec<(Vec<u8>, f64)> = pop[..params.elitism_count].to_vec();
        let mut seen: HashSet<Vec<u8>> = next.iter().map(|(g, _)| g.clone()).collect();
        while next.len() < params.population_size {
            let a = tournament(&pop, &mut rng);
            let b = tournament(&pop, &mut rng);
            let mut child: Vec<u8> = if rng.gen::<f64>() < params.crossover_rate {
                a.iter().zip(b).map(|(&x, &y)| if rng.gen::<bool>() { x } else { y }).collect()
            } else {
                a.to_vec()
            };
            for g in child.iter_mut() {
                if rng.gen::<f64>() < params.mutation_rate {
                    *g = rng.gen_range(0..levels);
                }
            }
            problem.repair(&mut child);
            problem.fill(&mut child);
            if !seen.insert(child.clone()) {
                // Duplicate: replace with a random immigrant to keep diversity.
                child = (0..n).map(|_| rng.gen_range(0..levels)).collect();
                problem.repair(&mut child);
                problem.fill(&mut child);
                seen.insert(child.clone());
            }
            let s = problem.score(&child);
            next.push((child, s));
        }
        pop = next;
        rank(&mut pop);
    }

    let mut best = pop.swap_remove(0).0;
    problem.fill(&mut best);
    debug_assert!(problem.bits(&best) <= problem.budget_bits);
    Ok(problem.to_assignment(&best))
}

/// Mean level index per equal-width significance bucket spanning the
/// minimum to maximum weight of the assigned tiles. Empty buckets are `None`.
pub fn avg_level_by_significance(
    assignment: &LevelAssignment,
    weights: &SignificanceMap,
    bucket_count: usize,
) -> Vec<Option<f64>> {
    let bucket_count = bucket_count.max(1);
    let pairs: Vec<(f64, f64)> =
        assignment.iter().map(|(t, l)| (weights.weight_or_zero(t), l.index() as f64)).collect();
    let mut sums = vec![(0.0, 0usize); bucket_count];
    if pairs.is_empty() {
        return vec![None; bucket_count];
    }
    let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bucket_count as f64;
    for (w, level) in pairs {
        let b = if width > 0.0 { (((w - lo) / width) as usize).min(bucket_count - 1) } else { 0 };
        sums[b].0 += level;
        sums[b].1 += 1;
    }
    sums.into_iter().map(|(s, c)| (c > 0).then(|| s / c as f64)).collect()
}
