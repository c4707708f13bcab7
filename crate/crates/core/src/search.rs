//! Pre-training search over a population of sparse masks.
//!
//! Every generation draws a fresh validation batch, scores all candidates
//! on that same batch with the untrained parent weights, keeps the fittest
//! and replaces the rest with freshly sampled masks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_batch, Batch, Dataset};
use crate::error::{Error, Result};
use crate::network::{Network, NetworkSpec};
use crate::numerics::RngStream;
use crate::sparsity::{sample_mask, MaskMode, MaskSet, SparsityRatio};

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub id: u64,
    pub birth_generation: usize,
    pub mask: MaskSet,
    fitness: Option<f64>,
}

impl Candidate {
    pub fn new(id: u64, birth_generation: usize, mask: MaskSet) -> Self {
        Self {
            id,
            birth_generation,
            mask,
            fitness: None,
        }
    }

    pub fn fitness(&self) -> Option<f64> {
        self.fitness
    }

    pub fn set_fitness(&mut self, f: f64) {
        self.fitness = Some(f);
    }

    pub fn clear_fitness(&mut self) {
        self.fitness = None;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    RandomSearch,
}

/// Which evaluations the final winner is chosen from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinnerScope {
    /// Argmax over the last generation's evaluations.
    #[default]
    FinalGeneration,
    /// Best single evaluation seen in any generation.
    AllGenerations,
}

/// Optional early stop: end once the generation-best fitness has improved
/// by less than `tol` for `patience` consecutive generations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Convergence {
    pub tol: f64,
    pub patience: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub population_size: usize,
    pub generations: usize,
    pub eta: SparsityRatio,
    pub mode: MaskMode,
    pub validation_batch_size: usize,
    pub strategy: Strategy,
    pub winner_scope: WinnerScope,
    pub convergence: Option<Convergence>,
}

impl SearchConfig {
    pub fn new(eta: SparsityRatio) -> Self {
        Self {
            population_size: 100,
            generations: 5,
            eta,
            mode: MaskMode::Structured,
            validation_batch_size: 256,
            strategy: Strategy::RandomSearch,
            winner_scope: WinnerScope::FinalGeneration,
            convergence: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::invalid("population_size must be >= 2"));
        }
        if self.generations < 1 {
            return Err(Error::invalid("generations must be >= 1"));
        }
        if self.validation_batch_size < 1 {
            return Err(Error::invalid("validation_batch_size must be >= 1"));
        }
        if let Some(c) = self.convergence {
            if c.patience < 1 || c.tol.is_nan() || c.tol < 0.0 {
                return Err(Error::invalid("convergence needs tol >= 0 and patience >= 1"));
            }
        }
        Ok(())
    }
}

/// Selection rule applied between generations.
pub trait SelectionStrategy: Sync {
    fn select<'a>(&self, population: &'a [Candidate]) -> Result<&'a Candidate>;

    /// Population for the next generation; new members take ids from `next_id`.
    fn next_generation(
        &self,
        population: &[Candidate],
        best: &Candidate,
        ctx: &Resample<'_>,
        generation: usize,
        next_id: &mut u64,
    ) -> Result<Vec<Candidate>>;
}

/// What a strategy needs to draw fresh candidates.
pub struct Resample<'a> {
    pub spec: &'a NetworkSpec,
    pub eta: SparsityRatio,
    pub mode: MaskMode,
    pub rng: &'a RngStream,
}

impl Resample<'_> {
    /// Mask of candidate `id`, drawn from its own child stream.
    pub fn fresh(&self, id: u64, generation: usize) -> Result<Candidate> {
        let mut rng = self.rng.split("candidate").split_index(id);
        let mask = sample_mask(self.spec, self.eta, self.mode, &mut rng)?;
        Ok(Candidate::new(id, generation, mask))
    }
}

/// Elitist random search: keep the single fittest, resample the other `m − 1`.
pub struct RandomSearch;

impl SelectionStrategy for RandomSearch {
    fn select<'a>(&self, population: &'a [Candidate]) -> Result<&'a Candidate> {
        select_best(population)
    }

    fn next_generation(
        &self,
        population: &[Candidate],
        best: &Candidate,
        ctx: &Resample<'_>,
        generation: usize,
        next_id: &mut u64,
    ) -> Result<Vec<Candidate>> {
        let mut next = Vec::with_capacity(population.len());
        let mut elite = best.clone();
        elite.clear_fitness();
        next.push(elite);
        for _ in 1..population.len() {
            next.push(ctx.fresh(*next_id, generation)?);
            *next_id += 1;
        }
        Ok(next)
    }
}

impl Strategy {
    pub fn build(self) -> Box<dyn SelectionStrategy> {
        match self {
            Strategy::RandomSearch => Box::new(RandomSearch),
        }
    }
}

/// Negative mean cross-entropy of the masked, untrained parent on `batch`;
/// stored on the candidate.
pub fn fitness(net: &Network, cand: &mut Candidate, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("fitness: empty validation batch"));
    }
    let f = -net.loss(&cand.mask, &batch.inputs, &batch.labels)?;
    cand.set_fitness(f);
    Ok(f)
}

/// Maximal fitness; ties go to the lowest candidate id.
pub fn select_best(population: &[Candidate]) -> Result<&Candidate> {
    let mut best: Option<(&Candidate, f64)> = None;
    for c in population {
        let f = c
            .fitness
            .ok_or(Error::EvaluationIncomplete { candidate_id: c.id })?;
        best = match best {
            Some((b, bf)) if bf > f || (bf == f && b.id < c.id) => Some((b, bf)),
            _ => Some((c, f)),
        };
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::invalid("select_best: empty population"))
}

/// `[best (fitness cleared)] + (m − 1)` fresh random candidates.
pub fn next_generation(
    population: &[Candidate],
    best: &Candidate,
    ctx: &Resample<'_>,
    generation: usize,
    next_id: &mut u64,
) -> Result<Vec<Candidate>> {
    RandomSearch.next_generation(population, best, ctx, generation, next_id)
}

/// One row of the search history table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub generation: usize,
    pub candidate_id: u64,
    pub birth_generation: usize,
    pub fitness: f64,
    /// Selected as this generation's fittest (and carried into the next).
    pub is_elite: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchHistory {
    pub rows: Vec<HistoryRow>,
}

impl SearchHistory {
    pub fn generations(&self) -> usize {
        self.rows.iter().map(|r| r.generation + 1).max().unwrap_or(0)
    }

    /// Maximum fitness of each generation.
    pub fn best_per_generation(&self) -> Vec<f64> {
        let mut best = vec![f64::NEG_INFINITY; self.generations()];
        for r in &self.rows {
            best[r.generation] = best[r.generation].max(r.fitness);
        }
        best
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: Candidate,
    pub history: SearchHistory,
    pub evaluations: usize,
}

fn evaluate_all(net: &Network, population: &mut [Candidate], batch: &Batch) -> Result<()> {
    population
        .par_iter_mut()
        .map(|c| fitness(net, c, batch).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

/// Runs the generational search with the untrained parent `net`.
pub fn run_search(net: &Network, cfg: &SearchConfig, validation: &Dataset, rng: &RngStream) -> Result<SearchOutcome> {
    cfg.validate()?;
    if validation.is_empty() {
        return Err(Error::invalid("run_search: empty validation set"));
    }
    let strategy = cfg.strategy.build();
    let ctx = Resample {
        spec: net.spec(),
        eta: cfg.eta,
        mode: cfg.mode,
        rng,
    };
    let m = cfg.population_size as u64;
    let mut population = (0..m).map(|id| ctx.fresh(id, 0)).collect::<Result<Vec<_>>>()?;
    let mut next_id = m;
    let mut history = SearchHistory::default();
    let mut evaluations = 0;
    let mut overall: Option<Candidate> = None;
    let mut last_best = f64::NEG_INFINITY;
    let mut stale = 0;

    for g in 0..cfg.generations {
        let batch = sample_batch(
            validation,
            cfg.validation_batch_size,
            &mut rng.split("validation-batch").split_index(g as u64),
        )?;
        evaluate_all(net, &mut population, &batch)?;
        evaluations += population.len();
        let best = strategy.select(&population)?.clone();

        for c in &population {
            history.rows.push(HistoryRow {
                generation: g,
                candidate_id: c.id,
                birth_generation: c.birth_generation,
                fitness: c.fitness.expect("evaluated"),
                is_elite: c.id == best.id,
            });
        }
        let bf = best.fitness.expect("evaluated");
        let improves = match &overall {
            None => true,
            Some(o) => {
                let of = o.fitness.expect("evaluated");
                bf > of || (bf == of && best.id < o.id)
            }
        };
        if improves {
            overall = Some(best.clone());
        }

        let is_last = g + 1 == cfg.generations;
        let converged = match cfg.convergence {
            Some(c) => {
                if bf - last_best < c.tol {
                    stale += 1;
                } else {
                    stale = 0;
                }
                stale >= c.patience
            }
            None => false,
        };
        last_best = bf;
        if is_last || converged {
            let winner = match cfg.winner_scope {
                WinnerScope::FinalGeneration => best,
                WinnerScope::AllGenerations => overall.expect("at least one generation"),
            };
            return Ok(SearchOutcome {
                best: winner,
                history,
                evaluations,
            });
        }
        population = strategy.next_generation(&population, &best, &ctx, g + 1, &mut next_id)?;
    }
    unreachable!("generations >= 1 is validated")
}
