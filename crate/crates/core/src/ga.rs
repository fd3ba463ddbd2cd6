//! Real-coded genetic algorithm minimizing the objective over resistivity
//! fields.
//!
//! One generation: evaluate unscored individuals (in parallel), copy the
//! `elite_count` best unchanged, then refill with blend-crossover children and
//! mutation children of tournament-selected parents. All random draws happen
//! sequentially in a fixed order, so the result does not depend on how the
//! evaluation is scheduled.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ResistivityField;
use crate::objective::{Objective, ObjectiveValue};
use crate::recon::{ReconResult, Termination, TraceRow};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: Vec<f64>,
    /// Objective of `genome`, unset until evaluated.
    pub fitness: Option<ObjectiveValue>,
}

impl Individual {
    pub fn new(genome: Vec<f64>) -> Self {
        Self { genome, fitness: None }
    }

    pub fn total(&self) -> Option<f64> {
        self.fitness.map(|f| f.total)
    }
}

pub type Population = Vec<Individual>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitMode {
    /// Genes uniform in the bounds; a warm start becomes individual 0.
    Uniform,
    /// Every individual is the warm start times `exp(spread·N(0,1))` per gene;
    /// individual 0 is the warm start itself. Falls back to uniform without a
    /// warm start.
    AroundWarmStart { spread: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub crossover_fraction: f64,
    /// Gaussian step as a fraction of `rho_max - rho_min`.
    pub mutation_sigma: f64,
    /// Per-gene mutation probability; `None` means `1 / n_genes`.
    pub mutation_rate: Option<f64>,
    /// Blend factor range is `[-blend_extension, 1 + blend_extension]`.
    pub blend_extension: f64,
    pub elite_count: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub stability_tol: f64,
    pub stability_window: usize,
    pub objective_tol: f64,
    pub seed: u64,
    pub init: InitMode,
    /// Keep a copy of the best genome every this many generations; 0 = never.
    pub snapshot_interval: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 200,
            max_generations: 300,
            crossover_fraction: 0.8,
            mutation_sigma: 0.05,
            mutation_rate: None,
            blend_extension: 0.25,
            elite_count: 2,
            rho_min: 0.2,
            rho_max: 5.0,
            stability_tol: 1e-4,
            stability_window: 20,
            objective_tol: 1e-6,
            seed: 0,
            init: InitMode::Uniform,
            snapshot_interval: 0,
        }
    }
}

impl GaConfig {
    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.rho_min > 0.0 && self.rho_min <= self.rho_max && self.rho_max.is_finite()) {
            return fail(format!("bounds must satisfy 0 < rho_min <= rho_max, got [{}, {}]", self.rho_min, self.rho_max));
        }
        if self.population_size == 0 {
            return fail("population_size must be positive".into());
        }
        if self.elite_count == 0 || self.elite_count >= self.population_size {
            return fail(format!(
                "elite_count must be in 1..population_size, got {} with population {}",
                self.elite_count, self.population_size
            ));
        }
        if !(0.0..=1.0).contains(&self.crossover_fraction) {
            return fail(format!("crossover_fraction must be in [0, 1], got {}", self.crossover_fraction));
        }
        if !(self.mutation_sigma >= 0.0 && self.mutation_sigma.is_finite()) {
            return fail(format!("mutation_sigma must be non-negative, got {}", self.mutation_sigma));
        }
        if let Some(p) = self.mutation_rate {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("mutation_rate must be in [0, 1], got {p}"));
            }
        }
        if !(self.blend_extension >= 0.0) {
            return fail("blend_extension must be non-negative".into());
        }
        if !(self.stability_tol > 0.0 && self.objective_tol > 0.0) {
            return fail("tolerances must be positive".into());
        }
        if self.stability_window == 0 {
            return fail("stability_window must be positive".into());
        }
        if let InitMode::AroundWarmStart { spread } = self.init {
            if !(spread >= 0.0 && spread.is_finite()) {
                return fail(format!("init spread must be non-negative, got {spread}"));
            }
        }
        Ok(())
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.rho_min, self.rho_max)
    }
}

pub fn init_population<R: Rng>(
    config: &GaConfig,
    n_genes: usize,
    seed_individual: Option<&[f64]>,
    rng: &mut R,
) -> Result<Population> {
    config.check()?;
    if let Some(w) = seed_individual {
        if w.len() != n_genes {
            return Err(Error::Domain(format!("warm start has {} genes, expected {n_genes}", w.len())));
        }
    }
    let warm: Option<Vec<f64>> = seed_individual.map(|w| w.iter().map(|&v| config.clamp(v)).collect());
    let mut pop = Vec::with_capacity(config.population_size);
    if let Some(w) = &warm {
        pop.push(Individual::new(w.clone()));
    }
    while pop.len() < config.population_size {
        let genome = match (&warm, config.init) {
            (Some(w), InitMode::AroundWarmStart { spread }) => w
                .iter()
                .map(|&v| {
                    let g: f64 = StandardNormal.sample(rng);
                    config.clamp(v * (spread * g).exp())
                })
                .collect(),
            _ => (0..n_genes)
                .map(|_| {
                    if config.rho_min == config.rho_max {
                        config.rho_min
                    } else {
                        rng.random_range(config.rho_min..=config.rho_max)
                    }
                })
                .collect(),
        };
        pop.push(Individual::new(genome));
    }
    Ok(pop)
}

pub fn mutate<R: Rng>(ind: &Individual, config: &GaConfig, rng: &mut R) -> Individual {
    let n = ind.genome.len();
    let rate = config.mutation_rate.unwrap_or(1.0 / n.max(1) as f64);
    let sigma = config.mutation_sigma * (config.rho_max - config.rho_min);
    let genome = ind
        .genome
        .iter()
        .map(|&v| {
            if rng.random::<f64>() < rate {
                let g: f64 = StandardNormal.sample(rng);
                config.clamp(v + sigma * g)
            } else {
                v
            }
        })
        .collect();
    Individual::new(genome)
}

/// Intermediate crossover with one blend factor per gene; the second child
/// mirrors the first.
pub fn crossover<R: Rng>(
    a: &Individual,
    b: &Individual,
    config: &GaConfig,
    rng: &mut R,
) -> Result<(Individual, Individual)> {
    if a.genome.len() != b.genome.len() {
        return Err(Error::Domain(format!(
            "parents have {} and {} genes",
            a.genome.len(),
            b.genome.len()
        )));
    }
    let ext = config.blend_extension;
    let mut c1 = Vec::with_capacity(a.genome.len());
    let mut c2 = Vec::with_capacity(a.genome.len());
    for (&x, &y) in a.genome.iter().zip(&b.genome) {
        let lambda = -ext + (1.0 + 2.0 * ext) * rng.random::<f64>();
        c1.push(config.clamp(lambda * x + (1.0 - lambda) * y));
        c2.push(config.clamp(lambda * y + (1.0 - lambda) * x));
    }
    Ok((Individual::new(c1), Individual::new(c2)))
}

/// Winner of one comparison: lower total, lower index on ties.
fn duel(totals: &[f64], i: usize, j: usize) -> usize {
    let (lo, hi) = (i.min(j), i.max(j));
    if totals[hi] < totals[lo] {
        hi
    } else {
        lo
    }
}

fn tournament<R: Rng>(totals: &[f64], rng: &mut R) -> usize {
    let i = rng.random_range(0..totals.len());
    let j = rng.random_range(0..totals.len());
    duel(totals, i, j)
}

/// Two size-2 tournaments; lower total wins, ties go to the lower index.
pub fn select<R: Rng>(population: &[Individual], rng: &mut R) -> Result<(usize, usize)> {
    if population.is_empty() {
        return Err(Error::Domain("cannot select from an empty population".into()));
    }
    let totals = population
        .iter()
        .enumerate()
        .map(|(i, ind)| ind.total().ok_or_else(|| Error::Numerical(format!("individual {i} has no fitness"))))
        .collect::<Result<Vec<f64>>>()?;
    Ok((tournament(&totals, rng), tournament(&totals, rng)))
}

fn evaluate_population(objective: &Objective<'_>, pop: &mut [Individual]) -> Result<()> {
    pop.par_iter_mut()
        .filter(|ind| ind.fitness.is_none())
        .try_for_each(|ind| {
            ind.fitness = Some(objective.evaluate(&ind.genome)?);
            Ok(())
        })
}

/// Index of the lowest total, first one on ties.
fn best_index(pop: &[Individual]) -> usize {
    let mut best = 0;
    for (i, ind) in pop.iter().enumerate() {
        if ind.total().unwrap() < pop[best].total().unwrap() {
            best = i;
        }
    }
    best
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let scale = old.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = old.iter().zip(new).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Full GA run. The forward-solve count covers this run only; the model's
/// counters are read before and after rather than reset.
pub fn run_ga(objective: &Objective<'_>, config: &GaConfig, warm_start: Option<&[f64]>) -> Result<ReconResult> {
    run_ga_observed(objective, config, warm_start, |_, _| {})
}

/// [`run_ga`] calling `observe(generation, population)` after each
/// generation is evaluated.
pub fn run_ga_observed<F>(
    objective: &Objective<'_>,
    config: &GaConfig,
    warm_start: Option<&[f64]>,
    mut observe: F,
) -> Result<ReconResult>
where
    F: FnMut(usize, &[Individual]),
{
    config.check()?;
    let start = Instant::now();
    let model = objective.model();
    let solves0 = model.forward_solves();
    let jacobians0 = model.jacobians();
    let n = model.n_elements();
    let mut rng = rng_from_seed(config.seed);

    let mut pop = init_population(config, n, warm_start, &mut rng)?;
    let mut trace = Vec::new();
    let mut objective_trace = Vec::new();
    let mut snapshots = Vec::new();
    let mut solves_seen = solves0;

    let mut record = |pop: &[Individual], generation: usize, trace: &mut Vec<TraceRow>| -> usize {
        let b = best_index(pop);
        let mean = pop.iter().map(|i| i.total().unwrap()).sum::<f64>() / pop.len() as f64;
        let now = model.forward_solves();
        trace.push(TraceRow {
            stage: None,
            generation,
            best_fitness: pop[b].total().unwrap(),
            mean_fitness: mean,
            forward_solves: now - solves_seen,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        solves_seen = now;
        b
    };

    evaluate_population(objective, &mut pop)?;
    observe(0, &pop);
    let mut b = record(&pop, 0, &mut trace);
    objective_trace.push(pop[b].fitness.unwrap());
    if config.snapshot_interval > 0 {
        snapshots.push((0, pop[b].genome.clone()));
    }

    let mut stable_run = 0usize;
    let mut generation = 0usize;
    let termination = loop {
        if pop[b].total().unwrap() < config.objective_tol {
            break Termination::Objective;
        }
        if stable_run >= config.stability_window {
            break Termination::Stability;
        }
        if generation >= config.max_generations {
            break Termination::Budget;
        }
        generation += 1;

        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&i, &j| pop[i].total().unwrap().total_cmp(&pop[j].total().unwrap()));
        let mut next: Population = order[..config.elite_count].iter().map(|&i| pop[i].clone()).collect();

        let n_children = config.population_size - config.elite_count;
        let n_cross = (config.crossover_fraction * n_children as f64).round() as usize;
        while next.len() < config.elite_count + n_cross {
            let (p, q) = select(&pop, &mut rng)?;
            let (c1, c2) = crossover(&pop[p], &pop[q], config, &mut rng)?;
            next.push(c1);
            if next.len() < config.elite_count + n_cross {
                next.push(c2);
            }
        }
        while next.len() < config.population_size {
            let (p, _) = select(&pop, &mut rng)?;
            next.push(mutate(&pop[p], config, &mut rng));
        }

        let prev_best = pop[b].genome.clone();
        pop = next;
        evaluate_population(objective, &mut pop)?;
        observe(generation, &pop);
        b = record(&pop, generation, &mut trace);
        objective_trace.push(pop[b].fitness.unwrap());
        if config.snapshot_interval > 0 && generation % config.snapshot_interval == 0 {
            snapshots.push((generation, pop[b].genome.clone()));
        }
        if relative_change(&prev_best, &pop[b].genome) < config.stability_tol {
            stable_run += 1;
        } else {
            stable_run = 0;
        }
    };

    let best = &pop[b];
    Ok(ReconResult {
        rho_est: ResistivityField::new(best.genome.clone())?,
        objective: best.fitness.unwrap(),
        objective_trace,
        trace,
        termination,
        forward_solve_count: model.forward_solves() - solves0,
        jacobian_count: model.jacobians() - jacobians0,
        wall_time: start.elapsed(),
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;

    fn scored(genome: Vec<f64>, total: f64) -> Individual {
        Individual {
            genome,
            fitness: Some(ObjectiveValue {
                total,
                data_term: total,
                reg_term: 0.0,
            }),
        }
    }

    #[test]
    fn init_is_seeded_and_sized() {
        let cfg = GaConfig {
            population_size: 30,
            ..GaConfig::default()
        };
        let a = init_population(&cfg, 10, None, &mut rng_from_seed(42)).unwrap();
        let b = init_population(&cfg, 10, None, &mut rng_from_seed(42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert!(a.iter().flat_map(|i| &i.genome).all(|&g| (0.2..=5.0).contains(&g)));
    }

    #[test]
    fn degenerate_bounds_give_homogeneous_population() {
        let cfg = GaConfig {
            rho_min: 1.0,
            rho_max: 1.0,
            population_size: 8,
            ..GaConfig::default()
        };
        let pop = init_population(&cfg, 5, None, &mut rng_from_seed(1)).unwrap();
        assert!(pop.iter().flat_map(|i| &i.genome).all(|&g| g == 1.0));
    }

    #[test]
    fn warm_start_is_first_and_clamped() {
        let cfg = GaConfig {
            population_size: 4,
            ..GaConfig::default()
        };
        let pop = init_population(&cfg, 3, Some(&[0.1, 1.0, 9.0]), &mut rng_from_seed(1)).unwrap();
        assert_eq!(pop[0].genome, vec![0.2, 1.0, 5.0]);
        assert!(init_population(&cfg, 4, Some(&[1.0]), &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn population_around_warm_start_stays_close() {
        let cfg = GaConfig {
            population_size: 20,
            init: InitMode::AroundWarmStart { spread: 0.05 },
            ..GaConfig::default()
        };
        let pop = init_population(&cfg, 50, Some(&vec![1.0; 50]), &mut rng_from_seed(3)).unwrap();
        assert!(pop.iter().flat_map(|i| &i.genome).all(|&g| (0.7..1.4).contains(&g)));
    }

    #[test]
    fn config_rejects_bad_values() {
        let bad = [
            GaConfig { rho_min: 0.0, ..GaConfig::default() },
            GaConfig { rho_min: 3.0, rho_max: 2.0, ..GaConfig::default() },
            GaConfig { elite_count: 0, ..GaConfig::default() },
            GaConfig { elite_count: 200, ..GaConfig::default() },
            GaConfig { crossover_fraction: 1.5, ..GaConfig::default() },
            GaConfig { stability_tol: 0.0, ..GaConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.check(), Err(Error::Config(_))), "{cfg:?}");
        }
        GaConfig::default().check().unwrap();
    }

    #[test]
    fn zero_sigma_mutation_is_identity() {
        let cfg = GaConfig {
            mutation_sigma: 0.0,
            mutation_rate: Some(1.0),
            ..GaConfig::default()
        };
        let ind = scored(vec![0.5, 1.0, 2.5], 1.0);
        let out = mutate(&ind, &cfg, &mut rng_from_seed(5));
        assert_eq!(out.genome, ind.genome);
        assert_eq!(out.fitness, None);
    }

    #[test]
    fn full_rate_mutation_touches_every_gene() {
        let cfg = GaConfig {
            mutation_sigma: 0.1,
            mutation_rate: Some(1.0),
            ..GaConfig::default()
        };
        let ind = Individual::new(vec![1.0; 100]);
        let mut rng = rng_from_seed(11);
        let mut changed = 0usize;
        for _ in 0..100 {
            let out = mutate(&ind, &cfg, &mut rng);
            changed += out.genome.iter().filter(|&&g| g != 1.0).count();
        }
        assert_eq!(changed, 10_000);
        let again = mutate(&ind, &cfg, &mut rng_from_seed(11));
        assert_eq!(again, mutate(&ind, &cfg, &mut rng_from_seed(11)));
    }

    #[test]
    fn default_rate_is_one_over_n() {
        let cfg = GaConfig::default();
        let ind = Individual::new(vec![1.0; 50]);
        let mut rng = rng_from_seed(2);
        let trials = 4000;
        let changed: usize = (0..trials)
            .map(|_| mutate(&ind, &cfg, &mut rng).genome.iter().filter(|&&g| g != 1.0).count())
            .sum();
        let mean = changed as f64 / trials as f64;
        assert!((mean - 1.0).abs() < 0.1, "mean mutated genes {mean}");
    }

    #[test]
    fn crossover_of_identical_parents() {
        let cfg = GaConfig::default();
        let a = Individual::new(vec![0.3, 1.7, 4.2]);
        let (c1, c2) = crossover(&a, &a, &cfg, &mut rng_from_seed(0)).unwrap();
        for c in [c1, c2] {
            for (x, y) in c.genome.iter().zip(&a.genome) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn crossover_length_mismatch() {
        let cfg = GaConfig::default();
        let r = crossover(&Individual::new(vec![1.0]), &Individual::new(vec![1.0, 2.0]), &cfg, &mut rng_from_seed(0));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn single_individual_selects_itself() {
        let pop = vec![scored(vec![1.0], 3.0)];
        assert_eq!(select(&pop, &mut rng_from_seed(0)).unwrap(), (0, 0));
    }

    #[test]
    fn unscored_population_cannot_select() {
        let pop = vec![Individual::new(vec![1.0])];
        assert!(select(&pop, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn tournament_of_two_picks_fitter_three_quarters() {
        let pop = vec![scored(vec![1.0], 100.0), scored(vec![2.0], 1.0)];
        let mut rng = rng_from_seed(17);
        let draws = 10_000;
        let mut fitter = 0;
        for _ in 0..draws {
            let (p, q) = select(&pop, &mut rng).unwrap();
            fitter += usize::from(p == 1) + usize::from(q == 1);
        }
        let freq = fitter as f64 / (2 * draws) as f64;
        assert!((freq - 0.75).abs() < 0.015, "frequency {freq}");
    }

    #[test]
    fn ties_go_to_lower_index() {
        let totals = [2.0, 2.0, 1.0];
        assert_eq!(duel(&totals, 1, 0), 0);
        assert_eq!(duel(&totals, 0, 1), 0);
        assert_eq!(duel(&totals, 0, 2), 2);
    }

    proptest! {
        #[test]
        fn operators_respect_bounds(
            a in proptest::collection::vec(0.2f64..5.0, 1..40),
            seed in any::<u64>(),
            sigma in 0.0f64..2.0,
        ) {
            let cfg = GaConfig { mutation_sigma: sigma, mutation_rate: Some(0.5), ..GaConfig::default() };
            let mut rng = rng_from_seed(seed);
            let b: Vec<f64> = a.iter().map(|v| 5.2 - v).collect();
            let (c1, c2) = crossover(&Individual::new(a.clone()), &Individual::new(b), &cfg, &mut rng).unwrap();
            let m = mutate(&c1, &cfg, &mut rng);
            for g in c1.genome.iter().chain(&c2.genome).chain(&m.genome) {
                prop_assert!((0.2..=5.0).contains(g));
            }
        }

        #[test]
        fn convex_blend_stays_between_parents(
            pair in proptest::collection::vec((0.2f64..5.0, 0.2f64..5.0), 1..40),
            seed in any::<u64>(),
        ) {
            let cfg = GaConfig { blend_extension: 0.0, ..GaConfig::default() };
            let a: Vec<f64> = pair.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pair.iter().map(|p| p.1).collect();
            let (c1, c2) = crossover(&Individual::new(a.clone()), &Individual::new(b.clone()), &cfg, &mut rng_from_seed(seed)).unwrap();
            for i in 0..a.len() {
                let (lo, hi) = (a[i].min(b[i]) - 1e-12, a[i].max(b[i]) + 1e-12);
                prop_assert!(c1.genome[i] >= lo && c1.genome[i] <= hi);
                prop_assert!(c2.genome[i] >= lo && c2.genome[i] <= hi);
            }
        }
    }
}
