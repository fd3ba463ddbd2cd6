//! Regularized Gauss-Newton with Levenberg damping, and the NR → disturbance
//! → GA hybrid.
//!
//! NR minimizes the squared data misfit `‖y − h(ρ)‖² + α_nr Ψ(ρ)` with its own
//! weight `α_nr` and the regularizer kind and reference of the caller's
//! objective spec. Trace rows still report the caller's objective so NR and GA
//! runs are comparable row by row.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{disturb, Disturbance};
use crate::forward::ResistivityField;
use crate::ga::{run_ga, GaConfig};
use crate::objective::{DataNorm, Objective, ObjectiveValue};
use crate::recon::{ReconResult, Stage, Termination, TraceRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NrConfig {
    pub max_iterations: usize,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Damped solves tried per iteration before giving up.
    pub max_rejections: usize,
    /// Stop when `‖δ‖∞ / ‖ρ‖∞` falls below this.
    pub step_tol: f64,
    /// Stop when `‖y − h(ρ)‖ / ‖y‖` falls below this.
    pub residual_tol: f64,
    pub alpha: f64,
    /// On a rejected step, try `δ/2`, `δ/4`, `δ/8` before raising λ.
    pub line_search: bool,
    /// Single undamped-acceptance step, as in one-step linearized solvers.
    pub one_step: bool,
    pub floor: f64,
    /// Homogeneous start value used by the hybrid pipeline.
    pub rho_start: f64,
}

impl Default for NrConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            lambda0: 1e-2,
            lambda_up: 10.0,
            lambda_down: 0.1,
            max_rejections: 12,
            step_tol: 1e-5,
            residual_tol: 1e-9,
            alpha: 1e-5,
            line_search: false,
            one_step: false,
            floor: 1e-6,
            rho_start: 1.0,
        }
    }
}

impl NrConfig {
    pub fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda0 > 0.0) {
            return fail("lambda0 must be positive");
        }
        if !(self.lambda_up > 1.0) {
            return fail("lambda_up must be greater than 1");
        }
        if !(self.lambda_down > 0.0 && self.lambda_down < 1.0) {
            return fail("lambda_down must be in (0, 1)");
        }
        if !(self.step_tol > 0.0 && self.residual_tol > 0.0) {
            return fail("tolerances must be positive");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail("alpha must be non-negative");
        }
        if !(self.floor > 0.0) {
            return fail("floor must be positive");
        }
        if !(self.rho_start > 0.0) {
            return fail("rho_start must be positive");
        }
        if self.max_rejections == 0 {
            return fail("max_rejections must be positive");
        }
        Ok(())
    }
}

/// Outcome of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct NrStep {
    pub rho: Vec<f64>,
    pub accepted: bool,
    /// Damping to use for the next iteration.
    pub lambda: f64,
    /// Squared-form objective at `rho`.
    pub value: ObjectiveValue,
    /// `h(rho)`.
    pub prediction: Vec<f64>,
    /// `‖δ‖∞` of the accepted step, 0 if rejected.
    pub step_inf: f64,
}

/// Normal equations at one linearization point.
pub struct Linearization {
    pub lhs: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// NR bound to an objective.
pub struct Levenberg<'a> {
    squared: Objective<'a>,
    ltl: DMatrix<f64>,
    config: NrConfig,
}

impl<'a> Levenberg<'a> {
    pub fn new(objective: &Objective<'a>, config: &NrConfig) -> Result<Self> {
        config.check()?;
        let squared = objective.with_data_norm(DataNorm::L2Squared).with_alpha(config.alpha);
        let ltl = squared.penalty().normal_matrix();
        Ok(Self {
            squared,
            ltl,
            config: config.clone(),
        })
    }

    pub fn squared_objective(&self) -> &Objective<'a> {
        &self.squared
    }

    /// `JᵀJ + α LᵀL` and `Jᵀr − α LᵀL(ρ − ρ_ref)`; one Jacobian evaluation.
    pub fn linearize(&self, rho: &[f64]) -> Result<Linearization> {
        let (h, j) = self.squared.model().jacobian(rho)?;
        let r = DVector::from_iterator(
            h.values.len(),
            self.squared.measurements().values.iter().zip(&h.values).map(|(y, h)| y - h),
        );
        let alpha = self.config.alpha;
        let lhs = j.tr_mul(&j) + &self.ltl * alpha;
        let reg = DVector::from_vec(self.squared.penalty().half_gradient(rho));
        let rhs = j.tr_mul(&r) - reg * alpha;
        Ok(Linearization { lhs, rhs })
    }

    pub fn delta(&self, lin: &Linearization, lambda: f64) -> Result<Vec<f64>> {
        let n = lin.rhs.len();
        let m = &lin.lhs + DMatrix::identity(n, n) * lambda;
        let chol = m.cholesky().ok_or_else(|| {
            let diag = lin.lhs.diagonal();
            let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
            Error::Numerical(format!(
                "damped normal matrix not positive definite at lambda {lambda:e} (diagonal range {lo:e} .. {hi:e})"
            ))
        })?;
        Ok(chol.solve(&lin.rhs).as_slice().to_vec())
    }

    fn candidate(&self, rho: &[f64], delta: &[f64], scale: f64) -> Vec<f64> {
        rho.iter()
            .zip(delta)
            .map(|(r, d)| (r + scale * d).max(self.config.floor))
            .collect()
    }

    fn evaluate(&self, rho: &[f64]) -> Result<(ObjectiveValue, Vec<f64>)> {
        let h = self.squared.model().forward(rho)?;
        let v = self.squared.compose(rho, &h.values)?;
        Ok((v, h.values))
    }

    /// One outer iteration from `rho` (whose squared objective is `current`):
    /// linearize once, then retry damped solves with growing λ until the
    /// objective strictly decreases.
    pub fn step(&self, rho: &[f64], current: f64, lambda: f64) -> Result<NrStep> {
        let cfg = &self.config;
        let lin = self.linearize(rho)?;
        let mut lambda = lambda;
        for _ in 0..cfg.max_rejections {
            let delta = self.delta(&lin, lambda)?;
            let scales: &[f64] = if cfg.line_search { &[1.0, 0.5, 0.25, 0.125] } else { &[1.0] };
            for &s in scales {
                let cand = self.candidate(rho, &delta, s);
                let (value, prediction) = self.evaluate(&cand)?;
                if value.total < current {
                    let step_inf = rho.iter().zip(&cand).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                    return Ok(NrStep {
                        rho: cand,
                        accepted: true,
                        lambda: lambda * cfg.lambda_down,
                        value,
                        prediction,
                        step_inf,
                    });
                }
            }
            lambda *= cfg.lambda_up;
        }
        let (value, prediction) = self.evaluate(rho)?;
        Ok(NrStep {
            rho: rho.to_vec(),
            accepted: false,
            lambda,
            value,
            prediction,
            step_inf: 0.0,
        })
    }
}

/// Single Levenberg iteration; see [`Levenberg::step`].
pub fn nr_step(objective: &Objective<'_>, config: &NrConfig, rho: &[f64], lambda: f64) -> Result<NrStep> {
    let lev = Levenberg::new(objective, config)?;
    let current = lev.squared.evaluate(rho)?.total;
    lev.step(rho, current, lambda)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn run_nr(objective: &Objective<'_>, config: &NrConfig, rho0: &[f64]) -> Result<ReconResult> {
    let start = Instant::now();
    let lev = Levenberg::new(objective, config)?;
    let model = objective.model();
    let solves0 = model.forward_solves();
    let jacobians0 = model.jacobians();
    let mut solves_seen = solves0;
    let y_norm = objective.measurements().norm();

    let mut rho = ResistivityField::new(rho0.to_vec())?.into_inner();
    let (mut value, mut prediction) = lev.evaluate(&rho)?;
    let mut reported = objective.compose(&rho, &prediction)?;
    let mut objective_trace = vec![value];
    let mut trace = Vec::new();
    let mut push_row = |iteration: usize, total: f64, trace: &mut Vec<TraceRow>| {
        let now = model.forward_solves();
        trace.push(TraceRow {
            stage: None,
            generation: iteration,
            best_fitness: total,
            mean_fitness: total,
            forward_solves: now - solves_seen,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        solves_seen = now;
    };
    push_row(0, reported.total, &mut trace);

    let misfit = |prediction: &[f64]| {
        let r: f64 = objective
            .measurements()
            .values
            .iter()
            .zip(prediction)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        r.sqrt()
    };

    let mut lambda = config.lambda0;
    let mut iteration = 0;
    let termination = loop {
        if iteration >= config.max_iterations || (config.one_step && iteration >= 1) {
            break Termination::Budget;
        }
        if misfit(&prediction) <= config.residual_tol * y_norm {
            break Termination::ResidualTol;
        }
        iteration += 1;
        let step = if config.one_step {
            let lin = lev.linearize(&rho)?;
            let delta = lev.delta(&lin, lambda)?;
            let cand = lev.candidate(&rho, &delta, 1.0);
            let (v, p) = lev.evaluate(&cand)?;
            NrStep {
                step_inf: inf_norm(&delta),
                rho: cand,
                accepted: true,
                lambda,
                value: v,
                prediction: p,
            }
        } else {
            lev.step(&rho, value.total, lambda)?
        };
        if !step.accepted {
            push_row(iteration, reported.total, &mut trace);
            break Termination::Stalled;
        }
        let rel_step = step.step_inf / inf_norm(&step.rho);
        rho = step.rho;
        lambda = step.lambda;
        value = step.value;
        prediction = step.prediction;
        reported = objective.compose(&rho, &prediction)?;
        objective_trace.push(value);
        push_row(iteration, reported.total, &mut trace);
        if rel_step < config.step_tol {
            break Termination::StepTol;
        }
    };

    Ok(ReconResult {
        rho_est: ResistivityField::new(rho)?,
        objective: reported,
        objective_trace,
        trace,
        termination,
        forward_solve_count: model.forward_solves() - solves0,
        jacobian_count: model.jacobians() - jacobians0,
        wall_time: start.elapsed(),
        snapshots: Vec::new(),
    })
}

/// Stages of a hybrid run kept apart for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridResult {
    /// Final GA estimate with the stage-marked combined trace and summed
    /// counters. Its `objective_trace` is the GA stage's.
    pub result: ReconResult,
    pub nr: ReconResult,
    /// The field handed to the GA: disturbed (if requested) and clamped to
    /// the GA bounds.
    pub warm_start: Vec<f64>,
    /// Objective of `warm_start` under the caller's spec.
    pub warm_value: ObjectiveValue,
    pub ga: ReconResult,
}

pub fn run_hybrid(
    objective: &Objective<'_>,
    nr_config: &NrConfig,
    ga_config: &GaConfig,
    disturbance: Option<&Disturbance>,
) -> Result<HybridResult> {
    let start = Instant::now();
    let model = objective.model();
    let rho0 = vec![nr_config.rho_start; model.n_elements()];
    let nr = run_nr(objective, nr_config, &rho0)?;

    let mut trace: Vec<TraceRow> = nr
        .trace
        .iter()
        .map(|r| TraceRow {
            stage: Some(Stage::Nr),
            ..*r
        })
        .collect();
    let nr_ms = start.elapsed().as_secs_f64() * 1e3;

    let mut extra_solves = 0;
    let (warm_start, warm_value) = match disturbance {
        Some(d) => {
            let w: Vec<f64> = disturb(&nr.rho_est, d)
                .into_iter()
                .map(|v| v.clamp(ga_config.rho_min, ga_config.rho_max))
                .collect();
            let before = model.forward_solves();
            let v = objective.evaluate(&w)?;
            extra_solves = model.forward_solves() - before;
            trace.push(TraceRow {
                stage: Some(Stage::Disturb),
                generation: 0,
                best_fitness: v.total,
                mean_fitness: v.total,
                forward_solves: extra_solves,
                elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            (w, v)
        }
        None => {
            let w: Vec<f64> = nr.rho_est.iter().map(|v| v.clamp(ga_config.rho_min, ga_config.rho_max)).collect();
            if w[..] == nr.rho_est[..] {
                (w, nr.objective)
            } else {
                let before = model.forward_solves();
                let v = objective.evaluate(&w)?;
                extra_solves = model.forward_solves() - before;
                (w, v)
            }
        }
    };

    let ga = run_ga(objective, ga_config, Some(&warm_start))?;
    let offset = start.elapsed().as_secs_f64() * 1e3 - ga.wall_time.as_secs_f64() * 1e3;
    // a clamp-only warm start has no row of its own; its solve goes on the
    // first GA row
    let mut unbooked = if disturbance.is_none() { extra_solves } else { 0 };
    trace.extend(ga.trace.iter().map(|r| {
        let row = TraceRow {
            stage: Some(Stage::Ga),
            elapsed_ms: r.elapsed_ms + offset.max(nr_ms),
            forward_solves: r.forward_solves + unbooked,
            ..*r
        };
        unbooked = 0;
        row
    }));

    let result = ReconResult {
        rho_est: ga.rho_est.clone(),
        objective: ga.objective,
        objective_trace: ga.objective_trace.clone(),
        trace,
        termination: ga.termination,
        forward_solve_count: nr.forward_solve_count + extra_solves + ga.forward_solve_count,
        jacobian_count: nr.jacobian_count + ga.jacobian_count,
        wall_time: start.elapsed(),
        snapshots: ga.snapshots.clone(),
    };
    Ok(HybridResult {
        result,
        nr,
        warm_start,
        warm_value,
        ga,
    })
}
