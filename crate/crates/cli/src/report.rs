//! Per-run `result.json` and the cross-run comparison report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use eitga_core::experiment::ImageMetrics;
use eitga_core::objective::ObjectiveValue;
use eitga_core::recon::{read_trace_csv, ReconResult, Stage, TraceRow};
use eitga_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const RUN_SCHEMA: &str = "eitga-run/1";
pub const COMPARE_SCHEMA: &str = "eitga-compare/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTotals {
    pub stage: Stage,
    pub rows: usize,
    pub forward_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub solver: String,
    pub seed: u64,
    pub termination: String,
    pub objective: ObjectiveValue,
    pub trace_rows: usize,
    pub forward_solves: usize,
    pub jacobians: usize,
    pub wall_ms: f64,
    pub metrics: Option<ImageMetrics>,
    pub stages: Vec<StageTotals>,
    pub config: RunConfig,
}

impl RunSummary {
    pub fn new(cfg: &RunConfig, r: &ReconResult, metrics: Option<ImageMetrics>, stages: Vec<StageTotals>) -> Self {
        Self {
            schema: RUN_SCHEMA.into(),
            solver: cfg.solver.name().into(),
            seed: cfg.seed,
            termination: r.termination.to_string(),
            objective: r.objective,
            trace_rows: r.trace.len(),
            forward_solves: r.forward_solve_count,
            jacobians: r.jacobian_count,
            wall_ms: r.wall_time.as_secs_f64() * 1e3,
            metrics,
            stages,
            config: cfg.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

pub fn stage_totals(trace: &[TraceRow]) -> Vec<StageTotals> {
    let mut out: Vec<StageTotals> = Vec::new();
    for row in trace {
        let Some(stage) = row.stage else { continue };
        match out.last_mut() {
            Some(t) if t.stage == stage => {
                t.rows += 1;
                t.forward_solves += row.forward_solves;
            }
            _ => out.push(StageTotals {
                stage,
                rows: 1,
                forward_solves: row.forward_solves,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub run: String,
    pub solver: String,
    pub termination: String,
    pub objective: f64,
    pub data_term: f64,
    pub relative_l2_error: Option<f64>,
    pub correlation: Option<f64>,
    pub forward_solves: usize,
    pub jacobians: usize,
    pub wall_ms: f64,
    /// Sum of the `forward_solves` column of the run's trace.csv.
    pub trace_forward_solves: usize,
    pub trace_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema: String,
    pub rows: Vec<CompareRow>,
}

fn load_run(dir: &Path) -> Result<CompareRow> {
    let json_path = dir.join("result.json");
    let text = std::fs::read_to_string(&json_path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", json_path.display()))))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: format!("{}: {e}", json_path.display()),
    })?;
    let schema = value.get("schema").and_then(|v| v.as_str()).unwrap_or("");
    if schema != RUN_SCHEMA {
        return Err(Error::Config(format!(
            "{}: schema `{schema}`, expected `{RUN_SCHEMA}`",
            json_path.display()
        )));
    }
    let summary: RunSummary = serde_json::from_value(value).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("{}: {e}", json_path.display()),
    })?;
    let trace_path = dir.join("trace.csv");
    let file = std::fs::File::open(&trace_path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", trace_path.display()))))?;
    let trace = read_trace_csv(std::io::BufReader::new(file))?;
    let trace_forward_solves: usize = trace.iter().map(|r| r.forward_solves).sum();
    if trace_forward_solves != summary.forward_solves || trace.len() != summary.trace_rows {
        return Err(Error::Domain(format!(
            "{}: trace has {} rows and {} forward solves, result.json says {} and {}",
            dir.display(),
            trace.len(),
            trace_forward_solves,
            summary.trace_rows,
            summary.forward_solves
        )));
    }
    Ok(CompareRow {
        run: dir.display().to_string(),
        solver: summary.solver,
        termination: summary.termination,
        objective: summary.objective.total,
        data_term: summary.objective.data_term,
        relative_l2_error: summary.metrics.map(|m| m.relative_l2_error),
        correlation: summary.metrics.and_then(|m| m.correlation),
        forward_solves: summary.forward_solves,
        jacobians: summary.jacobians,
        wall_ms: summary.wall_ms,
        trace_forward_solves,
        trace_rows: trace.len(),
    })
}

pub fn compare(dirs: &[PathBuf]) -> Result<CompareReport> {
    let rows = dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    Ok(CompareReport {
        schema: COMPARE_SCHEMA.into(),
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

impl CompareReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:<7} {:<12} {:>12} {:>8} {:>8} {:>14} {:>10} {:>12}",
            "run", "solver", "termination", "objective", "rel_l2", "corr", "forward_solves", "jacobians", "wall_ms"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<24} {:<7} {:<12} {:>12.5e} {:>8} {:>8} {:>14} {:>10} {:>12.1}",
                r.run,
                r.solver,
                r.termination,
                r.objective,
                opt(r.relative_l2_error),
                opt(r.correlation),
                r.forward_solves,
                r.jacobians,
                r.wall_ms
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(stage: Stage, solves: usize) -> TraceRow {
        TraceRow {
            stage: Some(stage),
            generation: 0,
            best_fitness: 1.0,
            mean_fitness: 1.0,
            forward_solves: solves,
            elapsed_ms: 0.0,
        }
    }

    #[test]
    fn stage_totals_group_consecutive_rows() {
        let t = vec![row(Stage::Nr, 1), row(Stage::Nr, 2), row(Stage::Disturb, 1), row(Stage::Ga, 10), row(Stage::Ga, 8)];
        let s = stage_totals(&t);
        assert_eq!(s.len(), 3);
        assert_eq!((s[0].rows, s[0].forward_solves), (2, 3));
        assert_eq!((s[2].rows, s[2].forward_solves), (2, 18));
    }
}
