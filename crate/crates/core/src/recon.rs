//! Reconstruction results and the trace CSV shared by every solver.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ResistivityField;
use crate::objective::ObjectiveValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Nr,
    Disturb,
    Ga,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Nr => "nr",
            Stage::Disturb => "disturb",
            Stage::Ga => "ga",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nr" => Ok(Stage::Nr),
            "disturb" => Ok(Stage::Disturb),
            "ga" => Ok(Stage::Ga),
            other => Err(Error::Config(format!("unknown stage `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Best genome stopped moving for the configured window.
    Stability,
    /// Objective dropped below `objective_tol`.
    Objective,
    /// Generation or iteration budget used up.
    Budget,
    StepTol,
    ResidualTol,
    /// Levenberg damping exhausted without an accepted step.
    Stalled,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Stability => "stability",
            Termination::Objective => "objective",
            Termination::Budget => "budget",
            Termination::StepTol => "step-tol",
            Termination::ResidualTol => "residual-tol",
            Termination::Stalled => "stalled",
        })
    }
}

/// One generation (GA) or accepted iteration (NR).
///
/// `forward_solves` is the number of solves spent producing this row, so the
/// column sums to the run total. For NR rows both fitness columns hold the
/// objective of the current iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub stage: Option<Stage>,
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub forward_solves: usize,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub rho_est: ResistivityField,
    /// Final objective under the caller's objective spec.
    pub objective: ObjectiveValue,
    /// GA: best per generation. NR: the squared-form objective it minimizes,
    /// one entry per accepted iterate.
    pub objective_trace: Vec<ObjectiveValue>,
    pub trace: Vec<TraceRow>,
    pub termination: Termination,
    pub forward_solve_count: usize,
    pub jacobian_count: usize,
    pub wall_time: Duration,
    /// Periodic copies of the best genome, `(generation, genome)`.
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

impl ReconResult {
    /// Zeroes every wall-clock field so that outputs are byte-reproducible.
    pub fn strip_timing(&mut self) {
        self.wall_time = Duration::ZERO;
        for row in &mut self.trace {
            row.elapsed_ms = 0.0;
        }
    }
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut w: W) -> Result<()> {
    let staged = rows.iter().any(|r| r.stage.is_some());
    if staged {
        writeln!(w, "stage,generation,best_fitness,mean_fitness,forward_solves,elapsed_ms")?;
    } else {
        writeln!(w, "generation,best_fitness,mean_fitness,forward_solves,elapsed_ms")?;
    }
    for r in rows {
        if staged {
            match r.stage {
                Some(s) => write!(w, "{s},")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(
            w,
            "{},{:e},{:e},{},{:.3}",
            r.generation, r.best_fitness, r.mean_fitness, r.forward_solves, r.elapsed_ms
        )?;
    }
    Ok(())
}

pub fn read_trace_csv<R: BufRead>(r: R) -> Result<Vec<TraceRow>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, "empty trace"))??;
    let staged = match header.trim() {
        "generation,best_fitness,mean_fitness,forward_solves,elapsed_ms" => false,
        "stage,generation,best_fitness,mean_fitness,forward_solves,elapsed_ms" => true,
        other => return Err(Error::parse(1, format!("unexpected trace header `{other}`"))),
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut f: Vec<&str> = line.trim().split(',').collect();
        let stage = if staged {
            if f.is_empty() {
                return Err(Error::parse(lineno, "missing stage"));
            }
            let s = f.remove(0);
            if s.is_empty() {
                None
            } else {
                Some(s.parse().map_err(|e: Error| Error::parse(lineno, e.to_string()))?)
            }
        } else {
            None
        };
        let [g, best, mean, solves, ms] = f.as_slice() else {
            return Err(Error::parse(lineno, format!("expected 5 numeric columns, got {}", f.len())));
        };
        let bad = |what: &str, v: &str| Error::parse(lineno, format!("bad {what} `{v}`"));
        rows.push(TraceRow {
            stage,
            generation: g.parse().map_err(|_| bad("generation", g))?,
            best_fitness: best.parse().map_err(|_| bad("best_fitness", best))?,
            mean_fitness: mean.parse().map_err(|_| bad("mean_fitness", mean))?,
            forward_solves: solves.parse().map_err(|_| bad("forward_solves", solves))?,
            elapsed_ms: ms.parse().map_err(|_| bad("elapsed_ms", ms))?,
        });
    }
    Ok(rows)
}
