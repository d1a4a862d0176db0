//! Disturbance matrices: the same push at several magnitudes, with the
//! high level on and off.

use crate::run::{run_scenario, RunError, Summary};
use crate::scenario::{Disturbance, Scenario};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Xy,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Xy => "x and y",
        }
    }

    /// Force of magnitude `m` along this axis; `Xy` pushes with `m` on both.
    pub fn force(self, m: f64) -> [f64; 3] {
        match self {
            Axis::X => [m, 0.0, 0.0],
            Axis::Y => [0.0, m, 0.0],
            Axis::Xy => [m, m, 0.0],
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "xy" => Ok(Axis::Xy),
            _ => Err(format!("unknown axis `{s}`, expected x, y or xy")),
        }
    }
}

/// Push timing used when the base scenario has no disturbance.
pub const DEFAULT_PUSH_START: f64 = 1.0;
pub const DEFAULT_PUSH_DURATION: f64 = 0.3;

/// Outcome of one run; `Err` holds the error or panic message.
pub type CellOutcome = Result<Summary, String>;

#[derive(Debug, Clone, Serialize)]
pub struct MatrixCell {
    pub magnitude: f64,
    pub on: CellOutcome,
    pub off: CellOutcome,
}

impl MatrixCell {
    pub fn recovered(&self, bilevel: bool) -> bool {
        let r = if bilevel { &self.on } else { &self.off };
        matches!(r, Ok(s) if s.recovered)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixReport {
    pub axis: Axis,
    pub cells: Vec<MatrixCell>,
}

impl MatrixReport {
    pub fn count(&self, bilevel: bool) -> usize {
        self.cells.iter().filter(|c| c.recovered(bilevel)).count()
    }

    /// Cells recovered with the high level on but not off.
    pub fn on_only(&self) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.recovered(true) && !c.recovered(false))
            .map(|c| c.magnitude)
            .collect()
    }
}

/// `base` with its disturbances replaced by a single push of `magnitude`
/// along `axis`, timed like the first base disturbance.
pub fn cell_scenario(base: &Scenario, axis: Axis, magnitude: f64) -> Scenario {
    let (t_start, duration) = base
        .disturbances
        .first()
        .map(|d| (d.t_start, d.duration))
        .unwrap_or((DEFAULT_PUSH_START, DEFAULT_PUSH_DURATION));
    let mut sc = base.clone();
    sc.name = format!("{} {} {magnitude} N", base.name, axis.label());
    sc.disturbances = vec![Disturbance {
        t_start,
        duration,
        force: axis.force(magnitude),
    }];
    sc
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Runs one scenario, turning errors and panics into a failed cell.
pub fn isolated<F>(f: F) -> CellOutcome
where
    F: FnOnce() -> Result<Summary, RunError>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => Ok(s),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => Err(panic_message(p)),
    }
}

/// Runs every magnitude with the high level on and off. A failing cell is
/// recorded and the rest still run.
pub fn run_matrix(base: &Scenario, axis: Axis, magnitudes: &[f64]) -> Result<MatrixReport, RunError> {
    run_matrix_with(base, axis, magnitudes, |sc, on| run_scenario(sc, on).map(|(_, s)| s))
}

/// [`run_matrix`] with a custom runner.
pub fn run_matrix_with<R>(
    base: &Scenario,
    axis: Axis,
    magnitudes: &[f64],
    runner: R,
) -> Result<MatrixReport, RunError>
where
    R: Fn(&Scenario, bool) -> Result<Summary, RunError> + Sync,
{
    if magnitudes.is_empty() {
        return Err(crate::ScenarioError::Invalid("no magnitudes given".into()).into());
    }
    base.validate()?;
    let jobs: Vec<(usize, bool)> = (0..magnitudes.len()).flat_map(|i| [(i, true), (i, false)]).collect();
    let outcomes: Vec<CellOutcome> = jobs
        .par_iter()
        .map(|&(i, on)| {
            let sc = cell_scenario(base, axis, magnitudes[i]);
            isolated(|| runner(&sc, on))
        })
        .collect();
    let mut it = outcomes.into_iter();
    let cells = magnitudes
        .iter()
        .map(|&magnitude| {
            let on = it.next().expect("one outcome per job");
            let off = it.next().expect("one outcome per job");
            MatrixCell { magnitude, on, off }
        })
        .collect();
    Ok(MatrixReport { axis, cells })
}

/// Recovery counts with one row per axis.
pub fn render_table(reports: &[MatrixReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>16} {:>24}", "Direction", "High-Level Opt.", "Without High-Level Opt.");
    for r in reports {
        let n = r.cells.len();
        let _ = writeln!(
            out,
            "{:<10} {:>16} {:>24}",
            r.axis.label(),
            format!("{}/{n}", r.count(true)),
            format!("{}/{n}", r.count(false))
        );
    }
    out
}

/// One line per cell with both outcomes.
pub fn render_cells(report: &MatrixReport) -> String {
    let show = |o: &CellOutcome| match o {
        Ok(s) => format!(
            "{} (dist {:.3} m, |l| {:.3})",
            if s.recovered { "recovered" } else { "not recovered" },
            s.distance_to_target,
            s.final_momentum_norm
        ),
        Err(e) => format!("failed: {e}"),
    };
    let mut out = String::new();
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{} {} N: on {}; off {}",
            report.axis.label(),
            c.magnitude,
            show(&c.on),
            show(&c.off)
        );
    }
    out
}
