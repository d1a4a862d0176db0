//! Per-stage timing over horizon lengths.

use crate::run::{run_scenario, RunError};
use crate::scenario::Scenario;
use serde::Serialize;
use std::fmt::Write as _;

/// Published mean stage times in milliseconds for forward walking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceTiming {
    pub nodes: usize,
    pub dt: f64,
    pub mpc_ms: f64,
    pub gradient_ms: f64,
    pub line_search_ms: f64,
}

pub const PAPER_REFERENCE: [ReferenceTiming; 3] = [
    ReferenceTiming {
        nodes: 20,
        dt: 0.05,
        mpc_ms: 8.0,
        gradient_ms: 3.8,
        line_search_ms: 19.5,
    },
    ReferenceTiming {
        nodes: 33,
        dt: 0.033,
        mpc_ms: 13.9,
        gradient_ms: 7.0,
        line_search_ms: 35.9,
    },
    ReferenceTiming {
        nodes: 50,
        dt: 0.02,
        mpc_ms: 25.8,
        gradient_ms: 14.1,
        line_search_ms: 72.8,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub nodes: usize,
    pub dt: f64,
    pub mpc_ms: f64,
    pub gradient_ms: f64,
    pub line_search_ms: f64,
    pub cycles: usize,
    pub reference: Option<ReferenceTiming>,
}

/// Node spacing for `nodes`: the published pairing when there is one,
/// otherwise the base horizon split evenly.
pub fn node_dt(base: &Scenario, nodes: usize) -> f64 {
    PAPER_REFERENCE
        .iter()
        .find(|r| r.nodes == nodes)
        .map(|r| r.dt)
        .unwrap_or_else(|| base.mpc.horizon() / (nodes.max(2) - 1) as f64)
}

/// `base` with `nodes` nodes, and a plant step that divides the node
/// spacing.
pub fn bench_scenario(base: &Scenario, nodes: usize) -> Scenario {
    let mut sc = base.clone();
    sc.mpc.nodes = nodes;
    sc.mpc.dt = node_dt(base, nodes);
    sc.sim_dt = sc.mpc.dt / (sc.mpc.dt / base.sim_dt).ceil();
    sc
}

/// Mean stage times per node count: the MPC column from a bilevel-off run,
/// the gradient and line-search columns from a bilevel-on run.
pub fn benchmark(base: &Scenario, nodes_list: &[usize]) -> Result<Vec<BenchRow>, RunError> {
    if nodes_list.is_empty() {
        return Err(crate::ScenarioError::Invalid("no node counts given".into()).into());
    }
    let mut rows = Vec::with_capacity(nodes_list.len());
    for &nodes in nodes_list {
        let sc = bench_scenario(base, nodes);
        sc.validate()?;
        let (_, off) = run_scenario(&sc, false)?;
        let (_, on) = run_scenario(&sc, true)?;
        rows.push(BenchRow {
            nodes,
            dt: sc.mpc.dt,
            mpc_ms: off.timing.mpc_mean_ms,
            gradient_ms: on.timing.gradient_mean_ms,
            line_search_ms: on.timing.line_search_mean_ms,
            cycles: off.cycles,
            reference: PAPER_REFERENCE.iter().find(|r| r.nodes == nodes).copied(),
        });
    }
    Ok(rows)
}

/// Measured times with the published ones alongside.
pub fn render_table(rows: &[BenchRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5} {:>7} {:>10} {:>14} {:>17}   {:>28}",
        "Nodes", "dt (s)", "MPC (ms)", "Gradient (ms)", "Line Search (ms)", "reference MPC/Grad/LS (ms)"
    );
    for r in rows {
        let reference = r
            .reference
            .map(|p| format!("{}/{}/{}", p.mpc_ms, p.gradient_ms, p.line_search_ms))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:>5} {:>7.3} {:>10.2} {:>14.2} {:>17.2}   {:>28}",
            r.nodes, r.dt, r.mpc_ms, r.gradient_ms, r.line_search_ms, reference
        );
    }
    out
}
