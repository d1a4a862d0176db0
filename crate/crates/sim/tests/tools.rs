use bilevel_mpc::bilevel::{BilevelConfig, LowLevel};
use bilevel_mpc::qp::{solve_qp, CscMatrix, ParamDerivative, ParamJacobians, QpProblem, QpSolution};
use bilevel_mpc::schedule::{ContactPhase, ContactSchedule, LegSchedule};
use bilevel_sim::bench::{bench_scenario, benchmark, render_table, PAPER_REFERENCE};
use bilevel_sim::check::{compare_gradient, grad_check, relative_error, Exclusion, FD_STEP};
use bilevel_sim::{RunError, Scenario, ScenarioError};
use std::path::PathBuf;
use std::process::Command;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(scenario_path(name)).unwrap()
}

#[test]
fn standing_gradient_vanishes() {
    let mut sc = load("stand.json");
    sc.duration = 1.0;
    let report = grad_check(&sc, 3).unwrap();
    assert_eq!(report.samples.len(), 3);
    for s in &report.samples {
        assert!(s.grad_norm < 1e-6, "cycle {}: {}", s.cycle, s.grad_norm);
    }
}

#[test]
fn walking_gradient_matches_differences() {
    let mut sc = load("walk.json");
    sc.duration = 1.5;
    let report = grad_check(&sc, 4).unwrap();
    let kept = report.samples.len() - report.excluded;
    assert!(kept >= 2, "{}", report.render());
    assert!(report.max_rel_error <= 1e-3, "{}", report.render());
    assert!(report.samples.iter().any(|s| s.excluded.is_none() && s.grad_norm > 1e-3));
}

#[test]
fn zero_trials_is_invalid() {
    assert!(grad_check(&load("walk.json"), 0).is_err());
}

/// `min ½z² − (θ − 0.5)z` subject to `z ≤ 0`, evaluated at `θ = 0.5`, where
/// the constraint is active with a zero multiplier.
struct Kink;

fn kink_qp(theta: f64) -> QpProblem {
    QpProblem::new(
        CscMatrix::identity(1),
        vec![-(theta - 0.5)],
        CscMatrix::zeros(0, 1),
        vec![],
        CscMatrix::from_dense(&[vec![1.0]], 1),
        vec![0.0],
    )
    .unwrap()
}

impl LowLevel for Kink {
    type Iterate = (QpProblem, QpSolution);
    type Measurement = ();

    fn rt_iteration(&self, s: &ContactSchedule, m: &(), prev: Option<&Self::Iterate>) -> Result<Self::Iterate, String> {
        self.eval_cost(s, m, prev, 1)
    }

    fn eval_cost(&self, s: &ContactSchedule, _: &(), _: Option<&Self::Iterate>, _: usize) -> Result<Self::Iterate, String> {
        let qp = kink_qp(s.free_values()[0]);
        let sol = solve_qp(&qp, None).map_err(|e| e.to_string())?;
        Ok((qp, sol))
    }

    fn cost(&self, it: &Self::Iterate) -> f64 {
        it.1.cost
    }

    fn jacobians(&self, _: &ContactSchedule, _: &Self::Iterate) -> Result<ParamJacobians, String> {
        Ok(ParamJacobians {
            params: vec![ParamDerivative {
                d_grad: vec![(0, -1.0)],
                ..Default::default()
            }],
        })
    }

    fn qp<'a>(&self, it: &'a Self::Iterate) -> (&'a QpProblem, &'a QpSolution) {
        (&it.0, &it.1)
    }
}

fn one_change(theta: f64) -> ContactSchedule {
    ContactSchedule {
        legs: vec![LegSchedule {
            times: vec![theta],
            frozen: vec![None],
            phase0: ContactPhase::Stance,
            phase_start: 0.0,
            stance_period: 0.3,
            swing_period: 0.3,
        }],
        t_now: 0.0,
        k_min: 0.1,
        k_end: 1.0,
        changes_per_leg: 1,
        swing_protect_fraction: 1.0,
    }
}

#[test]
fn degenerate_qp_is_flagged() {
    let cfg = BilevelConfig::default();
    let (g, fd, excluded) = compare_gradient(&Kink, &one_change(0.5), &(), None, &cfg, FD_STEP);
    assert!(matches!(excluded, Some(Exclusion::Degenerate { rows: 1 })), "{excluded:?}");
    assert_eq!((g.len(), fd.len()), (1, 1));

    // Away from the kink the check is clean: J = −½(θ − 0.5)² below it and
    // zero above.
    let (g, fd, excluded) = compare_gradient(&Kink, &one_change(0.4), &(), None, &cfg, FD_STEP);
    assert_eq!(excluded, None);
    assert!((g[0] - 0.1).abs() < 1e-8, "{g:?}");
    assert!(relative_error(&g, &fd) < 1e-6);
    let (g, fd, excluded) = compare_gradient(&Kink, &one_change(0.7), &(), None, &cfg, FD_STEP);
    assert_eq!(excluded, None);
    assert!(g[0].abs() < 1e-9 && fd[0].abs() < 1e-9);
}

#[test]
fn benchmark_rows_follow_node_counts() {
    let mut base = load("walk.json");
    base.duration = 0.3;
    let rows = benchmark(&base, &[20, 24]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].reference, Some(PAPER_REFERENCE[0]));
    assert_eq!(rows[1].reference, None);
    assert!((rows[1].dt - base.mpc.horizon() / 23.0).abs() < 1e-12);
    for r in &rows {
        assert!(r.mpc_ms > 0.0 && r.gradient_ms > 0.0 && r.line_search_ms > 0.0, "{r:?}");
    }
    let table = render_table(&rows);
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("8/3.8/19.5"));

    let sc = bench_scenario(&base, 33);
    assert!(sc.validate().is_ok());
    assert_eq!(sc.substeps() as f64 * sc.sim_dt, sc.mpc.dt);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bilevel-sim")).args(args).output().unwrap()
}

#[test]
fn error_exit_codes() {
    assert_eq!(RunError::Solver("singular".into()).exit_code(), 3);
    assert_eq!(RunError::Scenario(ScenarioError::Invalid("x".into())).exit_code(), 2);
}

#[test]
fn cli_exit_codes() {
    let dir = std::env::temp_dir().join(format!("bilevel-sim-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let good = dir.join("short.json");
    std::fs::write(&good, r#"{ "name": "short", "duration": 0.2, "pattern": "Trot", "target": [0.0, 0.0] }"#).unwrap();
    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{ "name": "bad", "duration": 0.0, "target": [0.0, 0.0] }"#).unwrap();
    let trace = dir.join("trace.csv");

    let out = cli(&["simulate", good.to_str().unwrap(), "--no-bilevel", "--trace", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"recovered\""));
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 5);

    assert_eq!(cli(&["simulate", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(cli(&["simulate", dir.join("missing.json").to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(cli(&["matrix", good.to_str().unwrap(), "--axis", "z", "--forces", "1"]).status.code(), Some(2));
    std::fs::remove_dir_all(&dir).unwrap();
}
