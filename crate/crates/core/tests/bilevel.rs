mod common {
    pub mod toy_oracle;
}

use bilevel_mpc::bilevel::toy::{StaticPlant, ToyProblem};
use bilevel_mpc::bilevel::{
    assemble_gradient, barrier_gradient, line_search, run_bilevel_loop, step_direction, BilevelConfig,
    BilevelError, LowLevel,
};
use bilevel_mpc::qp::{
    differentiate_cost_with, CostGradient, ParamDerivative, ParamJacobians, SensitivityOptions,
};
use bilevel_mpc::schedule::{ContactPhase, ContactSchedule, LegSchedule};
use common::toy_oracle::toy_truth;

fn single_entry(theta: f64, t_now: f64) -> ContactSchedule {
    ContactSchedule {
        legs: vec![LegSchedule {
            times: vec![theta],
            frozen: vec![None],
            phase0: ContactPhase::Stance,
            phase_start: t_now,
            stance_period: 0.3,
            swing_period: 0.3,
        }],
        t_now,
        k_min: 0.1,
        k_end: 1.0,
        changes_per_leg: 1,
        swing_protect_fraction: 1.0,
    }
}

#[test]
fn oracle_gradient_matches_its_own_differences() {
    let p = ToyProblem::default();
    for theta in [0.21, 0.33, 0.47, 0.62, 0.78] {
        let t = toy_truth(&p, theta);
        let h = 1e-6;
        let fd = (toy_truth(&p, theta + h).cost - toy_truth(&p, theta - h).cost) / (2.0 * h);
        assert!((fd - t.grad).abs() <= 1e-6 * (1.0 + t.grad.abs()), "θ={theta}: {fd} vs {}", t.grad);
        assert!(t.max_u < p.u_max);
    }
}

#[test]
fn toy_cost_and_gradient_match_oracle() {
    let p = ToyProblem::default();
    let cfg = BilevelConfig::default();
    for theta in [0.21, 0.33, 0.47, 0.62, 0.78] {
        let mut s = p.schedule();
        s.legs[0].times[0] = theta;
        let it = p.eval_cost(&s, &(), None, 1).unwrap();
        let truth = toy_truth(&p, theta);
        assert!((it.cost - truth.cost).abs() <= 1e-8 * (1.0 + truth.cost), "{} vs {}", it.cost, truth.cost);
        let base = 2 * p.nodes;
        for (j, k) in truth.knots.iter().enumerate() {
            assert!((it.sol.z[base + j] - k).abs() <= 1e-6 * (1.0 + k.abs()));
        }
        let jac = p.jacobians(&s, &it).unwrap();
        let (g, _) = assemble_gradient(&it.qp, &it.sol, &jac, &s, &cfg).unwrap();
        assert!((g[0] - truth.grad).abs() <= 1e-6 * (1.0 + truth.grad.abs()), "{} vs {}", g[0], truth.grad);
    }
}

#[test]
fn forward_and_adjoint_paths_agree_on_toy() {
    let p = ToyProblem::default();
    let s = p.schedule();
    let it = p.eval_cost(&s, &(), None, 1).unwrap();
    let jac = p.jacobians(&s, &it).unwrap();
    let run = |path| {
        let opts = SensitivityOptions {
            path,
            ..SensitivityOptions::default()
        };
        differentiate_cost_with(&it.qp, &it.sol, &jac, &opts).unwrap().gradient
    };
    let (f, a) = (run(CostGradient::Forward), run(CostGradient::Adjoint));
    assert!((f[0] - a[0]).abs() <= 1e-10 * (1.0 + a[0].abs()));
}

#[test]
fn zero_jacobians_give_zero_gradient() {
    let p = ToyProblem::default();
    let s = p.schedule();
    let it = p.eval_cost(&s, &(), None, 1).unwrap();
    let jac = ParamJacobians {
        params: vec![ParamDerivative::default()],
    };
    let (g, _) = assemble_gradient(&it.qp, &it.sol, &jac, &s, &BilevelConfig::default()).unwrap();
    assert_eq!(g, vec![0.0]);
}

#[test]
fn barrier_gradient_of_single_lower_bound() {
    let s = single_entry(1.0, 0.0);
    assert_eq!(s.polytope_rows().a_in.len(), 1);
    assert_eq!(barrier_gradient(&s).unwrap(), vec![-1.0]);
    let p = ToyProblem::default();
    let toy = p.schedule();
    let it = p.eval_cost(&toy, &(), None, 1).unwrap();
    let cfg = BilevelConfig {
        barrier_enabled: true,
        ..BilevelConfig::default()
    };
    let zero = ParamJacobians {
        params: vec![ParamDerivative::default()],
    };
    let (g, _) = assemble_gradient(&it.qp, &it.sol, &zero, &s, &cfg).unwrap();
    assert!((g[0] + cfg.barrier_weight).abs() < 1e-15);
    let on_boundary = single_entry(0.0, 0.0);
    assert!(matches!(
        barrier_gradient(&on_boundary),
        Err(BilevelError::BarrierDomain { .. })
    ));
}

#[test]
fn step_direction_examples() {
    let s = single_entry(1.0, 0.0);
    let p = step_direction(&[0.0], &s, 0.05).unwrap();
    assert!(p[0].abs() < 1e-9);
    let p = step_direction(&[1.0], &s, 0.05).unwrap();
    assert!((p[0] + 0.05).abs() < 1e-9);
    let p = step_direction(&[-1.0], &s, 0.05).unwrap();
    assert!((p[0] - 0.05).abs() < 1e-9);
    // On the lower bound with the gradient pushing into it.
    let s = single_entry(0.0, 0.0);
    let p = step_direction(&[1.0], &s, 0.05).unwrap();
    assert!(p[0].abs() < 1e-9);
    // Two entries: the first at its lower bound, the gap at k_min.
    let mut s = single_entry(0.0, 0.0);
    s.legs[0].times.push(0.1);
    s.legs[0].frozen.push(None);
    let p = step_direction(&[1.0, -1.0], &s, 0.05).unwrap();
    assert!(p[0].abs() < 1e-9, "{p:?}");
    assert!((p[1] - 0.05).abs() < 1e-9, "{p:?}");
    // Opposing pulls on a tight gap: no first-order decrease is available.
    let p = step_direction(&[-1.0, 1.0], &s, 0.05).unwrap();
    assert!((p[1] - p[0]).abs() < 1e-9, "{p:?}");
}

#[test]
fn line_search_picks_grid_minimum_of_quadratic() {
    let s = single_entry(1.0, 0.0);
    let cfg = BilevelConfig::default();
    let target = 1.0 + 0.037;
    let eval = |x: &ContactSchedule| {
        let th = x.legs[0].times[0];
        Some(((th - target).powi(2), ()))
    };
    let base = (1.0f64 - target).powi(2);
    let (step, choice) = line_search(&s, &[2.0 * (1.0 - target)], &[0.05], base, &cfg, eval);
    assert!(step.accepted);
    // Grid points are 1 + 0.005 k; the closest to 1.037 is k = 7.
    assert!((step.alpha_star - 0.7).abs() < 1e-12, "{}", step.alpha_star);
    let (sched, _) = choice.unwrap();
    assert!((sched.legs[0].times[0] - 1.035).abs() < 1e-12);
    // Moving away only worsens the cost.
    let (step, choice) = line_search(&s, &[1.0], &[-0.05], base, &cfg, eval);
    assert!(!step.accepted && choice.is_none());
    // No direction.
    let (step, choice) = line_search(&s, &[0.0], &[0.0], base, &cfg, eval);
    assert!(!step.accepted && choice.is_none());
}

struct ToyRun {
    grads: Vec<f64>,
    truths: Vec<f64>,
    decreases: Vec<(f64, f64)>,
    slacks: Vec<f64>,
    thetas: Vec<f64>,
}

fn run_toy(cfg: &BilevelConfig, cycles: usize) -> ToyRun {
    let p = ToyProblem::default();
    let mut out = ToyRun {
        grads: vec![],
        truths: vec![],
        decreases: vec![],
        slacks: vec![],
        thetas: vec![],
    };
    let sched0 = p.schedule();
    run_bilevel_loop(&p, &mut StaticPlant, &sched0, cfg, true, cycles, |rec| {
        if let Some(step) = rec.step {
            let theta_eval = step_origin(rec.schedule, step);
            out.grads.push(step.grad[0]);
            out.truths.push(toy_truth(&p, theta_eval).grad);
            if step.accepted {
                let best = step.costs.iter().flatten().fold(f64::INFINITY, |m, &c| m.min(c));
                out.decreases.push((step.baseline, best));
            }
        }
        let poly = rec.schedule.polytope_rows();
        let theta = rec.schedule.free_values();
        out.thetas.push(theta[0]);
        for (a, b) in poly.a_in.iter().zip(&poly.b_in) {
            out.slacks.push(b - a[0] * theta[0]);
        }
    })
    .unwrap();
    out
}

/// θ at which the step's gradient was evaluated.
fn step_origin(after: &ContactSchedule, step: &bilevel_mpc::bilevel::HighLevelStep) -> f64 {
    let moved = if step.accepted { step.alpha_star * step.p[0] } else { 0.0 };
    after.legs[0].times[0] - moved
}

#[test]
fn toy_loop_converges_with_aligned_gradients() {
    let cfg = BilevelConfig {
        k_start: 1,
        ..BilevelConfig::default()
    };
    let run = run_toy(&cfg, 200);
    let first_small = run.grads.iter().position(|g| g.abs() < 1e-3);
    assert!(first_small.is_some(), "gradients: {:?}", &run.grads[run.grads.len() - 5..]);
    for (g, t) in run.grads.iter().zip(&run.truths) {
        assert!(g * t > 0.0, "misaligned: {g} vs {t}");
    }
    for (base, best) in &run.decreases {
        assert!(best < base);
    }
    let worst = run.slacks.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(worst >= -1e-9, "worst slack {worst}, thetas {:?}", &run.thetas[run.thetas.len() - 10..]);
}

#[test]
fn toy_loop_with_barrier_stays_interior() {
    let cfg = BilevelConfig {
        k_start: 1,
        barrier_enabled: true,
        ..BilevelConfig::default()
    };
    let run = run_toy(&cfg, 100);
    assert!(run.slacks.iter().all(|&s| s > 0.0));
    for (base, best) in &run.decreases {
        assert!(best < base);
    }
}
