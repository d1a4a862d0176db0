use bilevel_mpc::mpc::{
    build_qp, eval_cost, param_jacobians, rt_iteration, FootState, Guess, Measurement, MpcConfig, MpcError,
};
use bilevel_mpc::qp::{CscMatrix, QpProblem};
use bilevel_mpc::schedule::{ContactSchedule, GaitPattern, ScheduleConfig};
use bilevel_mpc::srb::{SrbParams, SrbState};
use nalgebra::Vector3;

fn standing(params: &SrbParams, cfg: &MpcConfig) -> Measurement {
    let r = Vector3::from(cfg.target);
    Measurement {
        x: SrbState::at_rest(r),
        feet: params
            .leg_box
            .hips
            .iter()
            .map(|h| FootState {
                position: [r[0] + h[0], r[1] + h[1], 0.0],
                velocity: [0.0; 3],
            })
            .collect(),
    }
}

fn dense(m: &CscMatrix) -> Vec<Vec<f64>> {
    m.to_dense()
}

fn max_abs_diff_mat(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

fn sparse_to_dense(rows: usize, cols: usize, t: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; cols]; rows];
    for &(i, j, v) in t {
        d[i][j] += v;
    }
    d
}

fn vec_to_dense(n: usize, t: &[(usize, f64)]) -> Vec<f64> {
    let mut d = vec![0.0; n];
    for &(i, v) in t {
        d[i] += v;
    }
    d
}

#[test]
fn equality_rows_cover_initial_state_and_dynamics() {
    let params = SrbParams::default();
    let cfg = MpcConfig::default();
    let sched = ContactSchedule::from_pattern(GaitPattern::Stand, 0.0, &ScheduleConfig::default(), 100.0);
    let meas = standing(&params, &cfg);
    let guess = Guess::hover(&cfg, &params, &sched, &meas);
    let built = build_qp(&cfg, &params, &sched, &meas, &guess, false).unwrap();
    assert_eq!(built.qp.n_eq(), 12 + 12 * (cfg.nodes - 1));
    assert!(built.qp.validate().is_ok());
}

#[test]
fn hover_converges_to_weight_support() {
    let params = SrbParams::default();
    let cfg = MpcConfig::default();
    let sched = ContactSchedule::from_pattern(GaitPattern::Stand, 0.0, &ScheduleConfig::default(), 100.0);
    let meas = standing(&params, &cfg);
    let mut iterates = Vec::new();
    for _ in 0..5 {
        let it = rt_iteration(&cfg, &params, &sched, &meas, iterates.last()).unwrap();
        assert!(!it.stale);
        iterates.push(it);
    }
    let (prev, it) = (&iterates[3], &iterates[4]);
    // Fixed point of the real-time iteration.
    for (a, b) in prev.x.iter().zip(&it.x) {
        assert!((a.r - b.r).norm() < 1e-6 && (a.l - b.l).norm() < 1e-6);
    }
    // The force penalty lets the plan sag by a negligible amount. The last
    // node's input drives no step.
    let mg = params.mass * params.gravity[2];
    for (k, u) in it.u.iter().enumerate().take(cfg.nodes - 1) {
        let fz: f64 = u.forces.iter().map(|f| f[2]).sum();
        assert!((fz - mg).abs() < 1e-2 * mg, "node {k}: total vertical force {fz}");
    }
    for x in &it.x {
        assert!((x.r - Vector3::from(cfg.target)).norm() < 1e-3);
        assert!(x.l.norm() < 0.05);
    }
    let last = iterates.len() - 1;
    let (c0, c1) = (iterates[last - 1].j_a, iterates[last].j_a);
    assert!((c1 - c0).abs() <= 1e-6 * (1.0 + c1.abs()));
}

#[test]
fn repeated_solves_do_not_increase_cost() {
    let params = SrbParams::default();
    let cfg = MpcConfig::default();
    let sched = ContactSchedule::from_pattern(GaitPattern::Trot, 0.0, &ScheduleConfig::default(), 0.0);
    let mut meas = standing(&params, &cfg);
    meas.x.l = Vector3::new(3.0, -2.0, 0.5);
    let mut it = rt_iteration(&cfg, &params, &sched, &meas, None).unwrap();
    let mut prev_cost = it.j_a;
    for _ in 0..4 {
        it = eval_cost(&cfg, &params, &sched, &meas, Some(&it), 1).unwrap();
        assert!(it.j_a <= prev_cost * (1.0 + 1e-6) + 1e-9, "{} > {}", it.j_a, prev_cost);
        prev_cost = it.j_a;
    }
}

fn rebuild(
    cfg: &MpcConfig,
    params: &SrbParams,
    sched: &ContactSchedule,
    meas: &Measurement,
    guess: &Guess,
) -> QpProblem {
    build_qp(cfg, params, sched, meas, guess, false).unwrap().qp
}

#[test]
fn parameter_jacobians_match_central_differences() {
    let params = SrbParams::default();
    let cfg = MpcConfig::default();
    let sched0 = ContactSchedule::from_pattern(GaitPattern::Trot, 0.0, &ScheduleConfig::default(), 0.0);
    let mut meas = standing(&params, &cfg);
    meas.x.l = Vector3::new(1.0, 0.5, 0.0);
    let first = rt_iteration(&cfg, &params, &sched0, &meas, None).unwrap();
    // Move to a time with a swing in progress and a touchdown inside the horizon.
    let sched = sched0.advance_time(0.23).unwrap();
    let it = rt_iteration(&cfg, &params, &sched, &meas, Some(&first)).unwrap();
    let jac = param_jacobians(&cfg, &params, &sched, &it).unwrap();
    assert_eq!(jac.len(), sched.n_free());
    assert!(jac.params.iter().any(|d| !d.is_empty()));
    let n = it.qp.n_var();
    let eps = 1e-6;
    for (k, d) in jac.params.iter().enumerate() {
        let mut step = vec![0.0; sched.n_free()];
        step[k] = eps;
        let plus = sched.apply_step(&step).unwrap();
        step[k] = -eps;
        let minus = sched.apply_step(&step).unwrap();
        let qp_p = rebuild(&cfg, &params, &plus, &it.meas, &it.guess);
        let qp_m = rebuild(&cfg, &params, &minus, &it.meas, &it.guess);
        assert_eq!(qp_p.n_var(), n);
        assert_eq!(qp_p.n_in(), it.qp.n_in());
        let fd_mat = |a: &CscMatrix, b: &CscMatrix| -> Vec<Vec<f64>> {
            dense(a)
                .iter()
                .zip(dense(b))
                .map(|(x, y)| x.iter().zip(&y).map(|(u, v)| (u - v) / (2.0 * eps)).collect())
                .collect()
        };
        let fd_vec = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(u, v)| (u - v) / (2.0 * eps)).collect()
        };
        let check = |name: &str, fd: Vec<Vec<f64>>, an: Vec<Vec<f64>>| {
            let scale = an.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
            let err = max_abs_diff_mat(&fd, &an);
            assert!(err <= 1e-5 * scale, "param {k} {name}: err {err:e} scale {scale:e}");
        };
        check("Q", fd_mat(&qp_p.hess, &qp_m.hess), sparse_to_dense(n, n, &d.d_hess));
        check("A", fd_mat(&qp_p.a_eq, &qp_m.a_eq), sparse_to_dense(it.qp.n_eq(), n, &d.d_a));
        check("G", fd_mat(&qp_p.g_in, &qp_m.g_in), sparse_to_dense(it.qp.n_in(), n, &d.d_g));
        check("q", vec![fd_vec(&qp_p.grad, &qp_m.grad)], vec![vec_to_dense(n, &d.d_grad)]);
        check("b", vec![fd_vec(&qp_p.b_eq, &qp_m.b_eq)], vec![vec_to_dense(it.qp.n_eq(), &d.d_b)]);
        check("h", vec![fd_vec(&qp_p.h_in, &qp_m.h_in)], vec![vec_to_dense(it.qp.n_in(), &d.d_h)]);
    }
}

#[test]
fn infeasible_solve_keeps_previous_iterate() {
    let params = SrbParams::default();
    let cfg = MpcConfig::default();
    let sched = ContactSchedule::from_pattern(GaitPattern::Trot, 0.0, &ScheduleConfig::default(), 0.0);
    let meas = standing(&params, &cfg);
    let prev = rt_iteration(&cfg, &params, &sched, &meas, None).unwrap();
    let mut bad = params.clone();
    bad.leg_box.lower[0] = 0.2;
    let it = rt_iteration(&cfg, &bad, &sched, &meas, Some(&prev)).unwrap();
    assert!(it.stale);
    assert_eq!(it.sol.z, prev.sol.z);
    let err = rt_iteration(&cfg, &bad, &sched, &meas, None).unwrap_err();
    assert!(matches!(err, MpcError::Infeasible | MpcError::Solver(_)));
}
