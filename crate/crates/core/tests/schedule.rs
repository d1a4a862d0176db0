use bilevel_mpc::qp::solve_lp;
use bilevel_mpc::schedule::{
    ContactPhase, ContactSchedule, FreezeReason, GaitPattern, LegSchedule, ScheduleConfig,
    ScheduleError,
};
use proptest::prelude::*;

fn one_leg(times: Vec<f64>, c: usize) -> ContactSchedule {
    ContactSchedule {
        legs: vec![LegSchedule {
            frozen: vec![None; times.len()],
            times,
            phase0: ContactPhase::Stance,
            phase_start: 0.0,
            stance_period: 0.3,
            swing_period: 0.3,
        }],
        t_now: 0.0,
        k_min: 0.1,
        k_end: 1.0,
        changes_per_leg: c,
        swing_protect_fraction: 0.0,
    }
}

#[test]
fn polytope_row_counts() {
    let s = one_leg(vec![0.2, 0.5], 2);
    let poly = s.polytope_rows();
    assert_eq!(poly.a_in.len(), 3);
    assert_eq!(poly.a_in[0], vec![-1.0, 0.0]);
    assert_eq!(poly.b_in[0], 0.0);
    assert_eq!(poly.a_in[1], vec![1.0, -1.0]);
    assert_eq!(poly.b_in[1], -0.1);
    assert_eq!(poly.a_in[2], vec![-1.0, 1.0]);
    assert_eq!(poly.b_in[2], 1.0);

    assert_eq!(one_leg(vec![0.2], 1).polytope_rows().a_in.len(), 1);

    let mut frozen = one_leg(vec![0.2, 0.5], 2);
    frozen.legs[0].frozen = vec![Some(FreezeReason::Touchdown); 2];
    let poly = frozen.polytope_rows();
    assert_eq!(poly.dim, 0);
    assert!(poly.a_in.is_empty());
}

#[test]
fn advance_time_cases() {
    let s = one_leg(vec![0.2, 0.5, 0.8], 3);
    let same = s.advance_time(0.1).unwrap();
    assert_eq!(same.legs, s.legs);
    assert_eq!(same.t_now, 0.1);

    let crossed = s.advance_time(0.25).unwrap();
    assert_eq!(crossed.legs[0].phase0, ContactPhase::Swing);
    assert_eq!(crossed.legs[0].frozen[0], Some(FreezeReason::Past));
    // The swing's touchdown is protected, and one change was appended.
    assert_eq!(crossed.legs[0].frozen[1], Some(FreezeReason::Touchdown));
    assert_eq!(crossed.legs[0].times.len(), 4);
    assert_eq!(crossed.legs[0].frozen[3], Some(FreezeReason::Appended));
    assert!((crossed.legs[0].times[3] - 1.1).abs() < 1e-12);

    let beyond = s.advance_time(5.0).unwrap();
    let leg = &beyond.legs[0];
    assert_eq!(leg.future_count(), 3);
    assert!(leg.frozen[..3].iter().all(|f| *f == Some(FreezeReason::Past)));
    assert_eq!(leg.phase0, ContactPhase::Swing);
    assert!(leg.times[3..].iter().all(|&t| t >= 5.0));

    assert!(matches!(
        s.advance_time(-1.0),
        Err(ScheduleError::TimeReversal { .. })
    ));
}

#[test]
fn apply_step_cases() {
    let s = one_leg(vec![0.2, 0.5, 0.8], 3);
    assert_eq!(s.apply_step(&[0.0; 3]).unwrap(), s);
    let shifted = s.apply_step(&[0.05; 3]).unwrap();
    let t = &shifted.legs[0].times;
    assert!(((t[1] - t[0]) - 0.3).abs() < 1e-12 && ((t[2] - t[1]) - 0.3).abs() < 1e-12);
    // Gap driven exactly to k_min is on the closed boundary.
    let tight = s.apply_step(&[0.0, -0.2, 0.0]).unwrap();
    assert!((tight.legs[0].times[1] - tight.legs[0].times[0] - 0.1).abs() < 1e-12);
    assert!(matches!(
        s.apply_step(&[0.0, -0.25, 0.0]),
        Err(ScheduleError::PolytopeViolation(_))
    ));
}

#[test]
fn durations_and_jacobian_structure() {
    let s = one_leg(vec![0.3, 0.6, 0.9], 3);
    let (d, jac) = s.durations_and_jacobian();
    assert!(d[0].iter().all(|v| (v - 0.3).abs() < 1e-12));
    assert!(jac.contains(&(0, 1, 1, 1.0)));
    assert!(jac.contains(&(0, 2, 1, -1.0)));

    let mut f = s.clone();
    f.legs[0].frozen[1] = Some(FreezeReason::Touchdown);
    let (_, jac) = f.durations_and_jacobian();
    assert_eq!(f.n_free(), 2);
    assert!(jac.iter().all(|&(_, _, k, _)| k < 2));
}

#[test]
fn durations_jacobian_matches_differences() {
    let s = ContactSchedule::from_pattern(GaitPattern::Trot, 0.0, &ScheduleConfig::default(), 0.0)
        .advance_time(0.2)
        .unwrap();
    let (d0, jac) = s.durations_and_jacobian();
    for k in 0..s.n_free() {
        let mut p = vec![0.0; s.n_free()];
        p[k] = 1e-3;
        let mut moved = s.clone();
        let (i, j) = s.free_entries()[k];
        moved.legs[i].times[j] += p[k];
        let (d1, _) = moved.durations_and_jacobian();
        for (leg, segs) in d1.iter().enumerate() {
            for (seg, v) in segs.iter().enumerate() {
                let fd = ((v - d0[leg][seg]) / 1e-3).round();
                let an = jac
                    .iter()
                    .filter(|e| e.0 == leg && e.1 == seg && e.2 == k)
                    .map(|e| e.3)
                    .sum::<f64>();
                assert_eq!(fd, an);
            }
        }
    }
}

#[test]
fn trot_pattern_alternates_pairs() {
    let s = ContactSchedule::from_pattern(GaitPattern::Trot, 0.0, &ScheduleConfig::default(), 0.0);
    assert_eq!(s.phase_at(0, 0.2), ContactPhase::Swing);
    assert_eq!(s.phase_at(3, 0.2), ContactPhase::Swing);
    assert_eq!(s.phase_at(1, 0.2), ContactPhase::Stance);
    assert_eq!(s.phase_at(1, 0.5), ContactPhase::Swing);
    assert_eq!(s.phase_at(0, 0.5), ContactPhase::Stance);
    assert!(s.violation() <= 0.0);
    let spans = s.leg_phases(1, 0.95);
    assert_eq!(spans.first().unwrap().start, 0.0);
    assert_eq!(spans.last().unwrap().end, 0.95);
    let total: f64 = spans.iter().map(|p| p.end - p.start).sum();
    assert!((total - 0.95).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polytope_membership_is_maintained(
        steps in proptest::collection::vec((0.0..0.08f64, proptest::collection::vec(-1.0..1.0f64, 16)), 1..25)
    ) {
        let mut s = ContactSchedule::from_pattern(GaitPattern::Trot, 0.0, &ScheduleConfig::default(), 0.0);
        for (dt, obj) in steps {
            s = s.advance_time(s.t_now + dt).unwrap();
            prop_assert!(s.violation() <= 1e-9);
            let n = s.n_free();
            let mut poly = s.polytope_rows();
            // Step polytope: θ + p ∈ 𝒯 with a box trust region.
            let theta = s.free_values();
            for (row, b) in poly.a_in.iter().zip(poly.b_in.iter_mut()) {
                *b -= row.iter().zip(&theta).map(|(a, t)| a * t).sum::<f64>();
            }
            poly.push_box(-0.05, 0.05);
            let p = solve_lp(&obj[..n], &poly).unwrap();
            s = s.apply_step(&p).unwrap();
            s.release_appended();
            prop_assert!(s.violation() <= 1e-9);
            for leg in 0..4 {
                let ff = s.legs[leg].first_future();
                let t = &s.legs[leg].times;
                for j in ff + 1..t.len() {
                    prop_assert!(t[j] - t[j - 1] >= s.k_min - 1e-9);
                }
                let spans = s.leg_phases(leg, s.t_now + 0.95);
                let total: f64 = spans.iter().map(|p| p.end - p.start).sum();
                prop_assert!((total - 0.95).abs() < 1e-9);
            }
        }
    }
}
