use bilevel_mpc::spline::{HermiteSegment, Knot, SegmentKind, SplineError, SplineTrajectory};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn random_trajectory(rng: &mut StdRng) -> SplineTrajectory {
    let n = rng.gen_range(1..6);
    let knots = (0..=n)
        .map(|_| Knot {
            value: rng.gen_range(-2.0..2.0),
            slope: rng.gen_range(-3.0..3.0),
        })
        .collect();
    let durations = (0..n).map(|_| rng.gen_range(0.1..0.6)).collect();
    let kinds = (0..n)
        .map(|_| match rng.gen_range(0..4) {
            0 => SegmentKind::ZeroForce,
            1 => SegmentKind::Swing,
            _ => SegmentKind::Stance,
        })
        .collect();
    SplineTrajectory::new(rng.gen_range(-1.0..1.0), knots, durations, kinds).unwrap()
}

fn with_duration(sp: &SplineTrajectory, k: usize, d: f64) -> SplineTrajectory {
    let mut out = sp.clone();
    out.durations[k] = d;
    out
}

#[test]
fn duration_derivative_matches_finite_differences() {
    let mut rng = StdRng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 1000 {
        let sp = random_trajectory(&mut rng);
        let seg = rng.gen_range(0..sp.len());
        let t = rng.gen_range(sp.t0..sp.end_time());
        // Stay clear of junctions, where the derivative is one-sided.
        let mut edge = sp.t0;
        let mut near = false;
        for d in &sp.durations {
            edge += d;
            near |= (t - edge).abs() < 1e-4;
        }
        if near {
            continue;
        }
        let h = 1e-6;
        let fd = (with_duration(&sp, seg, sp.durations[seg] + h).eval(t).unwrap().0
            - with_duration(&sp, seg, sp.durations[seg] - h).eval(t).unwrap().0)
            / (2.0 * h);
        let an = sp.d_eval_d_duration(t, seg).unwrap();
        assert!((fd - an).abs() < 1e-6, "fd {fd} analytic {an}");
        checked += 1;
    }
}

#[test]
fn coefficients_reproduce_basis_evaluation() {
    let mut rng = StdRng::seed_from_u64(2);
    for _ in 0..200 {
        let s = HermiteSegment {
            y0: rng.gen_range(-2.0..2.0),
            y1: rng.gen_range(-2.0..2.0),
            ydot0: rng.gen_range(-2.0..2.0),
            ydot1: rng.gen_range(-2.0..2.0),
            duration: rng.gen_range(0.1..1.0),
            kind: SegmentKind::Stance,
        };
        let a = s.coefficients().unwrap();
        let tau = rng.gen_range(0.0..s.duration);
        let poly = a[0] + a[1] * tau + a[2] * tau * tau + a[3] * tau * tau * tau;
        let dpoly = a[1] + 2.0 * a[2] * tau + 3.0 * a[3] * tau * tau;
        let (v, d) = s.eval_local(tau);
        assert!((poly - v).abs() < 1e-12);
        assert!((dpoly - d).abs() < 1e-11);
    }
}

#[test]
fn constant_and_zero_segments() {
    let c = HermiteSegment {
        y0: 0.7,
        y1: 0.7,
        ydot0: 0.0,
        ydot1: 0.0,
        duration: 0.3,
        kind: SegmentKind::Stance,
    };
    assert_eq!(c.coefficients().unwrap(), [0.7, 0.0, 0.0, 0.0]);
    assert_eq!(c.d_value_d_duration(0.1), 0.0);
    let z = HermiteSegment {
        kind: SegmentKind::ConstantZero,
        ..c
    };
    assert_eq!(z.eval_local(0.1), (0.0, 0.0));
    let bad = HermiteSegment { duration: 0.0, ..c };
    assert_eq!(bad.coefficients(), Err(SplineError::NonpositiveDuration(0.0)));
}

#[test]
fn earlier_points_do_not_depend_on_later_durations() {
    let mut rng = StdRng::seed_from_u64(3);
    let mut sp = random_trajectory(&mut rng);
    while sp.len() < 3 {
        sp = random_trajectory(&mut rng);
    }
    let t = sp.t0 + 0.5 * sp.durations[0];
    assert_eq!(sp.d_eval_d_duration(t, 2).unwrap(), 0.0);
    assert_eq!(sp.eval(sp.t0).unwrap().0, if sp.kinds[0].is_zero() { 0.0 } else { sp.knots[0].value });
    assert!(matches!(sp.eval(sp.end_time() + 1.0), Err(SplineError::OutOfHorizon { .. })));
    assert!(matches!(sp.d_eval_d_duration(t, 9), Err(SplineError::InvalidSegment(9))));
}

proptest! {
    #[test]
    fn endpoint_interpolation(y0 in -5.0..5.0f64, y1 in -5.0..5.0f64, d0 in -5.0..5.0f64,
                              d1 in -5.0..5.0f64, t in 0.1..2.0f64) {
        let s = HermiteSegment { y0, y1, ydot0: d0, ydot1: d1, duration: t, kind: SegmentKind::Swing };
        let (v0, dv0) = s.eval_local(0.0);
        let (v1, dv1) = s.eval_local(t);
        prop_assert!((v0 - y0).abs() <= 1e-12);
        prop_assert!((v1 - y1).abs() <= 1e-12);
        prop_assert!((dv0 - d0).abs() <= 1e-12);
        prop_assert!((dv1 - d1).abs() <= 1e-12);
    }

    #[test]
    fn junctions_are_value_continuous(seed in 0u64..1000) {
        let mut rng = StdRng::seed_from_u64(seed);
        let sp = random_trajectory(&mut rng);
        for k in 0..sp.len() - 1 {
            if sp.kinds[k].is_zero() || sp.kinds[k + 1].is_zero() {
                continue;
            }
            let left = sp.segment(k).eval_local(sp.durations[k]).0;
            let right = sp.segment(k + 1).eval_local(0.0).0;
            prop_assert!((left - right).abs() <= 1e-12);
        }
    }
}
