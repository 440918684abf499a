//! Randomized properties of the pure components: the monitor, smoothing,
//! geometry, the footprint objective and the controller formulas.

use std::sync::Arc;

use coopmanip::control::{lyapunov_value, pd_torque, GainSchedule};
use coopmanip::footprint::{objective, FootprintProblem, HeightModel};
use coopmanip::geometry::{point_distance, signed_distance, ObstacleSet, Primitive};
use coopmanip::robot::{gravity_vector, SerialChainModel};
use coopmanip::smoothing::{
    build_hermite, cubic_spline_interpolate, gaussian_kernel, gaussian_smooth, kernel_weights_at, DenseSamples,
};
use coopmanip::stl::{
    eval_boolean, eval_robustness, parse_formula, Environment, Formula, Interval, Predicate, SampledSignal,
};
use coopmanip::waypoint::{Knot, WaypointTrajectory};
use nalgebra::{DVector, Rotation2, Vector2, Vector3};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

// ---------------------------------------------------------------- monitor

fn obstacles() -> Environment {
    let set = ObstacleSet::new(vec![
        Primitive::sphere(Vector3::new(1.0, 0.5, 0.0), 0.4),
        Primitive::aabb(Vector3::new(-1.0, -0.5, 0.2), Vector3::new(0.3, 0.2, 0.5)),
    ])
    .unwrap();
    Environment::new().with_field("obs", Arc::new(set))
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [-1.5..1.5f64, -1.5..1.5f64, -0.5..0.5f64]
}

fn interval() -> impl Strategy<Value = Interval> {
    (0u32..10, 0u32..10).prop_map(|(a, w)| Interval::new(a as f64 * 0.1, (a + w) as f64 * 0.1).unwrap())
}

fn predicate() -> impl Strategy<Value = Formula> {
    prop_oneof![
        (point(), 0.1..1.5f64).prop_map(|(c, r)| Formula::pred(Predicate::ball(c, r))),
        (point(), 0.1..1.5f64).prop_map(|(c, r)| Formula::pred(Predicate::outside(c, r))),
        (0.0..0.5f64).prop_map(|m| Formula::pred(Predicate::avoid("obs", m))),
    ]
}

fn formula() -> impl Strategy<Value = Formula> {
    predicate().prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(Formula::not),
            prop::collection::vec(inner.clone(), 2..3).prop_map(Formula::and),
            prop::collection::vec(inner.clone(), 2..3).prop_map(Formula::or),
            (interval(), inner.clone()).prop_map(|(iv, f)| Formula::always(iv, f)),
            (interval(), inner.clone()).prop_map(|(iv, f)| Formula::eventually(iv, f)),
            (interval(), inner.clone(), inner).prop_map(|(iv, a, b)| Formula::until(iv, a, b)),
        ]
    })
}

/// One sinusoid per axis, sampled every 0.1 s over [0, 8].
fn signal() -> impl Strategy<Value = SampledSignal> {
    prop::array::uniform3((0.2..1.5f64, 0.5..3.0f64, 0.0..6.3f64)).prop_map(|axes| {
        SampledSignal::from_fn(0.0, 8.0, 0.1, |t| {
            Vector3::from_fn(|i, _| {
                let (a, w, p) = axes[i];
                a * (w * t + p).sin()
            })
        })
        .unwrap()
    })
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn negation_flips_robustness(f in formula(), x in signal()) {
        let env = obstacles();
        let r = eval_robustness(&f, &x, 0.0, &env).unwrap();
        let n = eval_robustness(&Formula::not(f), &x, 0.0, &env).unwrap();
        prop_assert_eq!(n, -r);
    }

    #[test]
    fn boolean_verdict_matches_robustness_sign(f in formula(), x in signal()) {
        let env = obstacles();
        let r = eval_robustness(&f, &x, 0.0, &env).unwrap();
        let b = eval_boolean(&f, &x, 0.0, &env).unwrap();
        if r.abs() > 1e-9 {
            prop_assert_eq!(b, r > 0.0);
        }
    }

    #[test]
    fn always_is_below_eventually(f in formula(), iv in interval(), x in signal()) {
        let env = obstacles();
        let g = eval_robustness(&Formula::always(iv, f.clone()), &x, 0.0, &env).unwrap();
        let e = eval_robustness(&Formula::eventually(iv, f), &x, 0.0, &env).unwrap();
        prop_assert!(g <= e);
    }

    #[test]
    fn conjunction_is_the_minimum(a in formula(), b in formula(), x in signal()) {
        let env = obstacles();
        let ra = eval_robustness(&a, &x, 0.0, &env).unwrap();
        let rb = eval_robustness(&b, &x, 0.0, &env).unwrap();
        let r = eval_robustness(&Formula::and(vec![a, b]), &x, 0.0, &env).unwrap();
        prop_assert_eq!(r, ra.min(rb));
    }

    #[test]
    fn printed_formula_reparses_to_the_same_meaning(f in formula(), x in signal()) {
        let env = obstacles();
        let g = parse_formula(&f.to_string()).unwrap();
        let r = eval_robustness(&f, &x, 0.0, &env).unwrap();
        prop_assert_eq!(eval_robustness(&g, &x, 0.0, &env).unwrap(), r);
    }
}

// -------------------------------------------------------------- smoothing

fn dense() -> impl Strategy<Value = DenseSamples> {
    prop::collection::vec(prop::array::uniform3(-2.0..2.0f64), 3..40).prop_map(|v| DenseSamples {
        times: (0..v.len()).map(|i| i as f64 * 0.05).collect(),
        values: v.into_iter().map(Vector3::from).collect(),
    })
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn kernel_weights_sum_to_one(sigma in 0.3..12.0f64, len in 1usize..80, at in 0usize..80) {
        let k = gaussian_kernel(sigma);
        let j = at % len;
        let total: f64 = kernel_weights_at(&k, j, len).iter().map(|(_, w)| w).sum();
        prop_assert!((total - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn smoothing_keeps_constants(c in prop::array::uniform3(-3.0..3.0f64), n in 3usize..60, sigma in 0.3..8.0f64) {
        let d = DenseSamples {
            times: (0..n).map(|i| i as f64 * 0.1).collect(),
            values: vec![Vector3::from(c); n],
        };
        let s = gaussian_smooth(&d, sigma).unwrap();
        for v in &s.values {
            prop_assert!((v - Vector3::from(c)).amax() <= 1e-12);
        }
    }

    #[test]
    fn hermite_reproduces_knots_and_is_c1(d in dense()) {
        let h = build_hermite(&d).unwrap();
        for (t, x) in d.times.iter().zip(&d.values) {
            prop_assert!((h.eval(*t).unwrap().0 - x).amax() <= 1e-12);
        }
        let eps = 1e-10;
        for &t in &d.times[1..d.times.len() - 1] {
            let (_, left) = h.eval(t - eps).unwrap();
            let (_, right) = h.eval(t + eps).unwrap();
            prop_assert!((left - right).amax() <= 1e-4 * (1.0 + left.amax()));
        }
    }

    #[test]
    fn spline_passes_through_waypoints(pts in prop::collection::vec(prop::array::uniform3(-2.0..2.0f64), 4..9)) {
        let knots: Vec<Knot> = pts.iter().enumerate().map(|(i, p)| Knot::new(i as f64 * 0.5, Vector3::from(*p))).collect();
        let w = WaypointTrajectory::new(knots).unwrap();
        let d = cubic_spline_interpolate(&w, 0.05).unwrap();
        for (i, p) in pts.iter().enumerate() {
            prop_assert!((d.values[i * 10] - Vector3::from(*p)).amax() <= 1e-12);
        }
    }
}

// --------------------------------------------------------------- geometry

fn primitive() -> impl Strategy<Value = Primitive> {
    let v = || prop::array::uniform3(-1.0..1.0f64).prop_map(Vector3::from);
    let h = || prop::array::uniform3(0.05..0.6f64).prop_map(Vector3::from);
    prop_oneof![
        (v(), 0.05..0.5f64).prop_map(|(c, r)| Primitive::sphere(c, r)),
        (v(), v(), 0.05..0.3f64).prop_map(|(a, b, r)| Primitive::capsule(a, b, r)),
        (v(), h()).prop_map(|(c, e)| Primitive::aabb(c, e)),
        (v(), h(), prop::array::uniform3(-3.0..3.0f64)).prop_map(|(c, e, r)| {
            Primitive::cuboid(c, e, nalgebra::Rotation3::from_euler_angles(r[0], r[1], r[2]))
        }),
    ]
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn distance_is_symmetric(a in primitive(), b in primitive()) {
        let ab = signed_distance(&a, &b);
        let ba = signed_distance(&b, &a);
        prop_assert!((ab - ba).abs() <= 1e-6, "{} vs {}", ab, ba);
    }

    #[test]
    fn distance_is_translation_invariant(a in primitive(), b in primitive(), d in prop::array::uniform3(-5.0..5.0f64)) {
        let d = Vector3::from(d);
        let before = signed_distance(&a, &b);
        let after = signed_distance(&a.translated(&d), &b.translated(&d));
        prop_assert!((before - after).abs() <= 1e-6, "{} vs {}", before, after);
    }

    #[test]
    fn sphere_pairs_are_exact(c1 in prop::array::uniform3(-1.0..1.0f64), c2 in prop::array::uniform3(-1.0..1.0f64), r1 in 0.05..0.5f64, r2 in 0.05..0.5f64) {
        let (c1, c2) = (Vector3::from(c1), Vector3::from(c2));
        let d = signed_distance(&Primitive::sphere(c1, r1), &Primitive::sphere(c2, r2));
        prop_assert!((d - ((c1 - c2).norm() - r1 - r2)).abs() <= 1e-12);
    }

    #[test]
    fn point_to_box_matches_clamping(p in prop::array::uniform3(-2.0..2.0f64), e in prop::array::uniform3(0.05..1.0f64)) {
        let (p, e) = (Vector3::from(p), Vector3::from(e));
        let q = Vector3::from_fn(|i, _| p[i].clamp(-e[i], e[i]));
        let outside = (p - q).norm();
        let expected = if outside > 0.0 { outside } else { -(e - p.abs()).min() };
        prop_assert!((point_distance(&p, &Primitive::aabb(Vector3::zeros(), e)) - expected).abs() <= 1e-12);
    }
}

// -------------------------------------------------------------- footprint

fn problem(n: usize) -> FootprintProblem {
    let formation: Vec<Vector2<f64>> = (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            Vector2::new(a.cos(), a.sin())
        })
        .collect();
    FootprintProblem {
        steps: 3,
        weights: (1..=n).map(|i| i as f64).collect(),
        spacing: FootprintProblem::formation_spacing(&formation),
        centroid_tol: 0.01,
        step_bound: 0.1,
        height: HeightModel {
            z_ref: 1.0,
            kappa: 0.2,
            delta: 0.1,
        },
        obstacles: Vec::new(),
        formation,
        workspace: [[-5.0, 5.0], [-5.0, 5.0]],
    }
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn objective_ignores_rigid_motions(
        n in 2usize..5,
        raw in prop::collection::vec(prop::array::uniform2(-2.0..2.0f64), 16),
        angles in prop::array::uniform4(-3.2..3.2f64),
        shift in prop::array::uniform2(-3.0..3.0f64),
    ) {
        let p = problem(n);
        let plan: Vec<Vec<Vector2<f64>>> = (0..4).map(|k| (0..n).map(|i| Vector2::from(raw[4 * k + i])).collect()).collect();
        let moved: Vec<Vec<Vector2<f64>>> = plan
            .iter()
            .zip(angles)
            .map(|(bases, a)| bases.iter().map(|b| Rotation2::new(a) * b + Vector2::from(shift)).collect())
            .collect();
        let (f, g) = (objective(&plan, &p), objective(&moved, &p));
        prop_assert!(f >= 0.0);
        prop_assert!((f - g).abs() <= 1e-9 * f.max(1.0), "{} vs {}", f, g);
    }
}

// ------------------------------------------------------------- controller

fn state() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    let v = |r: f64| prop::collection::vec(-r..r, 8);
    (v(1.0), v(1.0), v(1.0))
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn pd_torque_matches_the_control_law((q, qd, qdes) in state()) {
        let m = SerialChainModel::desk_scale();
        let gains = GainSchedule::default().gains_for(&m);
        let g = Vector3::new(0.0, 0.0, -9.81);
        let (q, qd, qdes) = (DVector::from_vec(q), DVector::from_vec(qd), DVector::from_vec(qdes));
        let tau = pd_torque(&m, &q, &qd, &qdes, &gains, &g).unwrap();
        let grav = gravity_vector(&m, &q, &g).unwrap();
        for i in 0..8 {
            let expected = -gains.kp[i] * (q[i] - qdes[i]) - gains.kv[i] * qd[i] + grav[i];
            prop_assert!((tau[i] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn lyapunov_value_is_positive_definite((q, qd, qdes) in state()) {
        let m = SerialChainModel::desk_scale();
        let gains = GainSchedule::default().gains_for(&m);
        let (q, qd, qdes) = (DVector::from_vec(q), DVector::from_vec(qd), DVector::from_vec(qdes));
        let v = lyapunov_value(&m, &q, &qd, &qdes, &gains).unwrap();
        prop_assert!(v > 0.0);
        prop_assert_eq!(lyapunov_value(&m, &q, &DVector::zeros(8), &q, &gains).unwrap(), 0.0);
    }
}
