use std::f64::consts::TAU;

use approx::assert_abs_diff_eq;
use flatcyl::flow::*;
use flatcyl::hyperbolic::{Word, C64};
use flatcyl::measure::chartwise_distance;
use flatcyl::periodic::*;
use flatcyl::surface::*;
use flatcyl::LabError;
use proptest::prelude::*;

fn torus() -> SurfaceModel {
    build_flat_cylinder_torus(PUNCTURED_TORUS_GENERATORS, 4.0).unwrap()
}

fn ended() -> SurfaceModel {
    build_flat_ended_torus(ONE_HOLED_TORUS_GENERATORS, None).unwrap()
}

fn word(m: &SurfaceModel, s: &str) -> Word {
    Word::parse(s, &m.hyperbolic_chart().unwrap().names).unwrap()
}

#[test]
fn vertical_family_periods() {
    let m = build_cylinder_with_funnels(4.0, 1.0).unwrap();
    let spec = CylinderSpec::middle(&m).unwrap();
    assert_eq!(spec.d, 2.0);
    let fam = vertical_family(&m, &spec, 9).unwrap();
    for c in &fam.members {
        assert_eq!(c.period, TAU);
        assert_eq!(c.residual, 0.0);
        assert_eq!(c.rank, RankVerdict::RankTwoCertified);
        assert_eq!(c.closure_gap(&m).unwrap(), 0.0);
    }
    assert_eq!(fam.edges.len(), 2);
    assert_eq!(fam.members[fam.edges[0]].initial.c1, -2.0);
    assert_eq!(fam.members[fam.edges[1]].initial.c1, 2.0);
    let a = &fam.members[fam.designated];
    assert_eq!(a.label, "A");
    assert_eq!(a.initial.c1, 0.0);

    let t = torus();
    let fam = vertical_family(&t, &CylinderSpec::middle(&t).unwrap(), 5).unwrap();
    assert_abs_diff_eq!(fam.members[0].period, 2.0 * 1.5f64.acosh(), epsilon = 1e-12);

    let e = ended();
    let spec = CylinderSpec::new(4.0, e.warp.height, 1.0).unwrap();
    assert!(vertical_family(&e, &spec, 5).is_ok());
}

#[test]
fn word_axes() {
    let m = torus();
    let a = axis_from_word(&m, &word(&m, "A")).unwrap();
    assert_abs_diff_eq!(a.period, 2.0 * 1.5f64.acosh(), epsilon = 1e-12);
    assert_abs_diff_eq!(a.period, 1.92485, epsilon = 1e-5);
    assert!(a.guess);
    let aa = axis_from_word(&m, &word(&m, "AA")).unwrap();
    assert_abs_diff_eq!(aa.period, 2.0 * a.period, epsilon = 1e-12);
    assert!(matches!(
        axis_from_word(&m, &word(&m, "ABab")),
        Err(LabError::NotHyperbolic(t)) if (t - 2.0).abs() < 1e-12
    ));
}

#[test]
fn non_guess_axes_close() {
    let m = torus();
    let mut found = 0;
    for w in Word::enumerate(2, 4) {
        let Ok(c) = axis_from_word(&m, &w) else { continue };
        if c.guess {
            continue;
        }
        found += 1;
        assert!(c.residual < 1e-8, "{} residual {}", c.label, c.residual);
        assert!(c.closure_gap(&m).unwrap() < 1e-8);
        let r = refine_periodic(&m, &c, 1e-8).unwrap();
        assert_eq!(r, c);
    }
    assert!(found > 0);
}

#[test]
fn refinement_cases() {
    let m = torus();
    let spec = CylinderSpec::middle(&m).unwrap();
    let v = designated_geodesic(&m, &spec).unwrap();
    assert_eq!(refine_periodic(&m, &v, 1e-12).unwrap(), v);

    // the cut geodesic survives the flattening as a band edge, same length
    let a = axis_from_word(&m, &word(&m, "A")).unwrap();
    let r = refine_periodic(&m, &a, 1e-10).unwrap();
    assert!(r.is_vertical(&m));
    assert_abs_diff_eq!(r.period, 2.0 * 1.5f64.acosh(), epsilon = 1e-12);
    assert_eq!(r.residual, 0.0);

    // Newton shooting recovers an orbit from a perturbed start
    let c = axis_from_word(&m, &word(&m, "ABAb")).unwrap();
    let hv = UnitTangent::hyperbolic(C64::new(c.initial.c1 + 1e-4, c.initial.c2), c.initial.angle + 1e-4, 0.0);
    let guess = ClosedGeodesic {
        initial: hv,
        period: c.period * 1.01,
        residual: 0.05,
        guess: true,
        ..c.clone()
    };
    let r = refine_periodic(&m, &guess, 1e-10).unwrap();
    assert!(r.residual < 1e-10);
    assert_abs_diff_eq!(r.period, c.period, epsilon = 1e-6);
    let seg = integrate(&m, &r.initial, r.period).unwrap();
    assert!(chartwise_distance(&m, &r.initial, &seg.end) < 1e-8);

    // a class that must cross the inserted band changes length by far more than 10%
    let b = axis_from_word(&m, &word(&m, "B")).unwrap();
    assert!(b.guess);
    assert!(refine_periodic(&m, &b, 1e-10).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn length_invariant_under_conjugation_and_inversion(
        letters in proptest::collection::vec((0usize..2, prop::bool::ANY), 1..7),
        conj in proptest::collection::vec((0usize..2, prop::bool::ANY), 1..4),
    ) {
        let m = ended();
        let gens = &m.hyperbolic_chart().unwrap().generators;
        let build = |ls: &[(usize, bool)]| {
            ls.iter().fold(Word::letter(0).pow(0), |w, &(g, inv)| {
                let l = Word::letter(g);
                w.concat(&if inv { l.inverse() } else { l })
            })
        };
        let w = build(&letters).reduced();
        let x = build(&conj);
        let tr = w.eval(gens).trace().abs();
        prop_assume!(tr > 2.0 + 1e-9);
        let base = axis_from_word(&m, &w).unwrap().period;
        let inv = axis_from_word(&m, &w.inverse()).unwrap().period;
        let cj = axis_from_word(&m, &x.concat(&w).concat(&x.inverse()).reduced()).unwrap().period;
        prop_assert!((base - inv).abs() < 1e-9 * base.max(1.0));
        prop_assert!((base - cj).abs() < 1e-8 * base.max(1.0));
    }
}

#[test]
fn escape_certificates() {
    let m = ended();
    let up = UnitTangent::warped(1.0, 0.2, 0.4, 0.0);
    let c = flat_end_escape(&m, &up).unwrap();
    assert_eq!(c.direction, EscapeDirection::Forward);
    assert_abs_diff_eq!(c.time_to(11.0), 10.0 / 0.4f64.sin(), epsilon = 1e-12);
    let down = UnitTangent::warped(1.0, 0.2, -0.4, 0.0);
    assert_eq!(flat_end_escape(&m, &down).unwrap().direction, EscapeDirection::Backward);
    let vertical = UnitTangent::warped(1.0, 0.2, 0.0, 0.0);
    assert!(matches!(flat_end_escape(&m, &vertical), Err(LabError::NotApplicable(_))));
    assert!(flat_end_escape(&torus(), &up).is_err());
}

#[test]
fn boundary_words_approach_the_cut() {
    let m = ended();
    let d = boundary_approximation(&m, &word(&m, "A"), 8).unwrap();
    assert_eq!(d.len(), 8);
    for k in 1..d.len() {
        assert!(d[k] < d[k - 1], "{d:?}");
    }
    assert!(d[7] < 0.05 * d[0]);
}

#[test]
fn transit_signs() {
    let m = torus();
    let up = UnitTangent::warped(m.warp.flat_lo - 0.01, 0.0, 0.3, 0.0);
    let seg = integrate(&m, &up, 15.0).unwrap();
    let t_up = transit_report(&seg).transits[0].clone();
    let down = UnitTangent::warped(m.warp.flat_hi + 0.01, 0.0, -0.3, 0.0);
    let seg = integrate(&m, &down, 15.0).unwrap();
    let t_down = transit_report(&seg).transits[0].clone();
    assert_ne!(t_up.sign, t_down.sign);
    let cert = transit_sign_certificate(&t_up, &t_down, 0.1).unwrap().unwrap();
    assert_ne!(cert.enter_sign, cert.required_sign);
    assert!(transit_sign_certificate(&t_up, &t_up, 0.1).unwrap().is_none());
    let vertical = integrate(&m, &UnitTangent::warped(0.0, 0.0, 0.0, 0.0), 5.0).unwrap();
    assert!(matches!(endpoint_transits(&m, &vertical), Err(LabError::NotApplicable(_))));
}

#[test]
fn shadowing_exact_orbit() {
    let m = torus();
    let v = UnitTangent::warped(0.5, 0.0, 0.0, 0.0);
    let q = ShadowingQuery::new(&m, &v, TAU * m.warp.height, 0.01, 0.01).unwrap();
    assert_eq!(q.gap, 0.0);
    match shadowing_search(&m, &q).unwrap() {
        ShadowingOutcome::Closed { orbit, .. } => assert_eq!(orbit.residual, 0.0),
        other => panic!("{other:?}"),
    }
}

#[test]
fn shadowing_control_in_hyperbolic_part() {
    let m = torus();
    let c = axis_from_word(&m, &word(&m, "ABAb")).unwrap();
    let q = hyperbolic_control_pseudo_orbit(&m, &c, 1e-3, 1e-2).unwrap();
    assert!(q.gap < 1e-3);
    match shadowing_search(&m, &q).unwrap() {
        ShadowingOutcome::Closed {
            orbit,
            shadowing_distance,
        } => {
            assert!(shadowing_distance < 1e-2);
            assert!(orbit.residual < 1e-8);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn shadowing_obstruction_small_grid() {
    let m = torus();
    let spec = CylinderSpec::middle(&m).unwrap();
    let q = obstruction_pseudo_orbit(&m, &spec, 0.2, 0.5, 80.0).unwrap();
    let grid = SearchGrid {
        n_position: 24,
        n_angle: 24,
        refine: 2,
    };
    match shadowing_search_with(&m, &q, &grid).unwrap() {
        ShadowingOutcome::Obstructed {
            certificate,
            min_residual,
            ..
        } => {
            assert_ne!(certificate.enter_sign, certificate.required_sign);
            assert!(min_residual >= 0.1);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn catalog_output() {
    let m = torus();
    let orbits = vec![
        designated_geodesic(&m, &CylinderSpec::middle(&m).unwrap()).unwrap(),
        axis_from_word(&m, &word(&m, "ABAb")).unwrap(),
    ];
    let json: serde_json::Value = serde_json::from_str(&catalog_json(&orbits)).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 2);
    assert_eq!(json[0]["id"], "A");
    assert_eq!(json[1]["rank"], "rank-one-certified");
}
