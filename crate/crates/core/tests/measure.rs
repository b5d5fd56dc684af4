use std::f64::consts::{FRAC_PI_2, TAU};

use approx::assert_abs_diff_eq;
use flatcyl::flow::*;
use flatcyl::measure::*;
use flatcyl::periodic::*;
use flatcyl::surface::*;
use flatcyl::LabError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn funnels() -> SurfaceModel {
    build_cylinder_with_funnels(4.0, 1.0).unwrap()
}

fn torus() -> SurfaceModel {
    build_flat_cylinder_torus(PUNCTURED_TORUS_GENERATORS, 4.0).unwrap()
}

/// A half-plane point of the torus outside the collar.
fn outside() -> flatcyl::hyperbolic::C64 {
    flatcyl::hyperbolic::C64::new(0.0, 2.0)
}

/// `inf { eps : max_S mu(S) - nu(N_eps(S)) <= eps }` by bisection, with the
/// deficiency evaluated straight from the definition.
fn oracle_one_sided(a: &[f64], b: &[f64], d: &[Vec<f64>]) -> f64 {
    let deficiency = |eps: f64| {
        let mut best: f64 = 0.0;
        for s in 1usize..(1 << a.len()) {
            let mass: f64 = (0..a.len()).filter(|i| s >> i & 1 == 1).map(|i| a[i]).sum();
            let covered: f64 = (0..b.len())
                .filter(|j| (0..a.len()).any(|i| s >> i & 1 == 1 && d[i][*j] <= eps))
                .map(|j| b[j])
                .sum();
            best = best.max(mass - covered);
        }
        best
    };
    if deficiency(0.0) <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if deficiency(mid) <= mid {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn oracle(mu: &[f64], nu: &[f64], d: &[Vec<f64>]) -> f64 {
    let dt: Vec<Vec<f64>> = (0..nu.len()).map(|j| d.iter().map(|r| r[j]).collect()).collect();
    oracle_one_sided(mu, nu, d).max(oracle_one_sided(nu, mu, &dt))
}

fn random_instance(rng: &mut ChaCha8Rng, max_atoms: usize) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }
    let (n, k) = (rng.gen_range(1..=max_atoms), rng.gen_range(1..=max_atoms));
    let (mu, nu) = (weights(rng, n), weights(rng, k));
    let d = (0..n).map(|_| (0..k).map(|_| rng.gen_range(0.0..1.3)).collect()).collect();
    (mu, nu, d)
}

#[test]
fn sasaki_examples() {
    let m = funnels();
    let a = UnitTangent::warped(0.1, 1.0, 0.0, 0.0);
    let b = UnitTangent::warped(0.1 + 0.37, 1.0, 0.0, 0.0);
    let d = sasaki_distance(&m, &a, &b);
    assert_eq!(d.kind, DistanceKind::Exact);
    assert_abs_diff_eq!(d.value, 0.37, epsilon = 1e-15);

    let c = UnitTangent::warped(0.1, 1.0, 0.25, 0.0);
    assert_abs_diff_eq!(sasaki_distance(&m, &a, &c).value, 0.25, epsilon = 1e-15);

    let far = UnitTangent::warped(m.warp.flat_hi + 0.7, 2.0, 1.0, 0.0);
    let d = sasaki_distance(&m, &a, &far);
    assert_eq!(d.kind, DistanceKind::LowerBound);
    assert!(d.value >= 0.7);
    assert!(d.value > 0.5);
}

#[test]
fn sasaki_lower_bound_in_half_plane() {
    let m = torus();
    let a = UnitTangent::warped(0.0, 0.0, 0.0, 0.0);
    let v = UnitTangent::hyperbolic(outside(), 0.2, 0.0);
    let d = sasaki_distance(&m, &a, &v);
    assert_eq!(d.kind, DistanceKind::LowerBound);
    // at least the edge gap of the band point
    assert!(d.value >= 2.0);
}

#[test]
fn orbit_distance_examples() {
    let m = funnels();
    let spec = CylinderSpec::middle(&m).unwrap();
    let a = designated_geodesic(&m, &spec).unwrap();
    let on = a.initial;
    assert_eq!(dist_to_orbit_a(&m, &on, &a).unwrap(), OrbitDistance::Exact(0.0));
    let v = UnitTangent::warped(on.c1 + 0.06, 2.5, 0.08, 0.0);
    match dist_to_orbit_a(&m, &v, &a).unwrap() {
        OrbitDistance::Exact(x) => assert_abs_diff_eq!(x, 0.1, epsilon = 1e-15),
        other => panic!("{other:?}"),
    }
    let t = torus();
    let spec = CylinderSpec::middle(&t).unwrap();
    let a = designated_geodesic(&t, &spec).unwrap();
    let hv = UnitTangent::hyperbolic(outside(), 0.0, 0.0);
    assert_eq!(dist_to_orbit_a(&t, &hv, &a).unwrap(), OrbitDistance::Far);
    let oblique = UnitTangent::warped(0.0, 0.0, 0.5, 0.0);
    let bad = ClosedGeodesic { initial: oblique, ..a };
    assert!(matches!(dist_to_orbit_a(&t, &hv, &bad), Err(LabError::NotApplicable(_))));
}

#[test]
fn region_validation() {
    let m = funnels();
    let spec = CylinderSpec::new(4.0, 1.0, 0.3).unwrap();
    assert!(RegionSpec::orbit_ball(&m, &spec, 0.3).is_err());
    assert!(RegionSpec::orbit_ball(&m, &spec, 0.29).is_ok());
    assert!(RegionSpec::strip(&m, &spec, 0.1, 0.0).is_err());
    assert!(RegionSpec::strip(&m, &spec, 0.1, FRAC_PI_2).is_err());
    assert!(RegionSpec::strip(&m, &spec, 0.11, 0.3).is_err());
    assert!(RegionSpec::strip(&m, &spec, 0.09, 0.3).is_ok());
}

/// One crossing of `V_eps(A)`, sampled on a fine grid as an oracle.
fn crossing(m: &SurfaceModel, eps: f64, theta: f64) -> (OccupancyStats, RegionSpec, TrajectorySegment) {
    let spec = CylinderSpec::middle(m).unwrap();
    let region = RegionSpec::orbit_ball(m, &spec, eps).unwrap();
    let v = UnitTangent::warped(m.warp.flat_lo, 0.4, theta, 0.0);
    let seg = integrate(m, &v, spec.l / theta.sin() + 1.0).unwrap();
    (occupancy_of_segment(&seg, &region), region, seg)
}

#[test]
fn window_time_formula() {
    let m = funnels();
    for (eps, theta) in [(0.5, 0.3), (0.2, 0.05), (1.0, 0.9)] {
        let (stats, region, seg) = crossing(&m, eps, theta);
        let expected = 2.0 * (eps * eps - theta * theta).sqrt() / theta.sin();
        assert_abs_diff_eq!(stats.occupied, expected, epsilon = 1e-9);
        // Riemann-sum oracle
        let n = 200_000;
        let dt = seg.duration / n as f64;
        let hits = (0..n)
            .filter(|k| region.contains(&m, &seg.state_at(&m, (*k as f64 + 0.5) * dt).unwrap()))
            .count();
        assert!((hits as f64 * dt - expected).abs() < 4.0 * dt);
        // fraction of the band transit
        let transit = 4.0 / theta.sin();
        assert_abs_diff_eq!(stats.occupied / transit, 2.0 * (eps * eps - theta * theta).sqrt() / 4.0, epsilon = 1e-9);
        assert!(stats.occupied / transit <= 2.0 * eps / 4.0);
    }
    let (stats, _, _) = crossing(&m, 0.2, 0.3);
    assert_eq!(stats.occupied, 0.0);
}

#[test]
fn occupancy_is_exact() {
    let m = torus();
    let spec = CylinderSpec::middle(&m).unwrap();
    let region = RegionSpec::strip(&m, &spec, 0.5, 0.4).unwrap();
    let v = UnitTangent::warped(-1.9, 0.3, 0.2, 0.0);
    let a = occupancy_of_segment(&integrate_with_tol(&m, &v, 40.0, 1e-10).unwrap(), &region);
    let b = occupancy_of_segment(&integrate_with_tol(&m, &v, 40.0, 1e-11).unwrap(), &region);
    assert!(a.occupied > 0.0);
    assert!((a.occupied - b.occupied).abs() < 1e-9);
    assert!(occupancy(&m, &v, 0.0, &region).is_err());
}

#[test]
fn reversed_occupancy_matches_forward() {
    let m = funnels();
    let spec = CylinderSpec::middle(&m).unwrap();
    let region = RegionSpec::orbit_ball(&m, &spec, 0.6).unwrap();
    let theta: f64 = 0.3;
    let v = UnitTangent::warped(m.warp.flat_hi, 0.4, theta, 0.0);
    let back = integrate(&m, &v, -4.0 / theta.sin()).unwrap();
    assert!(back.reversed);
    let b = occupancy_of_segment(&back, &region).occupied;
    assert_abs_diff_eq!(b, 2.0 * (0.36f64 - theta * theta).sqrt() / theta.sin(), epsilon = 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn strip_fraction_at_most_half(x in -0.4f64..0.4, y in 0.3f64..0.9, psi in 0.0..TAU, t in 50.0f64..400.0) {
        let m = torus();
        let spec = CylinderSpec::middle(&m).unwrap();
        let region = RegionSpec::strip(&m, &spec, 0.6, 0.5).unwrap();
        let v = UnitTangent::hyperbolic(flatcyl::hyperbolic::C64::new(x, y), psi, 0.0);
        let stats = occupancy(&m, &v, t, &region).unwrap();
        prop_assert!(stats.fraction <= 0.5);
        prop_assert!(stats.fraction >= 0.0);
    }

    #[test]
    fn per_transit_window_time(eps in 0.05f64..1.9, ratio in 0.05f64..0.95) {
        let m = funnels();
        let theta = eps * ratio;
        let (stats, _, _) = crossing(&m, eps, theta);
        let expected = 2.0 * (eps * eps - theta * theta).sqrt() / theta.sin();
        prop_assert!((stats.occupied - expected).abs() < 1e-9);
    }
}

#[test]
fn empirical_measures() {
    let m = funnels();
    let c = designated_geodesic(&m, &CylinderSpec::middle(&m).unwrap()).unwrap();
    let seg = integrate(&m, &c.initial, c.period).unwrap();
    let mu = empirical_from_trajectory(&m, &seg, c.period / 16.0).unwrap();
    assert_eq!(mu.len(), 16);
    assert_abs_diff_eq!(mu.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    for (v, _) in &mu.atoms {
        assert_eq!(dist_to_orbit_a(&m, v, &c).unwrap(), OrbitDistance::Exact(0.0));
    }
    assert!(empirical_from_trajectory(&m, &seg, c.period / 5.0).is_err());
    assert!(empirical_from_trajectory(&m, &seg, 0.0).is_err());

    // sampled occupancy tracks the exact one up to O(dt / T)
    let t = torus();
    let spec = CylinderSpec::middle(&t).unwrap();
    let region = RegionSpec::strip(&t, &spec, 0.5, 0.6).unwrap();
    let v = UnitTangent::hyperbolic(outside(), 0.9, 0.0);
    let seg = integrate(&t, &v, 2000.0).unwrap();
    let exact = occupancy_of_segment(&seg, &region).fraction;
    let mu = empirical_from_trajectory(&t, &seg, 0.01).unwrap();
    let sampled = mu.mass_of(&t, &region);
    let transits = transit_report(&seg).transits.len() as f64 + 2.0;
    assert!((exact - sampled).abs() <= 2.0 * transits * 0.01 / 2000.0 + 1e-3, "{exact} vs {sampled}");
}

#[test]
fn dirac_measures() {
    let m = funnels();
    let c = designated_geodesic(&m, &CylinderSpec::middle(&m).unwrap()).unwrap();
    let one = dirac_on_closed_geodesic(&m, &c, 1).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one.atoms[0].0.c1, c.initial.c1);
    let n = 1024;
    let d = dirac_on_closed_geodesic(&m, &c, n).unwrap();
    assert_eq!(d.len(), n);
    for (k, (v, w)) in d.atoms.iter().enumerate() {
        assert_eq!(*w, 1.0 / n as f64);
        assert_eq!(dist_to_orbit_a(&m, v, &c).unwrap(), OrbitDistance::Exact(0.0));
        assert_abs_diff_eq!(v.t, k as f64 * c.period / n as f64, epsilon = 1e-12);
    }
    let gap = sasaki_distance(&m, &d.atoms[0].0, &d.atoms[1].0).value;
    assert_abs_diff_eq!(gap, c.period / n as f64, epsilon = 1e-12);
    assert!(dirac_on_closed_geodesic(&m, &c, 0).is_err());
    assert!(d.to_csv().starts_with("chart,coord1,coord2,alpha,weight\n"));
}

#[test]
fn atomic_measure_validation() {
    let v = UnitTangent::warped(0.0, 0.0, 0.0, 0.0);
    assert!(AtomicMeasure::new(vec![(v, 0.5), (v, 0.5)]).is_ok());
    assert!(AtomicMeasure::new(vec![(v, 0.5), (v, 0.4)]).is_err());
    assert!(AtomicMeasure::new(vec![(v, 1.5), (v, -0.5)]).is_err());
    assert!(AtomicMeasure::uniform(vec![]).is_err());
}

#[test]
fn prohorov_analytic_cases() {
    let same = vec![vec![0.0, 0.4], vec![0.4, 0.0]];
    let w = [0.5, 0.5];
    assert_eq!(prohorov_bruteforce(&w, &w, &same).unwrap().distance, 0.0);
    assert_eq!(prohorov_flow(&w, &w, &same, 1e-9).unwrap().distance, 0.0);

    for d in [0.3, 0.75, 1.0, 1.7] {
        let dm = vec![vec![d]];
        let b = prohorov_bruteforce(&[1.0], &[1.0], &dm).unwrap();
        let f = prohorov_flow(&[1.0], &[1.0], &dm, 1e-9).unwrap();
        assert_abs_diff_eq!(b.distance, d.min(1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(f.distance, d.min(1.0), epsilon = 1e-12);
    }

    let half = vec![vec![0.0], vec![1.0]];
    let b = prohorov_bruteforce(&[0.5, 0.5], &[1.0], &half).unwrap();
    let f = prohorov_flow(&[0.5, 0.5], &[1.0], &half, 1e-9).unwrap();
    assert_abs_diff_eq!(b.distance, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(f.distance, 0.5, epsilon = 1e-12);
    assert!(verify_witnesses(&f, &[0.5, 0.5], &[1.0], &half));
    assert_eq!(f.violating_set, vec![1]);
}

#[test]
fn prohorov_flow_matches_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (mu, nu, d) = random_instance(&mut rng, 4);
        let b = prohorov_bruteforce(&mu, &nu, &d).unwrap();
        let f = prohorov_flow(&mu, &nu, &d, 1e-9).unwrap();
        let o = oracle(&mu, &nu, &d);
        assert!((b.distance - f.distance).abs() < 1e-9, "{b:?} {f:?}");
        assert!((b.distance - o).abs() < 1e-12, "{} vs oracle {o}", b.distance);
        assert!(f.hi - f.lo <= 1e-9);
        assert!(verify_witnesses(&f, &mu, &nu, &d), "{f:?} {mu:?} {nu:?} {d:?}");
        assert_eq!(b.distance, b.forward.max(b.backward));
    }
}

#[test]
fn prohorov_larger_instances_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let (mu, nu, d) = random_instance(&mut rng, 9);
        let f = prohorov_flow(&mu, &nu, &d, 1e-9).unwrap();
        let b = prohorov_bruteforce(&mu, &nu, &d).unwrap();
        assert!((f.distance - b.distance).abs() < 1e-9);
        let dt: Vec<Vec<f64>> = (0..nu.len()).map(|j| d.iter().map(|r| r[j]).collect()).collect();
        let g = prohorov_flow(&nu, &mu, &dt, 1e-9).unwrap();
        assert!((f.distance - g.distance).abs() < 1e-9);
        assert!(verify_witnesses(&f, &mu, &nu, &d));
    }
    let big = vec![1.0 / 13.0; 13];
    let d = vec![vec![0.5; 13]; 13];
    assert_eq!(prohorov_bruteforce(&big, &big, &d).unwrap_err(), LabError::SizeLimit(13));
    assert!(prohorov_flow(&big, &big, &d, 1e-9).is_ok());
    assert!(prohorov_flow(&[0.5], &[1.0], &[vec![0.1]], 1e-9).is_err());
    let json = serde_json::to_string(&prohorov_flow(&big, &big, &d, 1e-9).unwrap()).unwrap();
    assert!(json.contains("coupling"));
}

#[test]
fn lower_bound_formula() {
    let spec = CylinderSpec::new(4.0, 1.0, 2.0).unwrap();
    assert_abs_diff_eq!(prohorov_lower_bound(&spec), 2.0 / 3.0, epsilon = 1e-15);
    let spec = CylinderSpec::new(4.0, 1.0, 0.1).unwrap();
    assert_eq!(prohorov_lower_bound(&spec), 0.1);
    let l = 1000.0;
    let spec = CylinderSpec::new(l, 1.0, l / 2.0).unwrap();
    let b = prohorov_lower_bound(&spec);
    assert!(b < 1.0);
    assert_abs_diff_eq!(b, 1.0 - 2.0 / l, epsilon = 1e-5);
}

#[test]
fn compression_against_orbit() {
    let m = torus();
    let spec = CylinderSpec::middle(&m).unwrap();
    let a = designated_geodesic(&m, &spec).unwrap();
    // the Dirac measure itself compresses onto the orbit atoms
    let delta = dirac_on_closed_geodesic(&m, &a, 64).unwrap();
    let ci = compress_against_vertical(&m, &delta, &a, 64, 0.01).unwrap();
    let r = prohorov_flow(&ci.mu, &ci.nu, &ci.dist, 1e-9).unwrap();
    assert!(r.distance <= ci.shift + 1e-9);
    // direct computation on a small empirical measure agrees within the shift
    let v = UnitTangent::warped(-1.9, 0.3, 0.2, 0.0);
    let seg = integrate(&m, &v, 30.0).unwrap();
    let mu = empirical_from_trajectory(&m, &seg, 0.5).unwrap();
    let direct = prohorov_flow(&mu.weights(), &delta.weights(), &distance_matrix(&m, &mu, &delta), 1e-9).unwrap();
    let ci = compress_against_vertical(&m, &mu, &a, 64, 0.01).unwrap();
    let packed = prohorov_flow(&ci.mu, &ci.nu, &ci.dist, 1e-9).unwrap();
    assert!((direct.distance - packed.distance).abs() <= ci.shift + 1e-9, "{} vs {}", direct.distance, packed.distance);
}

#[test]
fn chartwise_distance_basics() {
    let m = torus();
    let v = UnitTangent::hyperbolic(outside(), 0.3, 0.0);
    assert!(chartwise_distance(&m, &v, &v) < 1e-12);
    let w = UnitTangent::hyperbolic(outside(), 0.55, 0.0);
    assert_abs_diff_eq!(chartwise_distance(&m, &v, &w), 0.25, epsilon = 1e-12);
    let g = step_exact_hyperbolic(&m, &v, 0.2).unwrap();
    assert_abs_diff_eq!(chartwise_distance(&m, &v, &g), 0.2, epsilon = 1e-9);
}
