//! Sasaki distances, exact occupancy times, atomic measures and the
//! Prohorov distance between finitely supported measures.
//!
//! Prohorov feasibility at a level `eps` is a bipartite max-flow: supplies
//! `mu_i`, demands `nu_j`, an edge wherever `d(x_i, y_j) <= eps`; then
//! `max_S mu(S) - nu(N_eps(S)) = 1 - maxflow`, so the level is feasible iff
//! the flow reaches `1 - eps`. The deficiency is a step function that only
//! changes at pairwise distances, so searching over those thresholds gives
//! the infimum exactly.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flow::{canonicalize, integrate, Arc, ArcKind, TrajectorySegment, UnitTangent};
use crate::hyperbolic::{distance, frame_state, wrap_angle, Mat2, C64};
use crate::maxflow::FlowNetwork;
use crate::periodic::ClosedGeodesic;
use crate::surface::{ChartId, CylinderSpec, SurfaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    Exact,
    LowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SasakiDistance {
    pub value: f64,
    pub kind: DistanceKind,
}

/// Distance from the base point of `v` to the flat band (0 on the band).
pub fn distance_to_band(m: &SurfaceModel, v: &UnitTangent) -> f64 {
    let Ok(v) = canonicalize(m, v) else {
        return 0.0;
    };
    match v.chart {
        ChartId::Warped => m.warp.depth(v.c1).abs(),
        ChartId::Hyperbolic => m
            .hyperbolic
            .as_ref()
            .map_or(0.0, |hc| hc.certified_distance_to_cut(v.point())),
    }
}

fn edge_gap(m: &SurfaceModel, rho: f64) -> f64 {
    (rho - m.warp.flat_lo).min(m.warp.flat_hi - rho)
}

/// Sasaki distance: exact when both vectors lie over the band (flat product
/// metric), otherwise a certified lower bound from the 1-Lipschitz distance
/// to the band.
pub fn sasaki_distance(m: &SurfaceModel, a: &UnitTangent, b: &UnitTangent) -> SasakiDistance {
    let in_band = |v: &UnitTangent| v.chart == ChartId::Warped && m.warp.in_band(v.c1);
    if in_band(a) && in_band(b) {
        let dr = a.c1 - b.c1;
        let ds = m.warp.height * wrap_angle(a.c2 - b.c2);
        let da = wrap_angle(a.angle - b.angle);
        return SasakiDistance {
            value: (dr * dr + ds * ds + da * da).sqrt(),
            kind: DistanceKind::Exact,
        };
    }
    let (da, db) = (distance_to_band(m, a), distance_to_band(m, b));
    let mut lb = (da - db).abs();
    if in_band(a) {
        lb = lb.max(db + edge_gap(m, a.c1));
    } else if in_band(b) {
        lb = lb.max(da + edge_gap(m, b.c1));
    }
    if m.hyperbolic.is_none() && a.chart == ChartId::Warped && b.chart == ChartId::Warped {
        // rho is a global 1-Lipschitz coordinate on a surface of revolution
        lb = lb.max((a.c1 - b.c1).abs());
    }
    SasakiDistance {
        value: lb,
        kind: DistanceKind::LowerBound,
    }
}

/// Sasaki-type distance between two half-plane frames: base distance and
/// angle gap after parallel transport along the connecting geodesic.
pub fn frame_distance(fa: &Mat2, fb: &Mat2) -> f64 {
    let m = (fa.inverse() * *fb).normalized();
    let (w, psi) = frame_state(&m);
    let i = C64::new(0.0, 1.0);
    let d = distance(i, w);
    if d < 1e-300 {
        return wrap_angle(psi - FRAC_PI_2).abs();
    }
    let beta = ((w - i) / (w + i)).arg() + FRAC_PI_2;
    let turn = Mat2::rotation(beta - FRAC_PI_2);
    let moved = turn * Mat2::geodesic(d) * turn.inverse();
    let (_, psi_t) = frame_state(&moved);
    d.hypot(wrap_angle(psi - psi_t))
}

/// Residual metric for closure tests: exact Sasaki distance over the band,
/// the local product metric in the warped chart, and [`frame_distance`]
/// minimised over the domain pairings in the half-plane chart.
pub fn chartwise_distance(m: &SurfaceModel, a: &UnitTangent, b: &UnitTangent) -> f64 {
    let (Ok(a), Ok(mut b)) = (canonicalize(m, a), canonicalize(m, b)) else {
        return f64::INFINITY;
    };
    if a.chart != b.chart {
        let moved = match b.chart {
            ChartId::Warped => m.warped_to_hyperbolic(&b),
            ChartId::Hyperbolic => m.chart_transition(&b),
        };
        match moved {
            Ok(v) if v.chart == a.chart => b = v,
            _ => return f64::INFINITY,
        }
    }
    match a.chart {
        ChartId::Warped => {
            let f = m.warp.value(0.5 * (a.c1 + b.c1));
            let ds = if f.is_finite() { f * wrap_angle(a.c2 - b.c2) } else { f64::INFINITY };
            let dr = a.c1 - b.c1;
            (dr * dr + ds * ds + wrap_angle(a.angle - b.angle).powi(2)).sqrt()
        }
        ChartId::Hyperbolic => {
            let (fa, fb) = (a.frame(), b.frame());
            let mut best = frame_distance(&fa, &fb);
            if let Some(hc) = &m.hyperbolic {
                for s in &hc.sides {
                    best = best.min(frame_distance(&fa, &(s.element * fb)));
                }
            }
            best
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrbitDistance {
    Exact(f64),
    /// Off the band, hence farther than the band-edge gap of the orbit.
    Far,
}

fn vertical_data(m: &SurfaceModel, a: &ClosedGeodesic) -> Result<(f64, f64)> {
    let v = a.initial;
    if v.chart != ChartId::Warped || !m.warp.in_band(v.c1) || v.angle.sin() != 0.0 {
        return Err(LabError::NotApplicable("orbit is not a vertical band geodesic".into()));
    }
    Ok((v.c1, v.angle))
}

/// `sqrt(r^2 + theta^2)` for `v` over the band, with `r` the base distance to
/// the circle of `a` and `theta` the angle to its direction.
pub fn dist_to_orbit_a(m: &SurfaceModel, v: &UnitTangent, a: &ClosedGeodesic) -> Result<OrbitDistance> {
    let (rho_a, alpha_a) = vertical_data(m, a)?;
    if v.chart != ChartId::Warped || !m.warp.in_band(v.c1) {
        return Ok(OrbitDistance::Far);
    }
    let r = v.c1 - rho_a;
    let th = wrap_angle(v.angle - alpha_a);
    Ok(OrbitDistance::Exact(r.hypot(th)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RegionKind {
    /// Base in `]c - eps, c + eps[`, angle to the vertical in `]-theta, theta[`.
    Strip { theta: f64 },
    /// Sasaki `eps`-ball around a vertical orbit.
    OrbitBall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub kind: RegionKind,
    pub eps: f64,
    pub center: f64,
    pub direction: f64,
}

impl RegionSpec {
    fn check(m: &SurfaceModel, spec: &CylinderSpec, eps: f64) -> Result<f64> {
        let center = spec.rho(m);
        if !(eps > 0.0) || eps >= spec.d {
            return Err(LabError::InvalidParameter(format!(
                "need 0 < eps < d = {} (got {eps})",
                spec.d
            )));
        }
        Ok(center)
    }

    /// The strip and the `3 eps` tube around it must fit in the band.
    pub fn strip(m: &SurfaceModel, spec: &CylinderSpec, eps: f64, theta: f64) -> Result<Self> {
        let center = Self::check(m, spec, eps)?;
        if 3.0 * eps > spec.d {
            return Err(LabError::InvalidParameter(format!("need 3 eps <= d = {} (got eps = {eps})", spec.d)));
        }
        if !(theta > 0.0 && theta < 0.5 * PI) {
            return Err(LabError::InvalidParameter(format!("need 0 < theta < pi/2 (got {theta})")));
        }
        Ok(Self {
            kind: RegionKind::Strip { theta },
            eps,
            center,
            direction: 0.0,
        })
    }

    pub fn orbit_ball(m: &SurfaceModel, spec: &CylinderSpec, eps: f64) -> Result<Self> {
        let center = Self::check(m, spec, eps)?;
        Ok(Self {
            kind: RegionKind::OrbitBall,
            eps,
            center,
            direction: 0.0,
        })
    }

    /// Half-width in rho of the region at a given angle deviation, if any.
    fn half_width(&self, deviation: f64) -> Option<f64> {
        match self.kind {
            RegionKind::Strip { theta } => (deviation < theta).then_some(self.eps),
            RegionKind::OrbitBall => (deviation < self.eps).then(|| (self.eps * self.eps - deviation * deviation).sqrt()),
        }
    }

    pub fn contains(&self, m: &SurfaceModel, v: &UnitTangent) -> bool {
        if v.chart != ChartId::Warped || !m.warp.in_band(v.c1) {
            return false;
        }
        let dev = wrap_angle(v.angle - self.direction).abs();
        self.half_width(dev).is_some_and(|w| (v.c1 - self.center).abs() < w)
    }

    /// Time a flat arc spends in the region, in closed form.
    fn time_in_flat_arc(&self, start: &UnitTangent, duration: f64) -> f64 {
        let dev = wrap_angle(start.angle - self.direction).abs();
        let Some(w) = self.half_width(dev) else {
            return 0.0;
        };
        let s = start.angle.sin();
        let x0 = start.c1 - self.center;
        if s == 0.0 {
            return if x0.abs() < w { duration } else { 0.0 };
        }
        // |x0 + t s| < w  <=>  t in ((-w - x0)/s, (w - x0)/s) up to order
        let (a, b) = ((-w - x0) / s, (w - x0) / s);
        let (lo, hi) = (a.min(b).max(0.0), a.max(b).min(duration));
        (hi - lo).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyStats {
    pub total: f64,
    pub occupied: f64,
    pub fraction: f64,
}

/// Exact occupied time of a trajectory segment: the regions lie over the
/// band, where arcs are straight lines.
pub fn occupancy_of_segment(seg: &TrajectorySegment, region: &RegionSpec) -> OccupancyStats {
    let occupied: f64 = seg
        .arcs
        .iter()
        .filter(|a| matches!(a.kind, ArcKind::Flat))
        .map(|a: &Arc| {
            let start = if seg.reversed {
                // the flipped arc runs backwards through the same straight segment
                let mut s = a.start.flipped();
                s.c1 += a.duration() * a.start.angle.sin();
                s
            } else {
                a.start
            };
            region.time_in_flat_arc(&start, a.duration())
        })
        .sum();
    let total = seg.duration.abs();
    OccupancyStats {
        total,
        occupied,
        fraction: if total > 0.0 { occupied / total } else { 0.0 },
    }
}

pub fn occupancy(m: &SurfaceModel, v: &UnitTangent, duration: f64, region: &RegionSpec) -> Result<OccupancyStats> {
    if !(duration > 0.0) {
        return Err(LabError::InvalidParameter(format!("T must be positive (got {duration})")));
    }
    let seg = integrate(m, v, duration)?;
    Ok(occupancy_of_segment(&seg, region))
}

/// Finitely supported probability measure on the unit tangent bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    pub atoms: Vec<(UnitTangent, f64)>,
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<(UnitTangent, f64)>) -> Result<Self> {
        if atoms.is_empty() || atoms.iter().any(|a| !(a.1 > 0.0)) {
            return Err(LabError::InvalidParameter("atoms need positive weights".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LabError::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { atoms })
    }

    pub fn uniform(states: Vec<UnitTangent>) -> Result<Self> {
        if states.is_empty() {
            return Err(LabError::InvalidParameter("no atoms".into()));
        }
        let w = 1.0 / states.len() as f64;
        Ok(Self {
            atoms: states.into_iter().map(|s| (s, w)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.1).collect()
    }

    pub fn mass_of(&self, m: &SurfaceModel, region: &RegionSpec) -> f64 {
        self.atoms.iter().filter(|a| region.contains(m, &a.0)).map(|a| a.1).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("chart,coord1,coord2,alpha,weight\n");
        for (v, w) in &self.atoms {
            let chart = match v.chart {
                ChartId::Warped => "warped",
                ChartId::Hyperbolic => "hyperbolic",
            };
            out.push_str(&format!("{chart},{:.15},{:.15},{:.15},{:.17}\n", v.c1, v.c2, v.angle, w));
        }
        out
    }
}

/// Equal-weight atoms at `g_{k dt}(v)` for `k = 0..floor(T/dt)`.
pub fn empirical_from_trajectory(m: &SurfaceModel, seg: &TrajectorySegment, dt: f64) -> Result<AtomicMeasure> {
    let span = seg.duration.abs();
    if !(dt > 0.0) || span / dt < 10.0 {
        return Err(LabError::InvalidParameter(format!(
            "need dt > 0 and T/dt >= 10 (T = {span}, dt = {dt})"
        )));
    }
    let n = (span / dt * (1.0 + 1e-12)).floor() as usize;
    let sign = seg.duration.signum();
    let states: Vec<UnitTangent> = (0..n)
        .into_par_iter()
        .map(|k| seg.state_at(m, seg.t_start() + sign * k as f64 * dt))
        .collect::<Result<_>>()?;
    AtomicMeasure::uniform(states)
}

/// `n` arclength-uniform atoms along a closed geodesic.
pub fn dirac_on_closed_geodesic(m: &SurfaceModel, c: &ClosedGeodesic, n: usize) -> Result<AtomicMeasure> {
    if n == 0 {
        return Err(LabError::InvalidParameter("need at least one atom".into()));
    }
    let v = c.initial;
    let step = c.period / n as f64;
    let states: Vec<UnitTangent> = if v.chart == ChartId::Warped && m.warp.in_band(v.c1) && v.angle.sin() == 0.0 {
        let dir = v.angle.cos();
        (0..n)
            .map(|k| {
                let s = k as f64 * step;
                UnitTangent::warped(v.c1, v.c2 + dir * s / m.warp.height, v.angle, v.t + s)
            })
            .collect()
    } else {
        let seg = integrate(m, &v, c.period)?;
        (0..n)
            .map(|k| seg.state_at(m, v.t + k as f64 * step))
            .collect::<Result<_>>()?
    };
    AtomicMeasure::uniform(states)
}

/// Pairwise distance matrix (rows `mu`, columns `nu`) using
/// [`sasaki_distance`] values; lower bounds enter as they are.
pub fn distance_matrix(m: &SurfaceModel, mu: &AtomicMeasure, nu: &AtomicMeasure) -> Vec<Vec<f64>> {
    mu.atoms
        .par_iter()
        .map(|(a, _)| nu.atoms.iter().map(|(b, _)| sasaki_distance(m, a, b).value).collect())
        .collect()
}

/// `min(d, l/(l+2))`.
pub fn prohorov_lower_bound(spec: &CylinderSpec) -> f64 {
    spec.d.min(spec.l / (spec.l + 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// `mu(A) <= nu(V_eps(A)) + eps`
    Forward,
    /// `nu(A) <= mu(V_eps(A)) + eps`
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProhorovResult {
    pub distance: f64,
    pub lo: f64,
    pub hi: f64,
    pub forward: f64,
    pub backward: f64,
    pub witness_direction: Direction,
    /// Transport plan `(i, j, mass)` with `d_ij <= hi` moving at least `1 - hi`.
    pub coupling: Vec<(usize, usize, f64)>,
    /// Source-side indices `S` with `mass(S) - mass(N_lo(S)) > lo`.
    pub violating_set: Vec<usize>,
}

fn check_weights(w: &[f64]) -> Result<()> {
    let total: f64 = w.iter().sum();
    if w.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(LabError::InvalidParameter(format!("weights must be nonnegative and sum to 1 (sum {total})")));
    }
    Ok(())
}

fn check_matrix(dist: &[Vec<f64>], n: usize, k: usize) -> Result<()> {
    if dist.len() != n || dist.iter().any(|r| r.len() != k) {
        return Err(LabError::InvalidParameter(format!("distance matrix must be {n} x {k}")));
    }
    Ok(())
}

fn transpose(dist: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = dist.first().map_or(0, |r| r.len());
    (0..k).map(|j| dist.iter().map(|r| r[j]).collect()).collect()
}

/// Sorted distinct thresholds in `[0, 1]`, starting at 0.
fn thresholds(dist: &[Vec<f64>]) -> Vec<f64> {
    let mut t: Vec<f64> = dist.iter().flatten().copied().filter(|d| *d > 0.0 && *d <= 1.0).collect();
    t.push(0.0);
    t.par_sort_unstable_by(|a, b| a.total_cmp(b));
    t.dedup();
    t
}

/// Smallest `k` with `G(t_k) < t_{k+1}`; returns `max(t_k, G(t_k))` capped at 1.
fn threshold_search<F: FnMut(f64) -> f64>(t: &[f64], mut deficiency: F) -> f64 {
    let next = |k: usize| t.get(k + 1).copied().unwrap_or(f64::INFINITY);
    // G is nonincreasing and t increasing, so the predicate is monotone
    let (mut lo, mut hi) = (0usize, t.len() - 1);
    let mut g_hi = deficiency(t[hi]);
    while lo < hi {
        let mid = (lo + hi) / 2;
        let g = deficiency(t[mid]);
        if g < next(mid) {
            hi = mid;
            g_hi = g;
        } else {
            lo = mid + 1;
        }
    }
    t[hi].max(g_hi).min(1.0)
}

fn bruteforce_one_sided(a: &[f64], b: &[f64], dist: &[Vec<f64>]) -> f64 {
    let t = thresholds(dist);
    let n = a.len();
    threshold_search(&t, |eps| {
        let nbr: Vec<u32> = dist
            .iter()
            .map(|row| row.iter().enumerate().filter(|(_, d)| **d <= eps).fold(0u32, |acc, (j, _)| acc | (1 << j)))
            .collect();
        let mut best: f64 = 0.0;
        for s in 1u32..(1 << n) {
            let (mut mass, mut cover) = (0.0, 0u32);
            for i in 0..n {
                if s & (1 << i) != 0 {
                    mass += a[i];
                    cover |= nbr[i];
                }
            }
            let covered: f64 = (0..b.len()).filter(|j| cover & (1 << j) != 0).map(|j| b[j]).sum();
            best = best.max(mass - covered);
        }
        best
    })
}

/// Exact Prohorov distance by enumerating every subset of each support
/// (at most 12 atoms per side).
pub fn prohorov_bruteforce(mu: &[f64], nu: &[f64], dist: &[Vec<f64>]) -> Result<ProhorovResult> {
    for w in [mu, nu] {
        if w.len() > 12 {
            return Err(LabError::SizeLimit(w.len()));
        }
        check_weights(w)?;
    }
    check_matrix(dist, mu.len(), nu.len())?;
    let forward = bruteforce_one_sided(mu, nu, dist);
    let backward = bruteforce_one_sided(nu, mu, &transpose(dist));
    let (distance, dir) = if forward >= backward {
        (forward, Direction::Forward)
    } else {
        (backward, Direction::Backward)
    };
    Ok(ProhorovResult {
        distance,
        lo: distance,
        hi: distance,
        forward,
        backward,
        witness_direction: dir,
        coupling: Vec::new(),
        violating_set: Vec::new(),
    })
}

/// Bipartite feasibility network; edges sorted by distance so the graph at
/// any level is a prefix.
struct Coupler<'a> {
    a: &'a [f64],
    b: &'a [f64],
    edges: Vec<(f64, u32, u32)>,
}

impl<'a> Coupler<'a> {
    fn new(a: &'a [f64], b: &'a [f64], dist: &[Vec<f64>]) -> Self {
        let mut edges: Vec<(f64, u32, u32)> = dist
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, d)| **d <= 1.0)
                    .map(move |(j, d)| (*d, i as u32, j as u32))
            })
            .collect();
        edges.par_sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        Self { a, b, edges }
    }

    /// Runs the flow at level `eps`; returns the network, flow value and edge handles.
    fn solve(&self, eps: f64) -> (FlowNetwork, f64, Vec<((usize, usize), u32, u32)>) {
        let (n, k) = (self.a.len(), self.b.len());
        let (s, t) = (n + k, n + k + 1);
        let mut g = FlowNetwork::new(n + k + 2);
        for (i, w) in self.a.iter().enumerate() {
            if *w > 0.0 {
                g.add_edge(s, i, *w);
            }
        }
        for (j, w) in self.b.iter().enumerate() {
            if *w > 0.0 {
                g.add_edge(n + j, t, *w);
            }
        }
        let cut = self.edges.partition_point(|e| e.0 <= eps);
        let handles = self.edges[..cut]
            .iter()
            .map(|&(_, i, j)| (g.add_edge(i as usize, n + j as usize, f64::INFINITY), i, j))
            .collect();
        let f = g.max_flow(s, t);
        (g, f, handles)
    }

    fn deficiency(&self, eps: f64) -> f64 {
        (1.0 - self.solve(eps).1).max(0.0)
    }
}

struct OneSided {
    value: f64,
    lo: f64,
    coupling: Vec<(usize, usize, f64)>,
    violating: Vec<usize>,
}

fn flow_one_sided(a: &[f64], b: &[f64], dist: &[Vec<f64>], tol: f64) -> OneSided {
    let c = Coupler::new(a, b, dist);
    let mut t: Vec<f64> = c.edges.iter().map(|e| e.0).filter(|d| *d > 0.0).collect();
    t.insert(0, 0.0);
    t.dedup();
    let value = threshold_search(&t, |eps| c.deficiency(eps));
    let (g, _, handles) = c.solve(value);
    let coupling = handles
        .into_iter()
        .filter_map(|(h, i, j)| {
            let f = g.flow(h);
            (f > 0.0).then_some((i as usize, j as usize, f))
        })
        .collect();
    let lo = (value - tol * (1.0 - 1e-6)).max(0.0);
    let violating = if value > 0.0 {
        let (g, _, _) = c.solve(if lo < value { lo } else { 0.0 });
        let side = g.source_side(a.len() + b.len());
        (0..a.len()).filter(|i| side[*i] && a[*i] > 0.0).collect()
    } else {
        Vec::new()
    };
    OneSided {
        value,
        lo,
        coupling,
        violating,
    }
}

/// Prohorov distance via max-flow feasibility; `tol` sets the width of the
/// reported bracket `[lo, hi]`.
pub fn prohorov_flow(mu: &[f64], nu: &[f64], dist: &[Vec<f64>], tol: f64) -> Result<ProhorovResult> {
    check_weights(mu)?;
    check_weights(nu)?;
    check_matrix(dist, mu.len(), nu.len())?;
    if !(tol > 0.0) {
        return Err(LabError::InvalidParameter(format!("tolerance must be positive (got {tol})")));
    }
    let dt = transpose(dist);
    let (f, b) = rayon::join(|| flow_one_sided(mu, nu, dist, tol), || flow_one_sided(nu, mu, &dt, tol));
    let (w, dir) = if f.value >= b.value {
        (&f, Direction::Forward)
    } else {
        (&b, Direction::Backward)
    };
    Ok(ProhorovResult {
        distance: w.value,
        lo: w.lo,
        hi: w.value,
        forward: f.value,
        backward: b.value,
        witness_direction: dir,
        coupling: w.coupling.clone(),
        violating_set: w.violating.clone(),
    })
}

/// Checks the witnesses of a flow result against the distance matrix.
pub fn verify_witnesses(r: &ProhorovResult, mu: &[f64], nu: &[f64], dist: &[Vec<f64>]) -> bool {
    let (a, b, d): (&[f64], &[f64], Vec<Vec<f64>>) = match r.witness_direction {
        Direction::Forward => (mu, nu, dist.to_vec()),
        Direction::Backward => (nu, mu, transpose(dist)),
    };
    let moved: f64 = r.coupling.iter().map(|c| c.2).sum();
    let plan_ok = r.coupling.iter().all(|&(i, j, _)| d[i][j] <= r.hi) && moved >= 1.0 - r.hi - 1e-12;
    if r.distance == 0.0 {
        return plan_ok;
    }
    let mass: f64 = r.violating_set.iter().map(|i| a[*i]).sum();
    let covered: f64 = (0..b.len())
        .filter(|j| r.violating_set.iter().any(|i| d[*i][*j] <= r.lo))
        .map(|j| b[j])
        .sum();
    plan_ok && mass - covered > r.lo - 1e-12
}

/// Compressed Prohorov instance against the uniform measure on a vertical
/// orbit, with the largest distance any atom was moved by the compression.
#[derive(Debug, Clone)]
pub struct CompressedInstance {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub dist: Vec<Vec<f64>>,
    pub shift: f64,
}

/// Bins `mu` against `n_delta` equally spaced atoms on the vertical orbit
/// `a`: band atoms snap to the nearest orbit circle position and to a grid
/// of step `eta` in `sqrt(drho^2 + dalpha^2)`; off-band atoms keep only their
/// distance lower bound (rounded down). Atoms farther than 1 are merged, as
/// no level in `[0, 1]` connects them.
pub fn compress_against_vertical(
    m: &SurfaceModel,
    mu: &AtomicMeasure,
    a: &ClosedGeodesic,
    n_delta: usize,
    eta: f64,
) -> Result<CompressedInstance> {
    let (rho_a, alpha_a) = vertical_data(m, a)?;
    if n_delta == 0 || !(eta > 0.0) {
        return Err(LabError::InvalidParameter("need n_delta >= 1 and eta > 0".into()));
    }
    let h = m.warp.height;
    let phi_a = a.initial.c2;
    let gap_a = edge_gap(m, rho_a);
    let r_bins = (1.0 / eta).ceil() as usize + 1;
    // band bins (phi index, r bin), then off-band lower-bound bins, then far
    let mut band = vec![0.0; n_delta * r_bins];
    let mut off = vec![0.0; r_bins];
    let mut far = 0.0;
    for (v, w) in &mu.atoms {
        let v = canonicalize(m, v)?;
        if v.chart == ChartId::Warped && m.warp.in_band(v.c1) {
            let r = (v.c1 - rho_a).hypot(wrap_angle(v.angle - alpha_a));
            let rb = (r / eta).round() as usize;
            if rb >= r_bins || rb as f64 * eta > 1.0 {
                far += w;
                continue;
            }
            let j = ((v.c2 - phi_a).rem_euclid(TAU) / TAU * n_delta as f64).round() as usize % n_delta;
            band[j * r_bins + rb] += w;
        } else {
            let lb = distance_to_band(m, &v) + gap_a;
            let rb = (lb / eta).floor() as usize;
            if rb as f64 * eta > 1.0 || rb >= r_bins {
                far += w;
            } else {
                off[rb] += w;
            }
        }
    }
    let mut mu_w = Vec::new();
    let mut dist = Vec::new();
    let circle = |j: usize, jj: usize| {
        let k = (j as i64 - jj as i64).rem_euclid(n_delta as i64) as usize;
        let k = k.min(n_delta - k);
        h * TAU * k as f64 / n_delta as f64
    };
    for j in 0..n_delta {
        for rb in 0..r_bins {
            let w = band[j * r_bins + rb];
            if w > 0.0 {
                let r = rb as f64 * eta;
                mu_w.push(w);
                dist.push((0..n_delta).map(|jj| r.hypot(circle(j, jj))).collect());
            }
        }
    }
    for (rb, w) in off.iter().enumerate() {
        if *w > 0.0 {
            mu_w.push(*w);
            dist.push(vec![rb as f64 * eta; n_delta]);
        }
    }
    if far > 0.0 {
        mu_w.push(far);
        dist.push(vec![f64::INFINITY; n_delta]);
    }
    let total: f64 = mu_w.iter().sum();
    mu_w.iter_mut().for_each(|w| *w /= total);
    Ok(CompressedInstance {
        mu: mu_w,
        nu: vec![1.0 / n_delta as f64; n_delta],
        dist,
        shift: (0.5 * eta).hypot(h * PI / n_delta as f64),
    })
}
