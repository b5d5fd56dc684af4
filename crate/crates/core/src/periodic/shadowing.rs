//! Shadowing searches around pseudo-orbits and the transit-sign obstruction.
//!
//! The quantity minimised is the closing defect of a candidate `u` with
//! period `T'` near `T`: the larger of the closure gap `d(g_T' u, u)` and the
//! largest distance between the orbit of `u` and the pseudo-orbit over
//! `[0, T - 1]`. A periodic orbit satisfying the closing lemma for the
//! pseudo-orbit has a small defect; unrelated closed orbits do not.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{shoot, ClosedGeodesic};
use crate::error::{LabError, Result};
use crate::flow::{canonicalize, integrate, is_rank_one, transit_report, ArcKind, TrajectorySegment, Transit, UnitTangent};
use crate::hyperbolic::{wrap_angle, Word};
use crate::measure::{chartwise_distance, sasaki_distance};
use crate::surface::{ChartId, CylinderSpec, SurfaceModel};

const DEVIATION_SAMPLES: usize = 64;
const SHOOT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowingQuery {
    /// Orbit segment from the start vector `w`; its duration is the period `T`.
    pub pseudo_orbit: TrajectorySegment,
    /// `d(g_T(w), w)`.
    pub gap: f64,
    /// Shadowing tolerance.
    pub eps: f64,
    /// Minimal period considered.
    pub t0: f64,
    /// Radius of the neighbourhood of `w` searched for closed orbits.
    pub radius: f64,
}

impl ShadowingQuery {
    pub fn new(m: &SurfaceModel, w: &UnitTangent, period: f64, eps: f64, radius: f64) -> Result<Self> {
        if !(period > 0.0 && eps > 0.0 && radius > 0.0) {
            return Err(LabError::InvalidParameter("period, eps and radius must be positive".into()));
        }
        let pseudo_orbit = integrate(m, w, period)?;
        let gap = chartwise_distance(m, &pseudo_orbit.initial, &pseudo_orbit.end);
        Ok(Self {
            pseudo_orbit,
            gap,
            eps,
            t0: (period - 1.0).max(0.0),
            radius,
        })
    }

    pub fn period(&self) -> f64 {
        self.pseudo_orbit.duration
    }

    pub fn start(&self) -> UnitTangent {
        self.pseudo_orbit.initial
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstructionCertificate {
    /// Entry side of the transit through the start of the pseudo-orbit.
    pub enter_sign: i8,
    /// Entry side forced on a closing orbit by the return transit.
    pub required_sign: i8,
    /// Angles to the vertical of the two transits.
    pub theta_enter: f64,
    pub theta_return: f64,
    pub eps: f64,
    pub verdict: String,
}

fn angle_to_vertical(alpha: f64) -> f64 {
    let a = wrap_angle(alpha);
    if a.abs() <= 0.5 * std::f64::consts::PI {
        a
    } else {
        wrap_angle(a + std::f64::consts::PI)
    }
}

/// Pure sign logic on two complete band crossings: a closed orbit following
/// both would cross the band in the same direction each time, while the
/// straight lines of the band force the entry sides observed.
pub fn transit_sign_certificate(first: &Transit, last: &Transit, eps: f64) -> Result<Option<ObstructionCertificate>> {
    if !first.crossed || !last.crossed {
        return Err(LabError::NotApplicable("transit does not cross the band".into()));
    }
    if first.sign == last.sign {
        return Ok(None);
    }
    Ok(Some(ObstructionCertificate {
        enter_sign: first.sign,
        required_sign: last.sign,
        theta_enter: angle_to_vertical(first.enter.state.angle),
        theta_return: angle_to_vertical(last.enter.state.angle),
        eps,
        verdict: "no closed orbit shadows both transits".into(),
    }))
}

/// Extends the pseudo-orbit until the transits through its endpoints are
/// complete and returns the first and last of them.
pub fn endpoint_transits(m: &SurfaceModel, seg: &TrajectorySegment) -> Result<(Transit, Transit)> {
    let extension = |v: &UnitTangent, forward: bool| -> f64 {
        if v.chart != ChartId::Warped || !m.warp.in_band(v.c1) {
            return 0.0;
        }
        let s = v.angle.sin() * if forward { 1.0 } else { -1.0 };
        let to_edge = if s > 0.0 {
            m.warp.flat_hi - v.c1
        } else if s < 0.0 {
            v.c1 - m.warp.flat_lo
        } else {
            f64::INFINITY
        };
        to_edge / s.abs() + 1e-3
    };
    let (back, fwd) = (extension(&seg.initial, false), extension(&seg.end, true));
    if !back.is_finite() || !fwd.is_finite() {
        return Err(LabError::NotApplicable("vertical segment has no transit".into()));
    }
    let start = if back > 0.0 {
        integrate(m, &seg.initial, -back)?.end
    } else {
        seg.initial
    };
    let ext = integrate(m, &start, back + seg.duration + fwd)?;
    let report = transit_report(&ext);
    match (report.transits.first(), report.transits.last()) {
        (Some(a), Some(b)) if report.transits.len() >= 2 => Ok((a.clone(), b.clone())),
        _ => Err(LabError::NotApplicable("pseudo-orbit has fewer than two complete transits".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum ShadowingOutcome {
    Closed {
        orbit: ClosedGeodesic,
        shadowing_distance: f64,
    },
    Obstructed {
        certificate: ObstructionCertificate,
        min_residual: f64,
        candidates: usize,
    },
    BestResidual {
        residual: f64,
        period: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub n_position: usize,
    pub n_angle: usize,
    /// Number of best grid points handed to the shooting solver.
    pub refine: usize,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            n_position: 200,
            n_angle: 200,
            refine: 8,
        }
    }
}

/// Exact minimum over the flat arcs of `seg` inside `[ta, tb]` of the Sasaki
/// distance to `u`, capped at the distance from `u` to the band edges.
fn flat_closure(m: &SurfaceModel, seg: &TrajectorySegment, u: &UnitTangent, ta: f64, tb: f64) -> (f64, f64) {
    let h = m.warp.height;
    let circ = TAU * h;
    let cap = (u.c1 - m.warp.flat_lo).min(m.warp.flat_hi - u.c1);
    let mut best = (cap, f64::NAN);
    for arc in seg.arcs.iter().filter(|a| matches!(a.kind, ArcKind::Flat)) {
        let (lo, hi) = (arc.t0.max(ta), arc.t1.min(tb));
        if lo > hi {
            continue;
        }
        let s = &arc.start;
        let (sn, cs) = s.angle.sin_cos();
        let da = wrap_angle(s.angle - u.angle);
        let (lo, hi) = (lo - arc.t0, hi - arc.t0);
        let x0 = s.c1 - u.c1;
        let y0 = h * wrap_angle(s.c2 - u.c2);
        let (ya, yb) = (y0 + lo * cs, y0 + hi * cs);
        let kmin = (-(ya.max(yb)) / circ).floor() as i64 - 1;
        let kmax = (-(ya.min(yb)) / circ).ceil() as i64 + 1;
        for k in kmin..=kmax {
            let y = y0 + k as f64 * circ;
            let t = (-(x0 * sn + y * cs)).clamp(lo, hi);
            let (dx, dy) = (x0 + t * sn, y + t * cs);
            let d = (dx * dx + dy * dy + da * da).sqrt();
            if d < best.0 {
                best = (d, arc.t0 + t - u.t);
            }
        }
    }
    best
}

/// Largest distance between the orbits of `u` and of the pseudo-orbit start
/// over `[0, span]`, sampled.
fn deviation(m: &SurfaceModel, seg_u: &TrajectorySegment, pseudo: &TrajectorySegment, span: f64) -> f64 {
    (0..=DEVIATION_SAMPLES)
        .map(|k| {
            let tau = span * k as f64 / DEVIATION_SAMPLES as f64;
            match (
                seg_u.state_at(m, seg_u.t_start() + tau),
                pseudo.state_at(m, pseudo.t_start() + tau),
            ) {
                (Ok(a), Ok(b)) => chartwise_distance(m, &a, &b),
                _ => f64::INFINITY,
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    defect: f64,
    period: f64,
    start: UnitTangent,
}

fn better(a: Candidate, b: Candidate) -> Candidate {
    match a.defect.total_cmp(&b.defect).then(a.period.total_cmp(&b.period)) {
        std::cmp::Ordering::Greater => b,
        _ => a,
    }
}

/// Grid over the section `rho = rho(w)` around the start vector, in
/// `(h * phi, alpha)` within the query radius.
fn grid_candidates(m: &SurfaceModel, q: &ShadowingQuery, grid: &SearchGrid) -> Vec<Candidate> {
    let w = q.start();
    let h = m.warp.height;
    let period = q.period();
    let (ta, tb) = ((period - 1.0).max(q.t0), period + 1.0);
    let span = (period - 1.0).max(0.0);
    let np = grid.n_position.max(1);
    let na = grid.n_angle.max(1);
    let coord = |k: usize, n: usize| if n == 1 { 0.0 } else { q.radius * (2.0 * k as f64 / (n - 1) as f64 - 1.0) };
    (0..np * na)
        .into_par_iter()
        .filter_map(|idx| {
            let (i, j) = (idx / na, idx % na);
            let u = UnitTangent::warped(w.c1, w.c2 + coord(i, np) / h, w.angle + coord(j, na), w.t);
            let seg = integrate(m, &u, tb).ok()?;
            let (closure, t_best) = flat_closure(m, &seg, &u, u.t + ta, u.t + tb);
            let dev = deviation(m, &seg, &q.pseudo_orbit, span);
            Some(Candidate {
                defect: closure.max(dev),
                period: if t_best.is_nan() { period } else { t_best },
                start: u,
            })
        })
        .collect()
}

fn refined_candidate(m: &SurfaceModel, q: &ShadowingQuery, c: &Candidate) -> Option<(Candidate, f64)> {
    let (u, period, residual) = shoot(m, &c.start, c.period, SHOOT_TOL).ok()?;
    if (period - q.period()).abs() > 1.0 || period < q.t0 {
        return None;
    }
    if chartwise_distance(m, &u, &q.start()) > q.radius * std::f64::consts::SQRT_2 {
        return None;
    }
    let seg = integrate(m, &u, period).ok()?;
    let dev = deviation(m, &seg, &q.pseudo_orbit, (q.period() - 1.0).max(0.0).min(period));
    Some((
        Candidate {
            defect: residual.max(dev),
            period,
            start: u,
        },
        residual,
    ))
}

pub fn shadowing_search(m: &SurfaceModel, q: &ShadowingQuery) -> Result<ShadowingOutcome> {
    shadowing_search_with(m, q, &SearchGrid::default())
}

pub fn shadowing_search_with(m: &SurfaceModel, q: &ShadowingQuery, grid: &SearchGrid) -> Result<ShadowingOutcome> {
    let w = canonicalize(m, &q.start())?;
    let certificate = match endpoint_transits(m, &q.pseudo_orbit) {
        Ok((first, last)) => transit_sign_certificate(&first, &last, q.eps).unwrap_or(None),
        Err(_) => None,
    };
    if certificate.is_none() && q.gap < 1e-12 {
        let rank = is_rank_one(m, &w, q.period())?;
        return Ok(ShadowingOutcome::Closed {
            orbit: ClosedGeodesic {
                initial: w,
                period: q.period(),
                residual: q.gap,
                rank,
                label: "pseudo-orbit".into(),
                word: None::<Word>,
                guess: false,
            },
            shadowing_distance: 0.0,
        });
    }
    let on_section = w.chart == ChartId::Warped && m.warp.in_band(w.c1) && w.angle.sin() != 0.0;
    let mut pool = if on_section { grid_candidates(m, q, grid) } else { Vec::new() };
    pool.sort_by(|a, b| a.defect.total_cmp(&b.defect).then(a.period.total_cmp(&b.period)));
    let explored = pool.len();
    let mut seeds: Vec<Candidate> = pool.iter().take(grid.refine).copied().collect();
    seeds.push(Candidate {
        defect: f64::INFINITY,
        period: q.period(),
        start: w,
    });
    let refined: Vec<(Candidate, f64)> = seeds.par_iter().filter_map(|c| refined_candidate(m, q, c)).collect();
    let mut best = pool.first().copied().unwrap_or(Candidate {
        defect: f64::INFINITY,
        period: q.period(),
        start: w,
    });
    let mut best_closed: Option<(Candidate, f64)> = None;
    for (c, residual) in refined {
        best = better(best, c);
        if best_closed.map_or(true, |(b, _)| better(b, c).defect < b.defect) {
            best_closed = Some((c, residual));
        }
    }
    if let Some(certificate) = certificate {
        return Ok(ShadowingOutcome::Obstructed {
            certificate,
            min_residual: best.defect,
            candidates: explored + seeds.len(),
        });
    }
    match best_closed {
        Some((c, residual)) if c.defect < q.eps => Ok(ShadowingOutcome::Closed {
            orbit: ClosedGeodesic {
                initial: c.start,
                period: c.period,
                residual,
                rank: is_rank_one(m, &c.start, c.period)?,
                label: "shadowing".into(),
                word: None,
                guess: false,
            },
            shadowing_distance: c.defect,
        }),
        _ => Ok(ShadowingOutcome::BestResidual {
            residual: best.defect,
            period: best.period,
        }),
    }
}

/// The pseudo-orbit of the obstruction argument: starts beside the
/// designated vertical geodesic on the side it moves towards, with angle in
/// `]theta/2, theta[` to the vertical, and returns beside it on the other
/// side with angle in `]-theta, -theta/2[`. Returns the best return found
/// over a grid of starts within `eps` of the geodesic and times up to `t_max`.
pub fn obstruction_pseudo_orbit(
    m: &SurfaceModel,
    spec: &CylinderSpec,
    theta: f64,
    eps: f64,
    t_max: f64,
) -> Result<ShadowingQuery> {
    if !(theta > 0.0 && theta < 0.5 * std::f64::consts::PI) || !(eps > 0.0 && eps < spec.d) {
        return Err(LabError::InvalidParameter(format!("need 0 < theta < pi/2 and 0 < eps < d (got {theta}, {eps})")));
    }
    let rho_a = spec.rho(m);
    let n = 16;
    let starts: Vec<UnitTangent> = (0..n)
        .flat_map(|i| {
            (0..n).map(move |j| {
                let alpha = theta * (0.5 + 0.5 * (i as f64 + 0.5) / n as f64);
                let phi = TAU * j as f64 / n as f64;
                UnitTangent::warped(rho_a + 0.25 * eps, phi, alpha, 0.0)
            })
        })
        .collect();
    let found: Vec<(f64, f64, UnitTangent)> = starts
        .par_iter()
        .filter_map(|w| {
            let seg = integrate(m, w, t_max).ok()?;
            let mut best: Option<(f64, f64)> = None;
            for arc in seg.arcs.iter().filter(|a| matches!(a.kind, ArcKind::Flat)) {
                let s = &arc.start;
                let a = angle_to_vertical(s.angle);
                let downward = s.angle.sin() < 0.0 && s.angle.cos() > 0.0;
                if !downward || !(a > -theta && a < -0.5 * theta) || arc.t0 < 1.0 {
                    continue;
                }
                // time the arc sits at rho_a - eps/4, on the far side of the geodesic
                let t = (s.c1 - (rho_a - 0.25 * eps)) / -s.angle.sin();
                if t < 0.0 || t > arc.duration() {
                    continue;
                }
                let v = arc.state_at(m, arc.t0 + t).ok()?;
                let gap = sasaki_distance(m, w, &v).value;
                if best.map_or(true, |b| gap < b.0) {
                    best = Some((gap, arc.t0 + t - w.t));
                }
            }
            best.map(|(g, t)| (g, t, *w))
        })
        .collect();
    let (_, period, w) = found
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .ok_or_else(|| LabError::NotApplicable(format!("no return beside the geodesic within T = {t_max}")))?;
    ShadowingQuery::new(m, &w, period, eps, 0.25 * eps)
}

/// A pseudo-orbit near a closed geodesic that avoids the modified region:
/// the start is moved off the orbit until the endpoint gap is just below `gap`.
pub fn hyperbolic_control_pseudo_orbit(m: &SurfaceModel, c: &ClosedGeodesic, gap: f64, eps: f64) -> Result<ShadowingQuery> {
    if c.guess {
        return Err(LabError::NotApplicable("control orbit meets the modified region".into()));
    }
    let mut eta = gap;
    for _ in 0..80 {
        let w = super::perturbed(m, &c.initial, eta, 0.7 * eta);
        let q = ShadowingQuery::new(m, &w, c.period, eps, 4.0 * gap)?;
        if q.gap < gap && q.gap > 1e-3 * gap {
            return Ok(q);
        }
        eta *= if q.gap >= gap { 0.5 } else { 1.5 };
    }
    Err(LabError::NotApplicable("could not place a pseudo-orbit at the requested gap".into()))
}
