//! Closed geodesics: the vertical family of the band, axes of group words,
//! shooting refinement, escape certificates for flat ends and the
//! `C^n X C^n` approximation of the cut geodesic.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flow::{canonicalize, integrate, is_rank_one, RankVerdict, UnitTangent};
use crate::hyperbolic::{frame_state, wrap_angle, Mat2, Word, C64};
use crate::measure::{chartwise_distance, frame_distance};
use crate::surface::{ChartId, CylinderSpec, SurfaceModel};

mod shadowing;

pub use shadowing::*;

const MAX_NEWTON: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedGeodesic {
    pub initial: UnitTangent,
    pub period: f64,
    pub residual: f64,
    pub rank: RankVerdict,
    pub label: String,
    pub word: Option<Word>,
    /// Axis computed in the unmodified hyperbolic metric but meeting the
    /// flattened collar; needs [`refine_periodic`].
    pub guess: bool,
}

impl ClosedGeodesic {
    /// Whether the closed orbit is a vertical circle of the band.
    pub fn is_vertical(&self, m: &SurfaceModel) -> bool {
        let v = self.initial;
        v.chart == ChartId::Warped && m.warp.in_band(v.c1) && v.angle.sin() == 0.0
    }

    /// Re-integrates one period and measures the closure gap.
    pub fn closure_gap(&self, m: &SurfaceModel) -> Result<f64> {
        if self.is_vertical(m) {
            return Ok(0.0);
        }
        let seg = integrate(m, &self.initial, self.period)?;
        Ok(chartwise_distance(m, &self.initial, &seg.end))
    }
}

fn vertical_at(m: &SurfaceModel, rho: f64, label: String) -> ClosedGeodesic {
    ClosedGeodesic {
        initial: UnitTangent::warped(rho, 0.0, 0.0, 0.0),
        period: TAU * m.warp.height,
        residual: 0.0,
        rank: RankVerdict::RankTwoCertified,
        label,
        word: None,
        guess: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalFamily {
    pub members: Vec<ClosedGeodesic>,
    /// Index of the geodesic at distance `d` from the upper edge.
    pub designated: usize,
    /// Indices of the members lying on the band edges.
    pub edges: Vec<usize>,
}

/// `count` evenly spaced vertical closed geodesics across the band (both
/// edges included on a compact band), plus the designated one.
pub fn vertical_family(m: &SurfaceModel, spec: &CylinderSpec, count: usize) -> Result<VerticalFamily> {
    let (lo, hi) = (m.warp.flat_lo, m.warp.flat_hi);
    if !lo.is_finite() {
        return Err(LabError::NotApplicable("band has no lower edge".into()));
    }
    let top = if hi.is_finite() { hi } else { lo + spec.l };
    let count = count.max(2);
    let mut members: Vec<ClosedGeodesic> = (0..count)
        .map(|k| {
            let rho = if k + 1 == count { top } else { lo + (top - lo) * k as f64 / (count - 1) as f64 };
            vertical_at(m, rho, format!("vertical[{k}]"))
        })
        .collect();
    let target = spec.rho(m);
    let designated = match members.iter().position(|c| c.initial.c1 == target) {
        Some(k) => k,
        None => {
            members.push(vertical_at(m, target, "vertical[designated]".into()));
            members.len() - 1
        }
    };
    members[designated].label = "A".into();
    let mut edges = vec![0];
    if hi.is_finite() {
        edges.push(count - 1);
    }
    Ok(VerticalFamily {
        members,
        designated,
        edges,
    })
}

/// The designated vertical geodesic `A` of a cylinder spec.
pub fn designated_geodesic(m: &SurfaceModel, spec: &CylinderSpec) -> Result<ClosedGeodesic> {
    let fam = vertical_family(m, spec, 2)?;
    Ok(fam.members[fam.designated].clone())
}

/// Closed geodesic along the axis of a hyperbolic word, measured in the
/// unmodified hyperbolic metric.
pub fn axis_from_word(m: &SurfaceModel, word: &Word) -> Result<ClosedGeodesic> {
    let hc = m.hyperbolic_chart()?;
    let g = word.eval(&hc.generators);
    let period = g.translation_length()?;
    let axis = g.axis()?;
    let (foot, psi) = axis.foot(hc.base());
    let initial = UnitTangent::hyperbolic(foot, psi, 0.0);
    // sample the fundamental segment of the axis and look for the collar
    let n = axis.normalizer();
    let ninv = n.inverse();
    let u0 = n.apply(foot).im;
    let samples = 64;
    let mut guess = false;
    for k in 0..=samples {
        let z = ninv.apply(C64::new(0.0, u0 * (period * k as f64 / samples as f64).exp()));
        let z = hc.reduce_point(z)?;
        if hc.distance_to_cut(z) < hc.cut.collar_width {
            guess = true;
            break;
        }
    }
    let mut c = ClosedGeodesic {
        initial,
        period,
        residual: 0.0,
        rank: RankVerdict::Undetermined,
        label: word.render(&hc.names),
        word: Some(word.clone()),
        guess,
    };
    if !guess {
        c.residual = c.closure_gap(m)?;
        c.rank = RankVerdict::RankOneCertified;
    }
    Ok(c)
}

/// Perpendicular offset `s` and turn `a` applied to a base vector.
fn perturbed(m: &SurfaceModel, v: &UnitTangent, s: f64, a: f64) -> UnitTangent {
    match v.chart {
        ChartId::Warped => {
            let (sn, cs) = v.angle.sin_cos();
            let f = m.warp.value(v.c1);
            UnitTangent::warped(v.c1 + s * cs, v.c2 - s * sn / f, v.angle + a, v.t)
        }
        ChartId::Hyperbolic => {
            let q = Mat2::rotation(FRAC_PI_2);
            let g = v.frame() * q * Mat2::geodesic(s) * q.inverse() * Mat2::rotation(a);
            UnitTangent::from_frame(&g.normalized(), v.t)
        }
    }
}

/// Closure defect of `end` relative to `start` as a 3-vector in local coordinates.
fn defect(m: &SurfaceModel, start: &UnitTangent, end: &UnitTangent) -> Option<Vector3<f64>> {
    let mut e = canonicalize(m, end).ok()?;
    if e.chart != start.chart {
        e = match e.chart {
            ChartId::Warped => m.warped_to_hyperbolic(&e).ok()?,
            ChartId::Hyperbolic => m.chart_transition(&e).ok()?,
        };
        if e.chart != start.chart {
            return None;
        }
    }
    match start.chart {
        ChartId::Warped => {
            let f = m.warp.value(start.c1);
            Some(Vector3::new(
                e.c1 - start.c1,
                f * wrap_angle(e.c2 - start.c2),
                wrap_angle(e.angle - start.angle),
            ))
        }
        ChartId::Hyperbolic => {
            let fs = start.frame();
            let mut best = e.frame();
            let mut bd = frame_distance(&fs, &best);
            if let Some(hc) = &m.hyperbolic {
                for side in &hc.sides {
                    let cand = side.element * e.frame();
                    let d = frame_distance(&fs, &cand);
                    if d < bd {
                        bd = d;
                        best = cand;
                    }
                }
            }
            let (w, psi) = frame_state(&(fs.inverse() * best).normalized());
            Some(Vector3::new(w.re, w.im.ln(), wrap_angle(psi - FRAC_PI_2)))
        }
    }
}

/// Newton shooting on `(offset, turn, period)` for the closure equation
/// `g_T(v) = v`. Returns the refined start, period and residual.
pub(crate) fn shoot(m: &SurfaceModel, v0: &UnitTangent, period: f64, tol: f64) -> Result<(UnitTangent, f64, f64)> {
    let base = canonicalize(m, v0)?;
    let eval = |x: &Vector3<f64>| -> Option<(UnitTangent, Vector3<f64>, f64)> {
        if !(x[2] > 0.0) {
            return None;
        }
        let u = canonicalize(m, &perturbed(m, &base, x[0], x[1])).ok()?;
        let end = integrate(m, &u, x[2]).ok()?.end;
        let r = defect(m, &u, &end)?;
        Some((u, r, chartwise_distance(m, &u, &end)))
    };
    let mut x = Vector3::new(0.0, 0.0, period);
    let (mut u, mut r, mut res) = eval(&x).ok_or(LabError::RefineFailure(f64::INFINITY))?;
    for _ in 0..MAX_NEWTON {
        if res < tol {
            return Ok((u, x[2], res));
        }
        let hstep = 1e-7;
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let mut xp = x;
            xp[k] += hstep;
            let (_, rp, _) = eval(&xp).ok_or(LabError::RefineFailure(res))?;
            jac.set_column(k, &((rp - r) / hstep));
        }
        let Some(dx) = jac.lu().solve(&(-r)) else {
            return Err(LabError::RefineFailure(res));
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-4 {
            if let Some((u2, r2, res2)) = eval(&(x + dx * lambda)) {
                if r2.norm() < r.norm() {
                    x += dx * lambda;
                    (u, r, res) = (u2, r2, res2);
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res < tol {
        Ok((u, x[2], res))
    } else {
        Err(LabError::RefineFailure(res))
    }
}

/// Corrects a guess to a closed orbit of the modified metric with residual
/// below `tol`.
pub fn refine_periodic(m: &SurfaceModel, guess: &ClosedGeodesic, tol: f64) -> Result<ClosedGeodesic> {
    if guess.is_vertical(m) {
        return Ok(guess.clone());
    }
    if !guess.guess && guess.residual < tol {
        return Ok(guess.clone());
    }
    if let (Some(w), Ok(hc)) = (&guess.word, m.hyperbolic_chart()) {
        let cut = &hc.cut.word;
        if w.reduced() == cut.reduced() || w.reduced() == cut.inverse().reduced() {
            // the cut geodesic keeps its length and becomes a band edge
            let rho = if m.warp.flat_hi.is_finite() { m.warp.flat_hi } else { m.warp.flat_lo };
            let mut c = vertical_at(m, rho, guess.label.clone());
            c.word = guess.word.clone();
            return Ok(c);
        }
    }
    if guess.residual >= 0.1 && !guess.guess {
        return Err(LabError::InvalidParameter(format!(
            "guess residual {} too large for the local solver",
            guess.residual
        )));
    }
    let (initial, period, residual) = shoot(m, &guess.initial, guess.period, tol)?;
    if (period - guess.period).abs() > 0.1 * guess.period {
        return Err(LabError::RefineFailure(residual));
    }
    let rank = is_rank_one(m, &initial, period)?;
    Ok(ClosedGeodesic {
        initial,
        period,
        residual,
        rank,
        label: guess.label.clone(),
        word: guess.word.clone(),
        guess: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EscapeDirection {
    Forward,
    Backward,
}

/// Exact statement that a non-vertical vector in a flat end leaves every
/// compact set: its height is `rho + t sin(alpha)` for as long as it stays in
/// the end, which is forever in the escaping direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeCertificate {
    pub direction: EscapeDirection,
    pub rate: f64,
    pub rho: f64,
}

impl EscapeCertificate {
    /// Time to reach height `target` in the escaping direction.
    pub fn time_to(&self, target: f64) -> f64 {
        ((target - self.rho) / self.rate).max(0.0)
    }
}

pub fn flat_end_escape(m: &SurfaceModel, v: &UnitTangent) -> Result<EscapeCertificate> {
    let v = canonicalize(m, v)?;
    if v.chart != ChartId::Warped || m.warp.flat_hi.is_finite() || !m.warp.in_band(v.c1) {
        return Err(LabError::NotApplicable("vector is not in a flat end".into()));
    }
    let s = v.angle.sin();
    if s.abs() <= 1e-15 {
        return Err(LabError::NotApplicable("vertical vectors are periodic".into()));
    }
    Ok(EscapeCertificate {
        direction: if s > 0.0 { EscapeDirection::Forward } else { EscapeDirection::Backward },
        rate: s.abs(),
        rho: v.c1,
    })
}

/// Distances from the base point `c(0)` (foot of the domain centre on the
/// cut axis) to the axes of `W_n = C^n X C^n` for `n = 1..=n_max`.
pub fn boundary_approximation(m: &SurfaceModel, x: &Word, n_max: usize) -> Result<Vec<f64>> {
    let hc = m.hyperbolic_chart()?;
    let c = &hc.cut.word;
    let (c0, _) = hc.cut.axis.foot(hc.base());
    (1..=n_max)
        .map(|n| {
            let w = c.pow(n).concat(x).concat(&c.pow(n));
            Ok(w.eval(&hc.generators).axis()?.distance_to(c0))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub period: f64,
    pub residual: f64,
    pub rank: RankVerdict,
}

pub fn catalog_json(orbits: &[ClosedGeodesic]) -> String {
    let entries: Vec<CatalogEntry> = orbits
        .iter()
        .map(|c| CatalogEntry {
            id: c.label.clone(),
            period: c.period,
            residual: c.residual,
            rank: c.rank,
        })
        .collect();
    serde_json::to_string_pretty(&entries).unwrap_or_else(|_| "[]".into())
}
