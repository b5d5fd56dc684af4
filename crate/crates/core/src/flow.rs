//! Geodesic flow on a [`SurfaceModel`].
//!
//! Flat band arcs and half-plane arcs are closed form. Flank arcs are
//! integrated with an adaptive Dormand–Prince scheme on `(rho, phi, alpha)`
//! where `alpha` is the angle to the circle direction, so
//! `rho' = sin a`, `phi' = cos a / f`, `a' = (f'/f) cos a` and the speed is
//! identically one. Steps whose Clairaut drift `|Δ(f cos a)|` is too large
//! are rejected. Band edges, collar circles and the funnel escape depth are
//! located by root refinement on the step.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::hyperbolic::{frame, frame_state, wrap_angle, Mat2, C64};
use crate::ode::{dp_step, error_norm, State};
use crate::surface::{ChartId, GluedSides, HyperbolicChart, Region, SurfaceModel, WarpFunction};

/// Default Clairaut drift allowance per unit time.
pub const DEFAULT_TOL: f64 = 1e-10;
const EVENT_RESIDUAL: f64 = 1e-13;
const HYPERBOLIC_CHUNK: f64 = 1.0;

/// A unit tangent vector. In the warped chart `(c1, c2) = (rho, phi)` and
/// `angle` is measured from `+∂phi` towards `+∂rho`; in the half-plane chart
/// `(c1, c2) = (x, y)` and `angle` is the Euclidean direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitTangent {
    pub chart: ChartId,
    pub c1: f64,
    pub c2: f64,
    pub angle: f64,
    pub t: f64,
}

impl UnitTangent {
    pub fn warped(rho: f64, phi: f64, alpha: f64, t: f64) -> Self {
        Self {
            chart: ChartId::Warped,
            c1: rho,
            c2: phi.rem_euclid(TAU),
            angle: wrap_angle(alpha),
            t,
        }
    }

    pub fn hyperbolic(z: C64, psi: f64, t: f64) -> Self {
        Self {
            chart: ChartId::Hyperbolic,
            c1: z.re,
            c2: z.im,
            angle: wrap_angle(psi),
            t,
        }
    }

    pub fn from_frame(g: &Mat2, t: f64) -> Self {
        let (z, psi) = frame_state(g);
        Self::hyperbolic(z, psi, t)
    }

    pub fn point(&self) -> C64 {
        C64::new(self.c1, self.c2)
    }

    pub fn frame(&self) -> Mat2 {
        frame(self.point(), self.angle)
    }

    pub fn flipped(&self) -> Self {
        Self {
            angle: wrap_angle(self.angle + PI),
            ..*self
        }
    }

    pub fn at_time(self, t: f64) -> Self {
        Self { t, ..self }
    }

    /// Riemannian norm recomputed from the coordinate velocity.
    pub fn speed(&self, m: &SurfaceModel) -> f64 {
        match self.chart {
            ChartId::Warped => {
                let f = m.warp.value(self.c1);
                let (s, c) = self.angle.sin_cos();
                let dphi = c / f;
                (s * s + f * f * dphi * dphi).sqrt()
            }
            ChartId::Hyperbolic => {
                let v = C64::from_polar(self.c2, self.angle);
                v.norm() / self.c2
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    BandEnter,
    BandExit,
    GluingCircle,
    EscapeThreshold,
}

/// A boundary crossing; `side` is the sign of `d rho/dt` in the warped chart
/// and `rho` the level that was crossed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub t: f64,
    pub kind: EventKind,
    pub side: i8,
    pub rho: f64,
    pub state: UnitTangent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArcKind {
    Flat,
    /// ODE arc; knots are `(t, [rho, phi, alpha])` after every accepted step.
    Flank {
        knots: Vec<(f64, State)>,
        clairaut: f64,
        max_drift: f64,
    },
    /// Funnel arc past the escape depth, in closed form on the model
    /// half-plane of curvature `-1/kappa^2`.
    Escaped {
        frame: Mat2,
        edge: f64,
        kappa: f64,
        phi0: f64,
        clairaut: f64,
    },
    Hyperbolic {
        frame: Mat2,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub t0: f64,
    pub t1: f64,
    pub start: UnitTangent,
    pub kind: ArcKind,
}

impl Arc {
    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn chart(&self) -> ChartId {
        match self.kind {
            ArcKind::Hyperbolic { .. } => ChartId::Hyperbolic,
            _ => ChartId::Warped,
        }
    }

    /// Clairaut invariant `f cos(alpha)` of a warped arc.
    pub fn clairaut(&self, m: &SurfaceModel) -> Option<f64> {
        match &self.kind {
            ArcKind::Flat => Some(m.warp.height * self.start.angle.cos()),
            ArcKind::Flank { clairaut, .. } | ArcKind::Escaped { clairaut, .. } => Some(*clairaut),
            ArcKind::Hyperbolic { .. } => None,
        }
    }

    /// True when the arc meets negative curvature.
    pub fn is_curved(&self) -> bool {
        !matches!(self.kind, ArcKind::Flat) && self.duration() > 0.0
    }

    pub fn state_at(&self, m: &SurfaceModel, t: f64) -> Result<UnitTangent> {
        let s = t - self.t0;
        match &self.kind {
            ArcKind::Flat => Ok(flat_advance(m.warp.height, &self.start, s)),
            ArcKind::Flank { knots, .. } => {
                let k = knots.partition_point(|(tk, _)| *tk <= t).saturating_sub(1);
                let (tk, y) = knots[k];
                let y = advance_ode(&m.warp, y, t - tk, DEFAULT_TOL)?;
                Ok(UnitTangent::warped(y[0], y[1], y[2], t))
            }
            ArcKind::Escaped {
                frame,
                edge,
                kappa,
                phi0,
                ..
            } => Ok(escaped_state(frame, *edge, *kappa, m.warp.height, *phi0, s, t)),
            ArcKind::Hyperbolic { frame } => {
                let hc = m.hyperbolic_chart()?;
                let g = (*frame * Mat2::geodesic(s)).normalized();
                Ok(UnitTangent::from_frame(&hc.reduce(&g)?.0, t))
            }
        }
    }
}

fn flat_advance(h: f64, v: &UnitTangent, s: f64) -> UnitTangent {
    let (sn, cs) = v.angle.sin_cos();
    UnitTangent::warped(v.c1 + s * sn, v.c2 + s * cs / h, v.angle, v.t + s)
}

/// Straight-line motion on the flat band.
pub fn step_exact_flat(m: &SurfaceModel, v: &UnitTangent, dt: f64) -> Result<UnitTangent> {
    if v.chart != ChartId::Warped || !m.warp.in_band(v.c1) {
        return Err(LabError::NotApplicable("state is not on the flat band".into()));
    }
    let w = m.warp;
    let rho1 = v.c1 + dt * v.angle.sin();
    let slack = 1e-12 * (1.0 + dt.abs());
    if rho1 > w.flat_hi + slack || rho1 < w.flat_lo - slack {
        return Err(LabError::ContractViolation);
    }
    let mut out = flat_advance(w.height, v, dt);
    out.c1 = out.c1.clamp(w.flat_lo, w.flat_hi);
    Ok(out)
}

/// Geodesic motion in the half-plane chart followed by reduction.
pub fn step_exact_hyperbolic(m: &SurfaceModel, v: &UnitTangent, dt: f64) -> Result<UnitTangent> {
    if v.chart != ChartId::Hyperbolic {
        return Err(LabError::NotApplicable("state is not in the half-plane chart".into()));
    }
    let g = (v.frame() * Mat2::geodesic(dt)).normalized();
    match &m.hyperbolic {
        Some(hc) => Ok(UnitTangent::from_frame(&hc.reduce(&g)?.0, v.t + dt)),
        None => Ok(UnitTangent::from_frame(&g, v.t + dt)),
    }
}

fn rhs(w: &WarpFunction) -> impl Fn(&State) -> State + '_ {
    move |y: &State| {
        let (s, c) = y[2].sin_cos();
        [s, c / w.value(y[0]), w.log_slope(y[0]) * c]
    }
}

fn clairaut_of(w: &WarpFunction, y: &State) -> f64 {
    w.value(y[0]) * y[2].cos()
}

struct Stepper<'a> {
    warp: &'a WarpFunction,
    tol: f64,
    h: f64,
}

impl<'a> Stepper<'a> {
    fn new(warp: &'a WarpFunction, tol: f64) -> Self {
        Self {
            warp,
            tol,
            h: 0.05 * warp.flank_scale.min(1.0),
        }
    }

    fn max_step(&self) -> f64 {
        0.5 * self.warp.flank_scale
    }

    /// One accepted adaptive step of at most `limit`; returns `(dt, y1)`.
    fn step(&mut self, y: &State, limit: f64, t: f64) -> Result<(f64, State)> {
        let f = rhs(self.warp);
        let rk_tol = (self.tol * 1e-2).max(1e-14);
        let p0 = clairaut_of(self.warp, y);
        loop {
            let dt = self.h.min(limit).min(self.max_step());
            let (y1, err) = dp_step(&f, y, dt);
            let en = error_norm(y, &y1, &err, rk_tol, rk_tol);
            let p1 = clairaut_of(self.warp, &y1);
            let floor = 8.0 * f64::EPSILON * (self.warp.value(y[0]) + self.warp.value(y1[0]));
            let drift_ok = (p1 - p0).abs() <= self.tol * dt + floor;
            if en <= 1.0 && drift_ok && y1.iter().all(|x| x.is_finite()) {
                let grow = if en > 0.0 { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) } else { 5.0 };
                if dt >= self.h || grow < 1.0 {
                    self.h = dt * grow;
                }
                return Ok((dt, y1));
            }
            let shrink = if en > 1.0 { (0.9 * en.powf(-0.2)).clamp(0.1, 0.5) } else { 0.5 };
            self.h = dt * shrink;
            if self.h < 1e-14 {
                return Err(LabError::StiffnessFailure(t));
            }
        }
    }
}

fn advance_ode(w: &WarpFunction, mut y: State, dt: f64, tol: f64) -> Result<State> {
    let mut st = Stepper::new(w, tol);
    let mut done = 0.0;
    while done < dt {
        let (h, y1) = st.step(&y, dt - done, done)?;
        y = y1;
        done += h;
        if dt - done < 1e-15 * dt.max(1.0) {
            break;
        }
    }
    Ok(y)
}

/// Adaptive integration of the flank equations for time `dt >= 0`, with no
/// event handling. The chart is taken to extend indefinitely.
pub fn step_ode_warped(m: &SurfaceModel, v: &UnitTangent, dt: f64, tol: f64) -> Result<UnitTangent> {
    if v.chart != ChartId::Warped {
        return Err(LabError::NotApplicable("state is not in the warped chart".into()));
    }
    if !(dt >= 0.0) || !(tol > 0.0) {
        return Err(LabError::InvalidParameter(format!("need dt >= 0 and tol > 0 (got {dt}, {tol})")));
    }
    let y = advance_ode(&m.warp, [v.c1, v.c2, v.angle], dt, tol)?;
    Ok(UnitTangent::warped(y[0], y[1], y[2], v.t + dt))
}

enum FlankStop {
    Time,
    Level(EventKind, f64),
}

/// Locates `rho(tau) = level` for `tau` in `(0, dt]` given a sign change.
fn refine_level(w: &WarpFunction, y0: &State, dt: f64, level: f64) -> (f64, State) {
    let f = rhs(w);
    let g0 = y0[0] - level;
    let (mut lo, mut hi) = (0.0, dt);
    let mut tau = dt * g0 / (g0 - (dp_step(&f, y0, dt).0[0] - level));
    if !(tau > 0.0 && tau <= dt) {
        tau = 0.5 * dt;
    }
    let mut best = (dt, dp_step(&f, y0, dt).0);
    for _ in 0..80 {
        let y = dp_step(&f, y0, tau).0;
        let g = y[0] - level;
        best = (tau, y);
        if g.abs() < EVENT_RESIDUAL {
            break;
        }
        if g.signum() == g0.signum() {
            lo = tau;
        } else {
            hi = tau;
        }
        let slope = y[2].sin();
        let newton = tau - g / slope;
        tau = if slope != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-16 {
            break;
        }
    }
    let mut y = best.1;
    y[0] = level;
    (best.0, y)
}

/// Integrates a flank arc until a level is crossed or `t_max` elapses.
fn flank_arc(m: &SurfaceModel, v: &UnitTangent, t_max: f64, tol: f64) -> Result<(Arc, FlankStop, UnitTangent)> {
    let w = &m.warp;
    let y_start: State = [v.c1, v.c2, v.angle];
    let upper = v.c1 > w.flat_hi || (v.c1 == w.flat_hi && v.angle.sin() > 0.0);
    let (edge, outer) = if upper {
        (w.flat_hi, m.warped_range.1)
    } else {
        (w.flat_lo, m.warped_range.0)
    };
    let dir = if upper { 1.0 } else { -1.0 };
    let mut levels: Vec<(EventKind, f64)> = vec![(EventKind::BandEnter, edge)];
    if outer.is_finite() {
        levels.push((EventKind::GluingCircle, outer));
    }
    if let Some(depth) = m.escape_depth {
        levels.push((EventKind::EscapeThreshold, edge + dir * depth));
    }

    let p = clairaut_of(w, &y_start);
    let mut max_drift: f64 = 0.0;
    let mut knots = vec![(v.t, y_start)];
    let mut st = Stepper::new(w, tol);
    let mut y = y_start;
    let mut t = v.t;
    let t_end = v.t + t_max;
    let stop;
    loop {
        let remaining = t_end - t;
        if remaining <= 0.0 {
            stop = FlankStop::Time;
            break;
        }
        let (dt, y1) = st.step(&y, remaining, t)?;
        let mut hit: Option<(f64, State, EventKind, f64)> = None;
        for &(kind, level) in &levels {
            let g0 = y[0] - level;
            let g1 = y1[0] - level;
            if g0 != 0.0 && (g1 == 0.0 || g0.signum() != g1.signum()) {
                let (tau, yr) = refine_level(w, &y, dt, level);
                if hit.as_ref().map_or(true, |h| tau < h.0) {
                    hit = Some((tau, yr, kind, level));
                }
            }
        }
        if let Some((tau, yr, kind, level)) = hit {
            t += tau;
            y = yr;
            max_drift = max_drift.max((clairaut_of(w, &y) - p).abs());
            knots.push((t, y));
            stop = FlankStop::Level(kind, level);
            break;
        }
        t += dt;
        y = y1;
        max_drift = max_drift.max((clairaut_of(w, &y) - p).abs());
        knots.push((t, y));
        if t_end - t < 1e-15 * t_end.abs().max(1.0) {
            t = t_end;
            stop = FlankStop::Time;
            break;
        }
    }
    let arc = Arc {
        t0: v.t,
        t1: t,
        start: *v,
        kind: ArcKind::Flank {
            knots,
            clairaut: p,
            max_drift,
        },
    };
    Ok((arc, stop, UnitTangent::warped(y[0], y[1], y[2], t)))
}

fn ln_asinh_abs(ln_x: f64) -> f64 {
    if ln_x < 20.0 {
        ln_x.exp().asinh()
    } else {
        std::f64::consts::LN_2 + ln_x
    }
}

fn escaped_frame(v: &UnitTangent, edge: f64, kappa: f64) -> Mat2 {
    let r0 = (v.c1 - edge) / kappa;
    let u0 = C64::new(r0.tanh(), 1.0 / r0.cosh());
    frame(u0, u0.arg() - v.angle)
}

fn escaped_state(g: &Mat2, edge: f64, kappa: f64, h: f64, phi0: f64, s: f64, t: f64) -> UnitTangent {
    let tau = s / kappa;
    let e2 = (-2.0 * tau).exp();
    let e1 = (-tau).exp();
    let val = g.a * g.c + g.b * g.d * e2;
    let rho = edge + kappa * val.signum() * ln_asinh_abs(tau + val.abs().ln());
    let sigma = 0.5 * ((g.a * g.a + g.b * g.b * e2).ln() - (g.c * g.c + g.d * g.d * e2).ln());
    let alpha = C64::new(g.b * e1, g.a).arg() + C64::new(g.d * e1, g.c).arg() - FRAC_PI_2;
    UnitTangent::warped(rho, phi0 + sigma * kappa / h, alpha, t)
}

/// Earliest time in `(0, dt]` at which the half-plane orbit of `g` enters a
/// glued collar, with the index of the lift.
fn collar_entry(hc: &HyperbolicChart, g: &Mat2, dt: f64) -> Option<(f64, usize)> {
    let s = hc.cut.collar_width.sinh();
    let signs: &[f64] = match hc.cut.glued {
        GluedSides::Both => &[1.0, -1.0],
        GluedSides::NegativeOnly => &[-1.0],
    };
    let mut best: Option<(f64, usize)> = None;
    for (k, lift) in hc.cut.lifts.iter().enumerate() {
        let mm = lift.to_fermi * *g;
        let (p, q) = (mm.a * mm.c, mm.b * mm.d);
        for &sg in signs {
            // p E^2 - sg s E + q = 0 with E = e^t
            let b = -sg * s;
            let disc = b * b - 4.0 * p * q;
            if disc < 0.0 {
                continue;
            }
            let qq = -0.5 * (b + b.signum() * disc.sqrt());
            let mut roots = vec![q / qq];
            if p != 0.0 {
                roots.push(qq / p);
            }
            for e in roots {
                if !(e > 0.0) {
                    continue;
                }
                let mut t = e.ln();
                for _ in 0..3 {
                    let (ep, em) = (t.exp(), (-t).exp());
                    let fval = p * ep + q * em - sg * s;
                    let fd = p * ep - q * em;
                    if fd == 0.0 {
                        break;
                    }
                    t -= fval / fd;
                }
                let slope = p * t.exp() - q * (-t).exp();
                if t > 1e-12 && t <= dt && sg * slope < 0.0 && best.map_or(true, |b| t < b.0) {
                    best = Some((t, k));
                }
            }
        }
    }
    best
}

/// Puts a state into its canonical chart: half-plane states inside a glued
/// collar move to the warped chart, others are reduced.
pub fn canonicalize(m: &SurfaceModel, v: &UnitTangent) -> Result<UnitTangent> {
    match v.chart {
        ChartId::Warped => {
            let (lo, hi) = m.warped_range;
            // collar circles computed through the half-plane land within rounding of the bound
            let slack = 1e-9;
            if !(v.c1 >= lo - slack && v.c1 <= hi + slack) || !v.c2.is_finite() || !v.angle.is_finite() {
                return Err(LabError::OutOfDomain(format!("rho = {} outside [{lo}, {hi}]", v.c1)));
            }
            Ok(UnitTangent::warped(v.c1.clamp(lo, hi), v.c2, v.angle, v.t))
        }
        ChartId::Hyperbolic => {
            let hc = m.hyperbolic_chart().map_err(|_| LabError::OutOfDomain("no half-plane chart".into()))?;
            if !(v.c2 > 0.0) {
                return Err(LabError::OutOfDomain(format!("y = {} is not positive", v.c2)));
            }
            let g = hc.reduce(&v.frame())?.0;
            let r = UnitTangent::from_frame(&g, v.t);
            let z = r.point();
            for (k, l) in hc.cut.lifts.iter().enumerate() {
                let u = l.to_fermi.apply(z);
                let off = (u.re / u.im).asinh();
                let glued = hc.cut.glued == GluedSides::Both || off < 0.0;
                if glued && off.abs() < hc.cut.collar_width {
                    return m.hyperbolic_to_warped(&r, k);
                }
            }
            Ok(r)
        }
    }
}

/// A finite piece of orbit. Arcs always run forward in time; for a negative
/// duration they describe the flipped orbit and are mapped back by
/// [`TrajectorySegment::state_at`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub initial: UnitTangent,
    pub duration: f64,
    pub arcs: Vec<Arc>,
    pub events: Vec<CrossingEvent>,
    pub end: UnitTangent,
    pub reversed: bool,
}

impl TrajectorySegment {
    pub fn t_start(&self) -> f64 {
        self.initial.t
    }

    pub fn t_end(&self) -> f64 {
        self.initial.t + self.duration
    }

    pub fn state_at(&self, m: &SurfaceModel, t: f64) -> Result<UnitTangent> {
        let (a, b) = (self.t_start().min(self.t_end()), self.t_start().max(self.t_end()));
        if t < a - 1e-12 || t > b + 1e-12 {
            return Err(LabError::InvalidParameter(format!("t = {t} outside [{a}, {b}]")));
        }
        let inner = if self.reversed { -t } else { t };
        let k = self
            .arcs
            .partition_point(|arc| arc.t1 < inner)
            .min(self.arcs.len().saturating_sub(1));
        let v = match self.arcs.get(k) {
            Some(arc) => arc.state_at(m, inner.clamp(arc.t0, arc.t1))?,
            None => return Ok(self.initial),
        };
        Ok(if self.reversed { v.flipped().at_time(t) } else { v })
    }

    /// Largest Clairaut drift over the flank arcs.
    pub fn max_clairaut_drift(&self) -> f64 {
        self.arcs
            .iter()
            .map(|a| match &a.kind {
                ArcKind::Flank { max_drift, .. } => *max_drift,
                _ => 0.0,
            })
            .fold(0.0, f64::max)
    }

    pub fn events_json(&self) -> String {
        serde_json::to_string_pretty(&self.events).unwrap_or_else(|_| "[]".into())
    }

    /// CSV dump `t,chart,coord1,coord2,alpha`, sampled every `dt` plus arc ends.
    pub fn to_csv(&self, m: &SurfaceModel, dt: f64) -> Result<String> {
        let mut out = String::from("t,chart,coord1,coord2,alpha\n");
        let (a, b) = (self.t_start().min(self.t_end()), self.t_start().max(self.t_end()));
        let mut times: Vec<f64> = Vec::new();
        if dt > 0.0 {
            let n = ((b - a) / dt).floor() as usize;
            times.extend((0..=n).map(|i| a + i as f64 * dt));
        }
        for arc in &self.arcs {
            for t in [arc.t0, arc.t1] {
                times.push(if self.reversed { -t } else { t });
            }
        }
        times.push(b);
        times.sort_by(|x, y| x.total_cmp(y));
        times.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
        for t in times {
            let v = self.state_at(m, t)?;
            let chart = match v.chart {
                ChartId::Warped => "warped",
                ChartId::Hyperbolic => "hyperbolic",
            };
            out.push_str(&format!("{:.12},{},{:.15},{:.15},{:.15}\n", v.t, chart, v.c1, v.c2, v.angle));
        }
        Ok(out)
    }
}

fn integrate_forward(m: &SurfaceModel, v: &UnitTangent, duration: f64, tol: f64) -> Result<TrajectorySegment> {
    let start = canonicalize(m, v)?;
    let t_end = start.t + duration;
    let mut cur = start;
    let mut arcs: Vec<Arc> = Vec::new();
    let mut events: Vec<CrossingEvent> = Vec::new();
    let w = m.warp;
    let side_of = |a: f64| if a.sin() >= 0.0 { 1i8 } else { -1i8 };

    while cur.t < t_end {
        let remaining = t_end - cur.t;
        match m.region(&cur) {
            Region::Band => {
                let s = cur.angle.sin();
                let to_edge = if s > 0.0 {
                    (w.flat_hi - cur.c1) / s
                } else if s < 0.0 {
                    (w.flat_lo - cur.c1) / s
                } else {
                    f64::INFINITY
                };
                let dt = to_edge.min(remaining).max(0.0);
                arcs.push(Arc {
                    t0: cur.t,
                    t1: cur.t + dt,
                    start: cur,
                    kind: ArcKind::Flat,
                });
                let mut next = flat_advance(w.height, &cur, dt);
                if to_edge <= remaining {
                    let edge = if s > 0.0 { w.flat_hi } else { w.flat_lo };
                    next.c1 = edge;
                    events.push(CrossingEvent {
                        t: next.t,
                        kind: EventKind::BandExit,
                        side: side_of(next.angle),
                        rho: edge,
                        state: next,
                    });
                } else {
                    next.t = t_end;
                    next.c1 = next.c1.clamp(w.flat_lo, w.flat_hi);
                }
                cur = next;
            }
            Region::Flank => {
                let (arc, stop, next) = flank_arc(m, &cur, remaining, tol)?;
                arcs.push(arc);
                cur = next;
                match stop {
                    FlankStop::Time => {
                        cur.t = t_end;
                    }
                    FlankStop::Level(kind, level) => {
                        events.push(CrossingEvent {
                            t: cur.t,
                            kind,
                            side: side_of(cur.angle),
                            rho: level,
                            state: cur,
                        });
                        match kind {
                            EventKind::GluingCircle => cur = m.warped_to_hyperbolic(&cur)?,
                            EventKind::EscapeThreshold => {
                                let edge = if cur.c1 > w.flat_hi { w.flat_hi } else { w.flat_lo };
                                let kappa = w.flank_scale;
                                let g = escaped_frame(&cur, edge, kappa);
                                let p = clairaut_of(&w, &[cur.c1, cur.c2, cur.angle]);
                                let dt = t_end - cur.t;
                                let end = escaped_state(&g, edge, kappa, w.height, cur.c2, dt, t_end);
                                arcs.push(Arc {
                                    t0: cur.t,
                                    t1: t_end,
                                    start: cur,
                                    kind: ArcKind::Escaped {
                                        frame: g,
                                        edge,
                                        kappa,
                                        phi0: cur.c2,
                                        clairaut: p,
                                    },
                                });
                                cur = end;
                            }
                            _ => {}
                        }
                    }
                }
            }
            Region::Hyperbolic => {
                let hc = m.hyperbolic_chart()?;
                let g = cur.frame();
                let dt = HYPERBOLIC_CHUNK.min(remaining);
                match collar_entry(hc, &g, dt) {
                    Some((tau, k)) => {
                        arcs.push(Arc {
                            t0: cur.t,
                            t1: cur.t + tau,
                            start: cur,
                            kind: ArcKind::Hyperbolic { frame: g },
                        });
                        let g1 = (g * Mat2::geodesic(tau)).normalized();
                        let hv = UnitTangent::from_frame(&g1, cur.t + tau);
                        let mut wv = m.hyperbolic_to_warped(&hv, k)?;
                        wv.c1 = if wv.c1 >= w.flat_hi {
                            m.warped_range.1
                        } else {
                            m.warped_range.0
                        };
                        events.push(CrossingEvent {
                            t: wv.t,
                            kind: EventKind::GluingCircle,
                            side: side_of(wv.angle),
                            rho: wv.c1,
                            state: wv,
                        });
                        cur = wv;
                    }
                    None => {
                        arcs.push(Arc {
                            t0: cur.t,
                            t1: cur.t + dt,
                            start: cur,
                            kind: ArcKind::Hyperbolic { frame: g },
                        });
                        let g1 = (g * Mat2::geodesic(dt)).normalized();
                        let t1 = if dt == remaining { t_end } else { cur.t + dt };
                        cur = UnitTangent::from_frame(&hc.reduce(&g1)?.0, t1);
                    }
                }
            }
        }
    }
    Ok(TrajectorySegment {
        initial: start,
        duration,
        arcs,
        events,
        end: cur,
        reversed: false,
    })
}

/// Flows `v` for time `duration` (negative runs the reversed flow).
pub fn integrate(m: &SurfaceModel, v: &UnitTangent, duration: f64) -> Result<TrajectorySegment> {
    integrate_with_tol(m, v, duration, DEFAULT_TOL)
}

pub fn integrate_with_tol(m: &SurfaceModel, v: &UnitTangent, duration: f64, tol: f64) -> Result<TrajectorySegment> {
    if !duration.is_finite() {
        return Err(LabError::InvalidParameter(format!("duration {duration} is not finite")));
    }
    if duration >= 0.0 {
        return integrate_forward(m, v, duration, tol);
    }
    let start = canonicalize(m, v)?;
    let inner = integrate_forward(m, &start.flipped().at_time(-start.t), -duration, tol)?;
    let mut events: Vec<CrossingEvent> = inner
        .events
        .iter()
        .rev()
        .map(|e| CrossingEvent {
            t: -e.t,
            kind: match e.kind {
                EventKind::BandEnter => EventKind::BandExit,
                EventKind::BandExit => EventKind::BandEnter,
                k => k,
            },
            side: -e.side,
            rho: e.rho,
            state: e.state.flipped().at_time(-e.t),
        })
        .collect();
    events.shrink_to_fit();
    Ok(TrajectorySegment {
        initial: start,
        duration,
        end: inner.end.flipped().at_time(-inner.end.t),
        arcs: inner.arcs,
        events,
        reversed: true,
    })
}

/// Gap between two states: coordinate differences in the warped chart,
/// frame differences modulo the domain pairings in the half-plane chart.
pub fn state_gap(m: &SurfaceModel, a: &UnitTangent, b: &UnitTangent) -> f64 {
    let (a, b) = match (canonicalize(m, a), canonicalize(m, b)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return f64::INFINITY,
    };
    match (a.chart, b.chart) {
        (ChartId::Warped, ChartId::Warped) => (a.c1 - b.c1)
            .abs()
            .max(wrap_angle(a.c2 - b.c2).abs())
            .max(wrap_angle(a.angle - b.angle).abs()),
        (ChartId::Hyperbolic, ChartId::Hyperbolic) => {
            let Some(hc) = m.hyperbolic.as_ref() else {
                return f64::INFINITY;
            };
            let (ga, gb) = (a.frame(), b.frame());
            std::iter::once(Mat2::identity())
                .chain(hc.sides.iter().map(|s| s.element))
                .map(|e| {
                    let ea = e * ga;
                    let neg = Mat2::new(-ea.a, -ea.b, -ea.c, -ea.d);
                    ea.max_abs_diff(&gb).min(neg.max_abs_diff(&gb))
                })
                .fold(f64::INFINITY, f64::min)
        }
        _ => {
            // a state on a collar circle can be represented in either chart
            let conv = |v: &UnitTangent| m.chart_transition(v).ok();
            match (conv(&a), conv(&b)) {
                (Some(ca), _) if ca.chart == b.chart => state_gap(m, &ca, &b),
                (_, Some(cb)) if cb.chart == a.chart => state_gap(m, &a, &cb),
                _ => f64::INFINITY,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transit {
    pub enter: CrossingEvent,
    pub exit: CrossingEvent,
    pub sign: i8,
    pub duration: f64,
    /// Enter and exit happen on different band edges.
    pub crossed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TransitReport {
    pub transits: Vec<Transit>,
    /// Exit with no preceding entry (segment started inside the band).
    pub open_start: Option<CrossingEvent>,
    /// Entry with no following exit (segment ended inside the band).
    pub open_end: Option<CrossingEvent>,
}

pub fn transit_report(seg: &TrajectorySegment) -> TransitReport {
    let mut report = TransitReport::default();
    let mut pending: Option<CrossingEvent> = None;
    for e in &seg.events {
        match e.kind {
            EventKind::BandEnter => pending = Some(*e),
            EventKind::BandExit => match pending.take() {
                Some(enter) => report.transits.push(Transit {
                    enter,
                    exit: *e,
                    sign: enter.side,
                    duration: e.t - enter.t,
                    crossed: enter.rho != e.rho,
                }),
                None => {
                    if report.transits.is_empty() && report.open_start.is_none() {
                        report.open_start = Some(*e);
                    }
                }
            },
            _ => {}
        }
    }
    report.open_end = pending;
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankVerdict {
    RankOneCertified,
    RankTwoCertified,
    Undetermined,
}

/// Rank one if the orbit meets negative curvature within `[-T, T]`; rank two
/// for the periodic vertical orbits of the band.
pub fn is_rank_one(m: &SurfaceModel, v: &UnitTangent, horizon: f64) -> Result<RankVerdict> {
    if !(horizon > 0.0) {
        return Err(LabError::InvalidParameter(format!("horizon must be positive (got {horizon})")));
    }
    let v = canonicalize(m, v)?;
    match m.region(&v) {
        Region::Band if v.angle.sin().abs() <= 1e-15 => return Ok(RankVerdict::RankTwoCertified),
        Region::Band => {}
        _ => return Ok(RankVerdict::RankOneCertified),
    }
    for t in [horizon, -horizon] {
        let seg = integrate(m, &v, t)?;
        if seg.arcs.iter().any(|a| a.is_curved()) {
            return Ok(RankVerdict::RankOneCertified);
        }
    }
    Ok(RankVerdict::Undetermined)
}
