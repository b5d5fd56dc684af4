//! Surface models: a warped-product chart `drho^2 + f(rho)^2 dphi^2` holding the
//! flat band (or flat end) together with its flanks, optionally glued along
//! its collar circles to a hyperbolic chart carrying a Fuchsian group.
//!
//! Three presets are built here:
//! * cylinder with two funnels (warped chart only, flank `f = h cosh((|rho|-b)/h)`),
//! * a once-punctured hyperbolic torus with a flat band inserted along the axis
//!   of the first generator,
//! * a one-holed hyperbolic torus whose boundary geodesic is glued to a flat
//!   half-cylinder.
//!
//! In the torus presets the flanks are Fermi collars of width `h·arccosh 2`
//! around the cut geodesic; beyond the collar circle the state moves to the
//! half-plane chart.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flow::UnitTangent;
use crate::hyperbolic::{self, frame, frame_state, wrap_angle, Geodesic, Mat2, Word, C64};

/// Generators of the once-punctured torus group used by the flat-cylinder preset.
pub const PUNCTURED_TORUS_GENERATORS: [[f64; 4]; 2] = [[1.0, 1.0, 1.0, 2.0], [1.0, -1.0, -1.0, 2.0]];

/// Generators of a one-holed torus (perpendicular axes, `sinh a = sinh b = 1.05`);
/// the commutator has trace `2 - 4·1.05^4 ≈ -2.862`.
pub const ONE_HOLED_TORUS_GENERATORS: [[f64; 4]; 2] = [[1.45, 1.05, 1.05, 1.45], [2.5, 0.0, 0.0, 0.4]];

const MAX_REDUCTION_STEPS: usize = 64;
const LIFT_WORD_DEPTH: usize = 6;
const LIFT_KEEP_RADIUS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    CylinderWithFunnels,
    FlatCylinderTorus,
    FlatEndedTorus,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::CylinderWithFunnels => "cylinder-with-funnels",
            Preset::FlatCylinderTorus => "flat-cylinder-torus",
            Preset::FlatEndedTorus => "flat-ended-torus",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "cylinder-with-funnels" | "funnels" => Ok(Preset::CylinderWithFunnels),
            "flat-cylinder-torus" | "torus" => Ok(Preset::FlatCylinderTorus),
            "flat-ended-torus" | "ended-torus" => Ok(Preset::FlatEndedTorus),
            other => Err(LabError::Config(format!("unknown preset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartId {
    Warped,
    Hyperbolic,
}

/// Which part of the surface a state currently lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Band,
    Flank,
    Hyperbolic,
}

/// Warp profile `f` of the warped chart.
///
/// `f ≡ h` on `[flat_lo, flat_hi]`; beyond the flat interval
/// `f = h cosh(depth / flank_scale)` where `depth` is the distance to the
/// interval. Either end of the interval may be infinite (flat end).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpFunction {
    pub flat_lo: f64,
    pub flat_hi: f64,
    pub height: f64,
    pub flank_scale: f64,
}

impl WarpFunction {
    pub fn band(band_halfwidth: f64, height: f64, flank_scale: f64) -> Result<Self> {
        if !(band_halfwidth > 0.0) || !(height > 0.0) || !(flank_scale > 0.0) {
            return Err(LabError::InvalidParameter(format!(
                "warp needs positive band half-width, height and flank scale (got {band_halfwidth}, {height}, {flank_scale})"
            )));
        }
        Ok(Self {
            flat_lo: -band_halfwidth,
            flat_hi: band_halfwidth,
            height,
            flank_scale,
        })
    }

    /// Flat for `rho >= 0`, flank for `rho < 0`.
    pub fn half_cylinder(height: f64, flank_scale: f64) -> Result<Self> {
        if !(height > 0.0) || !(flank_scale > 0.0) {
            return Err(LabError::InvalidParameter("half cylinder needs h > 0".into()));
        }
        Ok(Self {
            flat_lo: 0.0,
            flat_hi: f64::INFINITY,
            height,
            flank_scale,
        })
    }

    pub fn band_halfwidth(&self) -> f64 {
        0.5 * (self.flat_hi - self.flat_lo)
    }

    /// Signed flank depth: positive beyond `flat_hi`, negative below `flat_lo`, 0 on the band.
    pub fn depth(&self, rho: f64) -> f64 {
        if rho > self.flat_hi {
            rho - self.flat_hi
        } else if rho < self.flat_lo {
            rho - self.flat_lo
        } else {
            0.0
        }
    }

    pub fn in_band(&self, rho: f64) -> bool {
        rho >= self.flat_lo && rho <= self.flat_hi
    }

    pub fn value(&self, rho: f64) -> f64 {
        self.height * (self.depth(rho) / self.flank_scale).cosh()
    }

    pub fn slope(&self, rho: f64) -> f64 {
        let x = self.depth(rho) / self.flank_scale;
        self.height / self.flank_scale * x.sinh()
    }

    /// `f''` away from the band edges; at an edge this is the band-side value.
    pub fn second_derivative(&self, rho: f64) -> f64 {
        if self.in_band(rho) {
            0.0
        } else {
            self.value(rho) / (self.flank_scale * self.flank_scale)
        }
    }

    /// `f'/f`, evaluated without forming `f` (no overflow deep in a funnel).
    pub fn log_slope(&self, rho: f64) -> f64 {
        (self.depth(rho) / self.flank_scale).tanh() / self.flank_scale
    }

    /// Gaussian curvature `-f''/f`; 0 on the band (including its edges).
    pub fn curvature(&self, rho: f64) -> f64 {
        if self.in_band(rho) {
            0.0
        } else {
            -1.0 / (self.flank_scale * self.flank_scale)
        }
    }

    pub fn edges(&self) -> Vec<f64> {
        [self.flat_lo, self.flat_hi]
            .into_iter()
            .filter(|e| e.is_finite())
            .collect()
    }
}

/// One-sided evaluation of a warp profile, used by the gluing check.
pub trait WarpProfile {
    /// `(f, f')` approached from below (`side = -1`) or above (`side = +1`).
    fn one_sided(&self, rho: f64, side: i8) -> (f64, f64);
    fn edges(&self) -> Vec<f64>;
}

impl WarpProfile for WarpFunction {
    fn one_sided(&self, rho: f64, side: i8) -> (f64, f64) {
        // each piece is evaluated by its own closed form
        let x = if side > 0 && rho >= self.flat_hi || side < 0 && rho <= self.flat_lo {
            (rho - if side > 0 { self.flat_hi } else { self.flat_lo }) / self.flank_scale
        } else {
            0.0
        };
        if x == 0.0 && self.in_band(rho) {
            (self.height, 0.0)
        } else {
            (self.height * x.cosh(), self.height / self.flank_scale * x.sinh())
        }
    }

    fn edges(&self) -> Vec<f64> {
        WarpFunction::edges(self)
    }
}

/// The embedded flat cylinder: crossing width `l`, circumference `2πh`,
/// and the distance `d` from a designated vertical closed geodesic to the
/// nearer band edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderSpec {
    pub l: f64,
    pub h: f64,
    pub d: f64,
}

impl CylinderSpec {
    pub fn new(l: f64, h: f64, d: f64) -> Result<Self> {
        if !(l > 0.0) || !(h > 0.0) || !(d > 0.0) || d > 0.5 * l + 1e-15 {
            return Err(LabError::InvalidParameter(format!(
                "cylinder needs l, h > 0 and 0 < d <= l/2 (got l={l}, h={h}, d={d})"
            )));
        }
        Ok(Self { l, h, d })
    }

    /// Spec for the geodesic in the middle of the band.
    pub fn middle(model: &SurfaceModel) -> Result<Self> {
        Self::new(model.band_width(), model.warp.height, 0.5 * model.band_width())
    }

    /// Band coordinate of the designated geodesic (the one at distance `d`
    /// from the upper edge).
    pub fn rho(&self, model: &SurfaceModel) -> f64 {
        model.warp.flat_hi - self.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GluedSides {
    /// Flat band inserted along the cut: both sides lead into the warped chart.
    Both,
    /// Only the negative (core) side of each lift is part of the surface.
    NegativeOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lift {
    pub element: Mat2,
    pub axis: Geodesic,
    /// Maps this lift onto the imaginary axis with the base lift's Fermi parametrisation.
    pub to_fermi: Mat2,
}

/// The closed geodesic along which the hyperbolic surface was cut, with the
/// lifts of it that can come near the fundamental domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutGeodesic {
    pub word: Word,
    pub axis: Geodesic,
    pub to_fermi: Mat2,
    pub length: f64,
    pub collar_width: f64,
    pub glued: GluedSides,
    pub lifts: Vec<Lift>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSide {
    pub word: Word,
    pub element: Mat2,
}

/// Half-plane chart: curvature -1, Fuchsian group, Dirichlet-type domain
/// around `base_point`, and the collar circle gluing it to the warped chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicChart {
    pub generators: Vec<Mat2>,
    pub names: Vec<char>,
    pub base_point: (f64, f64),
    pub sides: Vec<DomainSide>,
    pub cut: CutGeodesic,
}

impl HyperbolicChart {
    fn new(generators: Vec<Mat2>, cut_word: Word, glued: GluedSides, base_point: C64, collar_width: f64) -> Result<Self> {
        for (k, g) in generators.iter().enumerate() {
            if (g.det() - 1.0).abs() > 1e-12 {
                return Err(LabError::InvalidSurface(format!(
                    "generator {k} has determinant {} (expected 1)",
                    g.det()
                )));
            }
        }
        let names: Vec<char> = ['A', 'B', 'C', 'D'][..generators.len()].to_vec();
        let cut_elem = cut_word.eval(&generators);
        if !cut_elem.is_hyperbolic() {
            return Err(LabError::InvalidSurface(format!(
                "cut element {} is not hyperbolic (|tr| = {})",
                cut_word.render(&names),
                cut_elem.trace().abs()
            )));
        }
        let length = cut_elem.translation_length()?;
        let mut axis = cut_elem.axis()?;
        let mut to_fermi = axis.normalizer();
        if glued == GluedSides::NegativeOnly && to_fermi.apply(base_point).re > 0.0 {
            // keep the core on the negative side
            axis = Geodesic::new(axis.attracting, axis.repelling);
            to_fermi = axis.normalizer();
        }

        let mut sides: Vec<DomainSide> = Word::enumerate(generators.len(), 2)
            .into_iter()
            .map(|w| DomainSide {
                element: w.eval(&generators).normalized(),
                word: w,
            })
            .collect();
        // parabolic words: reduction in a cusp needs their large powers
        for w in Word::enumerate(generators.len(), 4) {
            let g = w.eval(&generators).normalized();
            if (g.trace().abs() - 2.0).abs() < 1e-9 && !g.is_hyperbolic() && g.max_abs_diff(&Mat2::identity()) > 1e-9 {
                sides.push(DomainSide { element: g, word: w });
            }
        }

        let mut lifts: Vec<Lift> = vec![Lift {
            element: Mat2::identity(),
            axis,
            to_fermi,
        }];
        let mut nearest_other = f64::INFINITY;
        for w in Word::enumerate(generators.len(), LIFT_WORD_DEPTH) {
            let g = w.eval(&generators).normalized();
            let ax = axis.image(&g);
            if lifts.iter().any(|l| l.axis.same_as(&ax, 1e-9)) {
                continue;
            }
            if ax.crosses(&axis) {
                return Err(LabError::InvalidSurface(format!(
                    "closed geodesic {} is not simple (lift by {} crosses it)",
                    cut_word.render(&names),
                    w.render(&names)
                )));
            }
            nearest_other = nearest_other.min(axis.distance_between(&ax));
            if ax.distance_to(base_point) <= LIFT_KEEP_RADIUS {
                lifts.push(Lift {
                    element: g,
                    axis: ax,
                    to_fermi: (to_fermi * g.inverse()).normalized(),
                });
            }
        }
        if nearest_other <= 2.0 * collar_width {
            return Err(LabError::InvalidSurface(format!(
                "collar of width {collar_width:.4} is not embedded (lifts {nearest_other:.4} apart)"
            )));
        }
        Ok(Self {
            generators,
            names,
            base_point: (base_point.re, base_point.im),
            sides,
            cut: CutGeodesic {
                word: cut_word,
                axis,
                to_fermi,
                length,
                collar_width,
                glued,
                lifts,
            },
        })
    }

    pub fn base(&self) -> C64 {
        C64::new(self.base_point.0, self.base_point.1)
    }

    /// Greedy reduction of a frame: repeatedly apply the domain-side element
    /// that most decreases the distance to the base point.
    pub fn reduce(&self, g: &Mat2) -> Result<(Mat2, usize)> {
        let p0 = self.base();
        let mut g = *g;
        let mut z = g.apply(C64::new(0.0, 1.0));
        let mut cur = hyperbolic::cosh_distance(z, p0);
        for step in 0..=MAX_REDUCTION_STEPS {
            let mut best: Option<(f64, &DomainSide)> = None;
            for s in &self.sides {
                let w = s.element.apply(z);
                let cd = hyperbolic::cosh_distance(w, p0);
                if cd < cur * (1.0 - 1e-13) && best.map_or(true, |(b, _)| cd < b) {
                    best = Some((cd, s));
                }
            }
            match best {
                None => return Ok((g, step)),
                Some((cd, s)) => {
                    // gallop along powers of the chosen side while they keep improving
                    let (mut step, mut best_cd) = (s.element, cd);
                    let mut power = s.element;
                    loop {
                        power = (power * power).normalized();
                        let cand = hyperbolic::cosh_distance(power.apply(z), p0);
                        if cand < best_cd * (1.0 - 1e-13) {
                            step = power;
                            best_cd = cand;
                        } else {
                            break;
                        }
                    }
                    g = (step * g).normalized();
                    z = g.apply(C64::new(0.0, 1.0));
                    cur = best_cd;
                }
            }
        }
        Err(LabError::ReductionFailure(MAX_REDUCTION_STEPS))
    }

    pub fn reduce_point(&self, z: C64) -> Result<C64> {
        let g = frame(z, 0.0);
        Ok(self.reduce(&g)?.0.apply(C64::new(0.0, 1.0)))
    }

    /// Distance from `z` to the nearest listed lift of the cut geodesic.
    pub fn distance_to_cut(&self, z: C64) -> f64 {
        self.cut
            .lifts
            .iter()
            .map(|l| {
                let u = l.to_fermi.apply(z);
                (u.re / u.im).abs().asinh()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Lower bound for the distance from `z` to the cut geodesic on the
    /// surface: lifts that were not listed lie beyond the keep radius.
    pub fn certified_distance_to_cut(&self, z: C64) -> f64 {
        let unlisted = (LIFT_KEEP_RADIUS - hyperbolic::distance(z, self.base())).max(0.0);
        self.distance_to_cut(z).min(unlisted)
    }
}

/// Curvature reading at a point; band edges report both one-sided values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CurvatureReading {
    Interior(f64),
    Edge { band_side: f64, flank_side: f64 },
}

impl CurvatureReading {
    pub fn max_value(&self) -> f64 {
        match *self {
            CurvatureReading::Interior(k) => k,
            CurvatureReading::Edge { band_side, flank_side } => band_side.max(flank_side),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceModel {
    pub preset: Preset,
    pub warp: WarpFunction,
    /// Extent of the warped chart in `rho`.
    pub warped_range: (f64, f64),
    /// Flank depth beyond which a funnel orbit is certified to escape.
    pub escape_depth: Option<f64>,
    pub hyperbolic: Option<HyperbolicChart>,
}

impl SurfaceModel {
    /// Crossing width of the flat band (infinite for a flat end).
    pub fn band_width(&self) -> f64 {
        self.warp.flat_hi - self.warp.flat_lo
    }

    pub fn height(&self) -> f64 {
        self.warp.height
    }

    pub fn hyperbolic_chart(&self) -> Result<&HyperbolicChart> {
        self.hyperbolic
            .as_ref()
            .ok_or_else(|| LabError::NotApplicable(format!("{} has no hyperbolic chart", self.preset.name())))
    }

    /// Region of a state; a state sitting on a band edge belongs to the side
    /// it is moving into.
    pub fn region(&self, v: &UnitTangent) -> Region {
        match v.chart {
            ChartId::Hyperbolic => Region::Hyperbolic,
            ChartId::Warped => {
                let (rho, s) = (v.c1, v.angle.sin());
                let w = &self.warp;
                if rho > w.flat_lo && rho < w.flat_hi {
                    Region::Band
                } else if rho == w.flat_hi {
                    if s > 0.0 {
                        Region::Flank
                    } else {
                        Region::Band
                    }
                } else if rho == w.flat_lo {
                    if s < 0.0 {
                        Region::Flank
                    } else {
                        Region::Band
                    }
                } else {
                    Region::Flank
                }
            }
        }
    }

    pub fn in_band(&self, v: &UnitTangent) -> bool {
        v.chart == ChartId::Warped && self.warp.in_band(v.c1)
    }

    /// Gaussian curvature at a point `(c1, c2)` of a chart.
    pub fn curvature_at(&self, chart: ChartId, c1: f64, c2: f64) -> Result<CurvatureReading> {
        match chart {
            ChartId::Warped => {
                let (lo, hi) = self.warped_range;
                if !c1.is_finite() || c1 < lo - 1e-12 || c1 > hi + 1e-12 || !c2.is_finite() {
                    return Err(LabError::OutOfDomain(format!("rho = {c1} outside [{lo}, {hi}]")));
                }
                let w = &self.warp;
                let k_flank = -1.0 / (w.flank_scale * w.flank_scale);
                if c1 == w.flat_lo || c1 == w.flat_hi {
                    Ok(CurvatureReading::Edge {
                        band_side: 0.0,
                        flank_side: k_flank,
                    })
                } else {
                    Ok(CurvatureReading::Interior(w.curvature(c1)))
                }
            }
            ChartId::Hyperbolic => {
                if self.hyperbolic.is_none() {
                    return Err(LabError::OutOfDomain("no hyperbolic chart".into()));
                }
                if !(c2 > 0.0) || !c1.is_finite() {
                    return Err(LabError::OutOfDomain(format!("({c1}, {c2}) not in the upper half-plane")));
                }
                Ok(CurvatureReading::Interior(-1.0))
            }
        }
    }

    /// Curvature from central second differences of the metric with step
    /// `delta`: `-f''/f` in the warped chart, `-y^2 Δu` with `u = -ln y` in
    /// the half-plane.
    pub fn numerical_curvature(&self, chart: ChartId, c1: f64, c2: f64, delta: f64) -> Result<f64> {
        self.curvature_at(chart, c1, c2)?;
        match chart {
            ChartId::Warped => {
                let f = |r: f64| self.warp.value(r);
                let f2 = (f(c1 + delta) - 2.0 * f(c1) + f(c1 - delta)) / (delta * delta);
                Ok(-f2 / f(c1))
            }
            ChartId::Hyperbolic => {
                let u = |_x: f64, y: f64| -y.ln();
                let lap = (u(c1 + delta, c2) + u(c1 - delta, c2) + u(c1, c2 + delta) + u(c1, c2 - delta)
                    - 4.0 * u(c1, c2))
                    / (delta * delta);
                Ok(-c2 * c2 * lap)
            }
        }
    }

    /// Fermi offset from the cut geodesic for a flank coordinate.
    fn fermi_offset(&self, rho: f64) -> f64 {
        let w = &self.warp;
        if rho >= w.flat_hi {
            rho - w.flat_hi
        } else {
            rho - w.flat_lo
        }
    }

    /// Warped state on a collar circle -> reduced half-plane state.
    pub fn warped_to_hyperbolic(&self, v: &UnitTangent) -> Result<UnitTangent> {
        let hc = self.hyperbolic_chart()?;
        let offset = self.fermi_offset(v.c1);
        let s = v.c2 * hc.cut.length / TAU;
        let u = C64::new(offset.tanh(), 1.0 / offset.cosh()) * s.exp();
        let psi_u = u.arg() - v.angle;
        let g = hc.cut.to_fermi.inverse() * frame(u, psi_u);
        let (g, _) = hc.reduce(&g.normalized())?;
        Ok(UnitTangent::from_frame(&g, v.t))
    }

    /// Half-plane state (near the collar of `lift`) -> warped state.
    pub fn hyperbolic_to_warped(&self, v: &UnitTangent, lift: usize) -> Result<UnitTangent> {
        let hc = self.hyperbolic_chart()?;
        let l = hc.cut.lifts.get(lift).ok_or_else(|| LabError::NotApplicable(format!("no lift {lift}")))?;
        let g = l.to_fermi * v.frame();
        let (u, psi_u) = frame_state(&g);
        let offset = (u.re / u.im).asinh();
        let s = u.norm().ln();
        let phi = (s * TAU / hc.cut.length).rem_euclid(TAU);
        let w = &self.warp;
        let rho = match hc.cut.glued {
            GluedSides::Both if offset >= 0.0 => w.flat_hi + offset,
            _ => w.flat_lo + offset,
        };
        Ok(UnitTangent::warped(rho, phi, wrap_angle(u.arg() - psi_u), v.t))
    }

    /// Moves a state sitting on a gluing circle into the neighbouring chart.
    pub fn chart_transition(&self, v: &UnitTangent) -> Result<UnitTangent> {
        const TOL: f64 = 1e-9;
        let hc = self.hyperbolic_chart()?;
        match v.chart {
            ChartId::Warped => {
                let (lo, hi) = self.warped_range;
                if (v.c1 - hi).abs() <= TOL && hi.is_finite() || (v.c1 - lo).abs() <= TOL && lo.is_finite() {
                    self.warped_to_hyperbolic(v)
                } else {
                    Err(LabError::NotApplicable(format!("rho = {} is not on a collar circle", v.c1)))
                }
            }
            ChartId::Hyperbolic => {
                let z = v.point();
                let target = hc.cut.collar_width;
                let found = hc.cut.lifts.iter().position(|l| {
                    let u = l.to_fermi.apply(z);
                    let d = (u.re / u.im).asinh();
                    let on_glued_side = hc.cut.glued == GluedSides::Both || d < 0.0;
                    on_glued_side && (d.abs() - target).abs() <= TOL
                });
                match found {
                    Some(k) => self.hyperbolic_to_warped(v, k),
                    None => Err(LabError::NotApplicable("state is not on a collar circle".into())),
                }
            }
        }
    }
}

/// Complete surface of revolution: flat band of width `l` between two funnels
/// of constant curvature `-1/h^2`.
pub fn build_cylinder_with_funnels(l: f64, h: f64) -> Result<SurfaceModel> {
    if !(l > 0.0) || !(h > 0.0) {
        return Err(LabError::InvalidParameter(format!("need l > 0 and h > 0 (got l={l}, h={h})")));
    }
    Ok(SurfaceModel {
        preset: Preset::CylinderWithFunnels,
        warp: WarpFunction::band(0.5 * l, h, h)?,
        warped_range: (f64::NEG_INFINITY, f64::INFINITY),
        escape_depth: Some(8.0 * h),
        hyperbolic: None,
    })
}

fn crossing_point(a: &Geodesic, b: &Geodesic) -> Option<C64> {
    if !a.crosses(b) {
        return None;
    }
    let n = a.normalizer();
    let r = n.apply_boundary(b.repelling);
    let s = n.apply_boundary(b.attracting);
    let u = C64::new(0.0, (-r * s).sqrt());
    Some(n.inverse().apply(u))
}

fn check_generators(gens: &[[f64; 4]; 2]) -> Result<Vec<Mat2>> {
    gens.iter()
        .map(|g| {
            let m = Mat2::from_array(*g);
            if (m.det() - 1.0).abs() > 1e-12 {
                Err(LabError::InvalidSurface(format!("generator {g:?} has determinant {}", m.det())))
            } else {
                Ok(m)
            }
        })
        .collect()
}

/// Hyperbolic once-punctured torus cut along the axis of the first generator,
/// with a flat band of width `l` and circumference equal to that geodesic's
/// length inserted along the cut.
pub fn build_flat_cylinder_torus(generators: [[f64; 4]; 2], l: f64) -> Result<SurfaceModel> {
    if !(l > 0.0) {
        return Err(LabError::InvalidParameter(format!("band width must be positive (got {l})")));
    }
    let gens = check_generators(&generators)?;
    let a = gens[0];
    if !a.is_hyperbolic() {
        return Err(LabError::InvalidSurface(format!(
            "cut generator is not hyperbolic (|tr| = {})",
            a.trace().abs()
        )));
    }
    let length = a.translation_length()?;
    let h = length / TAU;
    let axis_a = a.axis()?;
    let base = gens[1]
        .axis()
        .ok()
        .and_then(|bx| crossing_point(&axis_a, &bx))
        .unwrap_or_else(|| axis_a.foot(C64::new(0.0, 1.0)).0);
    let collar = h * 2f64.acosh();
    let chart = HyperbolicChart::new(gens, Word::letter(0), GluedSides::Both, base, collar)?;
    let b = 0.5 * l;
    Ok(SurfaceModel {
        preset: Preset::FlatCylinderTorus,
        warp: WarpFunction::band(b, h, 1.0)?,
        warped_range: (-b - collar, b + collar),
        escape_depth: None,
        hyperbolic: Some(chart),
    })
}

/// One-holed hyperbolic torus whose boundary geodesic (axis of the
/// commutator) bounds a flat half-cylinder end of circumference equal to its
/// length. The end is `rho >= 0`; the collar on the core side is `rho < 0`.
pub fn build_flat_ended_torus(generators: [[f64; 4]; 2], h: Option<f64>) -> Result<SurfaceModel> {
    let gens = check_generators(&generators)?;
    let commutator = Word(vec![(0, 1), (1, 1), (0, -1), (1, -1)]);
    let c = commutator.eval(&gens);
    if !c.is_hyperbolic() {
        return Err(LabError::InvalidSurface(format!(
            "boundary element [A,B] is not hyperbolic (tr = {:.6}); these moduli give a cusp",
            c.trace()
        )));
    }
    let length = c.translation_length()?;
    let h_len = length / TAU;
    if let Some(h) = h {
        if (h - h_len).abs() > 1e-9 * h_len.max(1.0) {
            return Err(LabError::InvalidParameter(format!(
                "h = {h} does not match boundary length / 2π = {h_len}"
            )));
        }
    }
    let (ax_a, ax_b) = (gens[0].axis()?, gens[1].axis()?);
    let base = crossing_point(&ax_a, &ax_b).unwrap_or_else(|| ax_a.foot(C64::new(0.0, 1.0)).0);
    let collar = h_len * 2f64.acosh();
    let chart = HyperbolicChart::new(gens, commutator, GluedSides::NegativeOnly, base, collar)?;
    Ok(SurfaceModel {
        preset: Preset::FlatEndedTorus,
        warp: WarpFunction::half_cylinder(h_len, 1.0)?,
        warped_range: (-collar, f64::INFINITY),
        escape_depth: None,
        hyperbolic: Some(chart),
    })
}

/// Report of [`validate_gluing`]: every defect is a maximum absolute error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GluingReport {
    pub preset: String,
    pub samples: usize,
    pub profile_defect: f64,
    pub transition_metric_defect: f64,
    pub transition_roundtrip_defect: f64,
    pub generator_det_defect: f64,
    pub pairing_defect: f64,
    pub max_curvature: f64,
    pub max_defect: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Largest jump of `f` or `f'` across the band edges of a profile.
pub fn profile_defect<P: WarpProfile>(p: &P) -> f64 {
    p.edges()
        .into_iter()
        .map(|e| {
            let (f0, d0) = p.one_sided(e, -1);
            let (f1, d1) = p.one_sided(e, 1);
            (f0 - f1).abs().max((d0 - d1).abs())
        })
        .fold(0.0, f64::max)
}

/// Deterministic pseudo-random sequence in [0,1) for sampling checks.
fn halton(i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut k = i + 1;
    while k > 0 {
        f /= base as f64;
        r += f * (k % base) as f64;
        k /= base;
    }
    r
}

/// Checks `C^1` continuity of the warp, isometry of the Fermi collar
/// transition and of the side pairings, and the sign of the curvature.
pub fn validate_gluing(m: &SurfaceModel, samples: usize) -> GluingReport {
    let prof = profile_defect(&m.warp);
    let mut metric_defect: f64 = 0.0;
    let mut roundtrip: f64 = 0.0;
    let mut det_defect: f64 = 0.0;
    let mut pairing: f64 = 0.0;
    let mut kmax = f64::NEG_INFINITY;

    // curvature on the warped chart
    let (lo, hi) = m.warped_range;
    let span_lo = if lo.is_finite() { lo } else { m.warp.flat_lo - 5.0 * m.warp.flank_scale };
    let span_hi = if hi.is_finite() { hi } else { m.warp.flat_hi.min(span_lo.abs() + 10.0) + 5.0 * m.warp.flank_scale };
    for i in 0..samples {
        let rho = span_lo + (span_hi - span_lo) * halton(i, 2);
        if let Ok(k) = m.curvature_at(ChartId::Warped, rho, 0.0) {
            kmax = kmax.max(k.max_value());
        }
    }

    if let Some(hc) = &m.hyperbolic {
        kmax = kmax.max(-1.0);
        for g in &hc.generators {
            det_defect = det_defect.max((g.det() - 1.0).abs());
        }
        let w = hc.cut.collar_width;
        let ninv = hc.cut.to_fermi.inverse();
        let h = m.warp.height;
        for i in 0..samples {
            // analytic pullback of |dz|^2/y^2 through (rho, phi) -> z
            let sides: &[f64] = match hc.cut.glued {
                GluedSides::Both => &[1.0, -1.0],
                GluedSides::NegativeOnly => &[-1.0],
            };
            let sgn = sides[i % sides.len()];
            let off = sgn * w * (0.05 + 0.95 * halton(i, 2));
            let phi = TAU * halton(i, 3);
            let s = h * phi;
            let u = C64::new(off.tanh(), 1.0 / off.cosh()) * s.exp();
            let du_drho = C64::new(1.0 / off.cosh().powi(2), -off.tanh() / off.cosh()) * s.exp();
            let du_dphi = u * h;
            let dz = 1.0 / (u * ninv.c + ninv.d).powi(2);
            let z = ninv.apply(u);
            let (zr, zp) = (dz * du_drho, dz * du_dphi);
            let y2 = z.im * z.im;
            let g11 = zr.norm_sqr() / y2;
            let g22 = zp.norm_sqr() / y2;
            let g12 = (zr * zp.conj()).re / y2;
            let rho = if sgn > 0.0 { m.warp.flat_hi + off } else { m.warp.flat_lo + off };
            let f = m.warp.value(rho);
            metric_defect = metric_defect
                .max((g11 - 1.0).abs())
                .max(g12.abs())
                .max((g22 - f * f).abs());

            // round trip through the chart transition on the collar circle
            let edge = if sgn > 0.0 { hi } else { lo };
            let alpha = wrap_angle(PI * (2.0 * halton(i, 5) - 1.0));
            let v = UnitTangent::warped(edge, phi, alpha, 0.0);
            if let Ok(hv) = m.chart_transition(&v) {
                match m.chart_transition(&hv) {
                    Ok(back) => {
                        let dphi = wrap_angle(back.c2 - v.c2).abs();
                        let err = (back.c1 - v.c1).abs().max(dphi).max(wrap_angle(back.angle - v.angle).abs());
                        roundtrip = roundtrip.max(err);
                    }
                    Err(_) => roundtrip = f64::INFINITY,
                }
            } else {
                roundtrip = f64::INFINITY;
            }
        }
        let p0 = hc.base();
        for (i, side) in hc.sides.iter().enumerate() {
            det_defect = det_defect.max((side.element.det() - 1.0).abs());
            let z1 = p0 + C64::new(0.3 * halton(i, 2) - 0.15, 0.2 * halton(i, 3));
            let z2 = p0 + C64::new(0.2 * halton(i, 5) - 0.1, -0.3 * halton(i, 7));
            let d0 = hyperbolic::distance(z1, z2);
            let d1 = hyperbolic::distance(side.element.apply(z1), side.element.apply(z2));
            pairing = pairing.max((d0 - d1).abs());
        }
    }
    let max_defect = prof
        .max(metric_defect)
        .max(roundtrip)
        .max(det_defect)
        .max(pairing);
    let tolerance = 1e-9;
    GluingReport {
        preset: m.preset.name().to_string(),
        samples,
        profile_defect: prof,
        transition_metric_defect: metric_defect,
        transition_roundtrip_defect: roundtrip,
        generator_det_defect: det_defect,
        pairing_defect: pairing,
        max_curvature: kmax,
        max_defect,
        tolerance,
        passed: max_defect < tolerance && kmax <= 0.0,
    }
}

/// Surface configuration: preset name, band width, height, generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SurfaceConfig {
    pub preset: String,
    #[serde(default)]
    pub l: Option<f64>,
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub generators: Option<Vec<[f64; 4]>>,
}

impl SurfaceConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| LabError::Config(e.to_string()))
    }

    /// `key = value` lines; `#` starts a comment. Generators are given as
    /// `A = a b c d` and `B = a b c d`.
    pub fn from_key_value(s: &str) -> Result<Self> {
        let mut cfg = SurfaceConfig::default();
        let mut gens: Vec<(String, [f64; 4])> = Vec::new();
        for (n, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| LabError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| LabError::Config(format!("line {}: '{v}' is not a number", n + 1)))
            };
            match k.to_ascii_lowercase().as_str() {
                "preset" => cfg.preset = v.to_string(),
                "l" => cfg.l = Some(num(v)?),
                "h" => cfg.h = Some(num(v)?),
                key if key.len() == 1 && key.chars().all(|c| c.is_ascii_alphabetic()) => {
                    let xs: Vec<f64> = v
                        .split(|c: char| c.is_whitespace() || c == ',')
                        .filter(|t| !t.is_empty())
                        .map(num)
                        .collect::<Result<_>>()?;
                    if xs.len() != 4 {
                        return Err(LabError::Config(format!("line {}: generator needs 4 numbers", n + 1)));
                    }
                    gens.push((key.to_string(), [xs[0], xs[1], xs[2], xs[3]]));
                }
                other => return Err(LabError::Config(format!("line {}: unknown key '{other}'", n + 1))),
            }
        }
        if !gens.is_empty() {
            gens.sort_by(|a, b| a.0.cmp(&b.0));
            cfg.generators = Some(gens.into_iter().map(|g| g.1).collect());
        }
        if cfg.preset.is_empty() {
            return Err(LabError::Config("missing 'preset'".into()));
        }
        Ok(cfg)
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.trim_start().starts_with('{') {
            Self::from_json(s)
        } else {
            Self::from_key_value(s)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&s)
    }

    fn generator_pair(&self, default: [[f64; 4]; 2]) -> Result<[[f64; 4]; 2]> {
        match &self.generators {
            None => Ok(default),
            Some(g) if g.len() == 2 => Ok([g[0], g[1]]),
            Some(g) => Err(LabError::Config(format!("expected 2 generators, got {}", g.len()))),
        }
    }

    pub fn build(&self) -> Result<SurfaceModel> {
        match Preset::from_name(&self.preset)? {
            Preset::CylinderWithFunnels => build_cylinder_with_funnels(
                self.l.ok_or_else(|| LabError::Config("funnels preset needs l".into()))?,
                self.h.ok_or_else(|| LabError::Config("funnels preset needs h".into()))?,
            ),
            Preset::FlatCylinderTorus => build_flat_cylinder_torus(
                self.generator_pair(PUNCTURED_TORUS_GENERATORS)?,
                self.l.unwrap_or(4.0),
            ),
            Preset::FlatEndedTorus => {
                build_flat_ended_torus(self.generator_pair(ONE_HOLED_TORUS_GENERATORS)?, self.h)
            }
        }
    }
}
