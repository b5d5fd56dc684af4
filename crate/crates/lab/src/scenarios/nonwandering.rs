use std::f64::consts::{PI, TAU};

use flatcyl::flow::{canonicalize, integrate, is_rank_one, state_gap, RankVerdict, UnitTangent};
use flatcyl::hyperbolic::Word;
use flatcyl::periodic::*;
use flatcyl::surface::{ChartId, SurfaceModel};
use flatcyl::Result;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::tolerance;
use crate::config::{Scenario, ScenarioConfig};
use crate::report::{fmt, Assertion, Check, Report, Table};
use crate::sampling::rng;

/// Integration time used to confirm escape certificates and to follow
/// core vectors.
const HORIZON: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonwanderingClass {
    VerticalPeriodic,
    EscapesForward,
    EscapesBackward,
    ReturnsToCore,
}

impl NonwanderingClass {
    pub fn name(&self) -> &'static str {
        match self {
            NonwanderingClass::VerticalPeriodic => "vertical-periodic",
            NonwanderingClass::EscapesForward => "escapes-forward",
            NonwanderingClass::EscapesBackward => "escapes-backward",
            NonwanderingClass::ReturnsToCore => "returns-to-core",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classified {
    pub v: UnitTangent,
    pub class: NonwanderingClass,
    pub certificate: Option<EscapeCertificate>,
    /// `|rho(T) - predicted|` along the escape, or the closure gap after `2 pi h`.
    pub check: f64,
}

/// Classifies a vector of the flat end. Vertical vectors are checked to
/// close after exactly `2 pi h`; the others carry an escape certificate that
/// is confirmed by integrating over [`HORIZON`].
pub fn classify_end_vector(m: &SurfaceModel, v: &UnitTangent) -> Result<Classified> {
    match flat_end_escape(m, v) {
        Ok(cert) => {
            let t = match cert.direction {
                EscapeDirection::Forward => HORIZON,
                EscapeDirection::Backward => -HORIZON,
            };
            let end = canonicalize(m, &integrate(m, v, t)?.end)?;
            let predicted = cert.rho + HORIZON * cert.rate;
            let check = if end.chart == ChartId::Warped { (end.c1 - predicted).abs() } else { f64::INFINITY };
            let class = match cert.direction {
                EscapeDirection::Forward => NonwanderingClass::EscapesForward,
                EscapeDirection::Backward => NonwanderingClass::EscapesBackward,
            };
            Ok(Classified {
                v: *v,
                class,
                certificate: Some(cert),
                check,
            })
        }
        Err(_) => {
            let seg = integrate(m, v, TAU * m.warp.height)?;
            Ok(Classified {
                v: *v,
                class: NonwanderingClass::VerticalPeriodic,
                certificate: None,
                check: state_gap(m, &seg.end, v),
            })
        }
    }
}

/// Follows a vector from the core: it either enters the end with outward
/// velocity within the horizon (certified escape) or is still in the core.
pub fn classify_core_vector(m: &SurfaceModel, v: &UnitTangent) -> Result<Classified> {
    let end = canonicalize(m, &integrate(m, v, HORIZON)?.end)?;
    let cert = flat_end_escape(m, &end).ok().filter(|c| c.direction == EscapeDirection::Forward);
    Ok(Classified {
        v: *v,
        class: if cert.is_some() {
            NonwanderingClass::EscapesForward
        } else {
            NonwanderingClass::ReturnsToCore
        },
        certificate: cert,
        check: 0.0,
    })
}

pub fn run(cfg: &ScenarioConfig) -> Result<Report> {
    let m = cfg.surface.build()?;
    let h = m.warp.height;
    let n = cfg.grid.unwrap_or(24);
    let n_max = cfg.n_max.unwrap_or(8);
    let samples = cfg.samples.unwrap_or(32);

    // (a) grid in the end; angle 0 and pi are the two vertical directions
    let grid: Vec<UnitTangent> = (0..n)
        .flat_map(|i| {
            (0..n).map(move |j| {
                let rho = 0.25 + 4.0 * i as f64 / n as f64;
                let alpha = if 2 * j == n { 0.0 } else { -PI + TAU * j as f64 / n as f64 };
                let alpha = if j == 0 { PI } else { alpha };
                UnitTangent::warped(rho, TAU * (i * 7 % n) as f64 / n as f64, alpha, 0.0)
            })
        })
        .collect();
    let end: Vec<Classified> = grid.par_iter().map(|v| classify_end_vector(&m, v)).collect::<Result<_>>()?;
    let (lo, _) = m.warped_range;
    let core_starts: Vec<UnitTangent> = (0..samples as u64)
        .map(|k| {
            let mut g = rng(cfg.seed, Scenario::Nonwandering, k);
            UnitTangent::warped(g.gen_range(0.9 * lo..0.1 * lo), g.gen_range(0.0..TAU), g.gen_range(-PI..PI), 0.0)
        })
        .collect();
    let core: Vec<Classified> = core_starts
        .par_iter()
        .map(|v| classify_core_vector(&m, v))
        .collect::<Result<_>>()?;

    let mut table = Table::new("classification", &["source", "rho", "phi", "alpha", "class", "rate", "check"]);
    for (src, list) in [("end", &end), ("core", &core)] {
        for c in list {
            table.push(vec![
                src.into(),
                fmt(c.v.c1),
                fmt(c.v.c2),
                fmt(c.v.angle),
                c.class.name().into(),
                c.certificate.map_or(String::new(), |k| fmt(k.rate)),
                fmt(c.check),
            ]);
        }
    }
    let vertical: Vec<&Classified> = end.iter().filter(|c| c.class == NonwanderingClass::VerticalPeriodic).collect();
    let escaping: Vec<&Classified> = end.iter().filter(|c| c.certificate.is_some()).collect();
    let non_vertical = grid.iter().filter(|v| v.angle.sin().abs() > 1e-15).count();
    let escape_err = escaping.iter().map(|c| c.check).fold(0.0, f64::max);
    let closure_err = vertical.iter().map(|c| c.check).fold(0.0, f64::max);
    let rank_two = vertical
        .iter()
        .map(|c| is_rank_one(&m, &c.v, 10.0))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .all(|r| *r == RankVerdict::RankTwoCertified);

    // (b) W_n = C^n X C^n approaching the bounding geodesic C
    let hc = m.hyperbolic_chart()?;
    let x = Word::parse("A", &hc.names)?;
    let dists = boundary_approximation(&m, &x, n_max)?;
    let c = &hc.cut.word;
    let mut words = Vec::new();
    for (k, d) in dists.iter().enumerate() {
        let w = c.pow(k + 1).concat(&x).concat(&c.pow(k + 1));
        let entry = match axis_from_word(&m, &w).and_then(|g| refine_periodic(&m, &g, 1e-10)) {
            Ok(g) => json!({ "n": k + 1, "word": w.render(&hc.names), "distance": d, "period": g.period,
                             "residual": g.residual, "rank": g.rank }),
            Err(e) => json!({ "n": k + 1, "word": w.render(&hc.names), "distance": d, "refine_error": e.to_string() }),
        };
        words.push(entry);
    }
    let decreasing = dists.windows(2).all(|p| p[1] < p[0]);
    let ratio = dists.last().unwrap() / dists[0];

    let mut r = Report::new(cfg);
    r.assertions.push(Assertion::holds(
        9,
        "every non-vertical end vector has an escape certificate",
        escaping.len() == non_vertical,
    ));
    r.assertions.push(Assertion::new(
        9,
        "escape certificates match integration",
        escape_err,
        Check::Within {
            target: 0.0,
            tol: tolerance(cfg, 1e-9),
        },
    ));
    r.assertions.push(Assertion::new(
        9,
        "vertical end vectors close after 2 pi h",
        closure_err,
        Check::Within {
            target: 0.0,
            tol: tolerance(cfg, 1e-12),
        },
    ));
    r.assertions.push(Assertion::holds(9, "vertical end vectors are rank two", rank_two));
    r.assertions.push(Assertion::holds(9, "boundary distances strictly decreasing", decreasing));
    r.assertions.push(Assertion::new(
        9,
        "final boundary distance over initial",
        ratio,
        Check::AtMost { limit: 0.05 },
    ));
    r.status = "complete".into();
    let count = |list: &[Classified], k: NonwanderingClass| list.iter().filter(|c| c.class == k).count();
    let classes = [
        NonwanderingClass::VerticalPeriodic,
        NonwanderingClass::EscapesForward,
        NonwanderingClass::EscapesBackward,
        NonwanderingClass::ReturnsToCore,
    ];
    r.results = json!({
        "end_counts": classes.iter().map(|k| (k.name().to_string(), json!(count(&end, *k)))).collect::<serde_json::Map<_, _>>(),
        "core_counts": classes.iter().map(|k| (k.name().to_string(), json!(count(&core, *k)))).collect::<serde_json::Map<_, _>>(),
        "vertical_period": TAU * h,
        "max_escape_error": escape_err,
        "max_closure_gap": closure_err,
        "boundary_words": words,
        "boundary_distances": dists,
    });
    r.notes.push("the end carries a continuum of rank-two vertical orbits; every other vector there escapes".into());
    r.notes.push("connectedness of the non-wandering set is topological and is not asserted numerically".into());
    r.plots.push(("boundary_distances".into(), json!({ "n": (1..=n_max).collect::<Vec<_>>(), "distance": dists })));
    r.tables.push(table);
    Ok(r)
}
