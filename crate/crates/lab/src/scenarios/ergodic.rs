use std::f64::consts::PI;

use flatcyl::flow::UnitTangent;
use flatcyl::measure::{occupancy, RegionSpec};
use flatcyl::surface::{CylinderSpec, SurfaceModel};
use flatcyl::Result;
use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

use super::{cylinder, tolerance};
use crate::config::ScenarioConfig;
use crate::report::{fmt, Assertion, Check, Report, Table};
use crate::sampling::rng;

/// Uniform start in one of the two flanks, away from the band edges.
pub fn flank_start(m: &SurfaceModel, seed: u64, index: u64) -> UnitTangent {
    let mut g = rng(seed, crate::config::Scenario::ErgodicGap, index);
    let (lo, hi) = m.warped_range;
    let upper: bool = g.gen();
    let depth = g.gen_range(0.02..0.98);
    let rho = if upper {
        m.warp.flat_hi + depth * (hi - m.warp.flat_hi)
    } else {
        m.warp.flat_lo - depth * (m.warp.flat_lo - lo)
    };
    UnitTangent::warped(rho, g.gen_range(0.0..2.0 * PI), g.gen_range(-PI..PI), 0.0)
}

pub fn run(cfg: &ScenarioConfig) -> Result<Report> {
    let m = cfg.surface.build()?;
    let spec: CylinderSpec = cylinder(&m, cfg)?;
    let eps = cfg.eps.unwrap_or(0.5);
    let theta = cfg.theta.unwrap_or(0.2);
    let samples = cfg.samples.unwrap_or(100);
    let horizons = cfg.horizons.clone().unwrap_or_else(|| vec![1e2, 1e3, 1e4]);
    let region = RegionSpec::strip(&m, &spec, eps, theta)?;

    let starts: Vec<UnitTangent> = (0..samples as u64).map(|i| flank_start(&m, cfg.seed, i)).collect();
    let jobs: Vec<(usize, usize)> = (0..samples).flat_map(|i| (0..horizons.len()).map(move |k| (i, k))).collect();
    let stats = jobs
        .par_iter()
        .map(|&(i, k)| occupancy(&m, &starts[i], horizons[k], &region))
        .collect::<Result<Vec<_>>>()?;

    let mut table = Table::new("occupancy", &["index", "rho0", "phi0", "alpha0", "T", "occupied", "fraction"]);
    let mut max_by_t = vec![0.0f64; horizons.len()];
    for (&(i, k), s) in jobs.iter().zip(&stats) {
        let v = &starts[i];
        max_by_t[k] = max_by_t[k].max(s.fraction);
        table.push(vec![
            i.to_string(),
            fmt(v.c1),
            fmt(v.c2),
            fmt(v.angle),
            fmt(horizons[k]),
            fmt(s.occupied),
            fmt(s.fraction),
        ]);
    }
    let max_fraction = max_by_t.iter().cloned().fold(0.0, f64::max);

    // the bound is for starts outside the band; a vertical start sits in U forever
    let vertical = UnitTangent::warped(region.center, 0.0, region.direction, 0.0);
    let inside = occupancy(&m, &vertical, horizons[0], &region)?;

    let mut r = Report::new(cfg);
    for (k, t) in horizons.iter().enumerate() {
        r.assertions.push(Assertion::new(
            3,
            &format!("max occupancy fraction at T = {t}"),
            max_by_t[k],
            Check::AtMost { limit: 0.5 },
        ));
    }
    r.assertions.push(Assertion::holds(
        3,
        "one row per (start, horizon)",
        table.rows.len() == samples * horizons.len(),
    ));
    r.assertions.push(Assertion::new(
        3,
        "vertical start inside the band stays in U",
        inside.fraction,
        Check::Within {
            target: 1.0,
            tol: tolerance(cfg, 1e-12),
        },
    ));
    r.status = "complete".into();
    r.results = json!({
        "eps": eps,
        "theta": theta,
        "samples": samples,
        "horizons": horizons,
        "max_fraction": max_fraction,
        "max_fraction_by_horizon": max_by_t,
        "gap_to_half": 0.5 - max_fraction,
        "vertical_start_fraction": inside.fraction,
    });
    r.notes.push(format!(
        "every orbit started outside the band spends at most half of [0, T] in U (max {max_fraction:.6}); \
         a measure charging U with more than 1/2 cannot be a limit of such orbit averages"
    ));
    r.plots.push(("max_fraction".into(), json!({ "T": horizons, "max_fraction": max_by_t })));
    r.tables.push(table);
    Ok(r)
}
