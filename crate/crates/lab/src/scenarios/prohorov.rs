use std::f64::consts::{PI, TAU};

use flatcyl::flow::{integrate, UnitTangent};
use flatcyl::measure::*;
use flatcyl::periodic::designated_geodesic;
use flatcyl::Result;
use serde_json::json;

use super::{cylinder, tolerance};
use crate::config::ScenarioConfig;
use crate::report::{fmt, Assertion, Check, Report, Table};

const FLOW_TOL: f64 = 1e-6;

/// Discretisation allowance for an empirical measure on `[0, T]` with step `dt`.
pub fn slack(h: f64, dt: f64, t: f64) -> f64 {
    TAU * h * dt / t + 10.0 / t
}

pub fn run(cfg: &ScenarioConfig) -> Result<Report> {
    let m = cfg.surface.build()?;
    let spec = cylinder(&m, cfg)?;
    let a = designated_geodesic(&m, &spec)?;
    let h = m.warp.height;
    let dt = cfg.dt.unwrap_or(0.1);
    let n_delta = cfg.n_delta.unwrap_or(256);
    let eta = cfg.eta.unwrap_or(0.01);
    let horizons = cfg.horizons.clone().unwrap_or_else(|| vec![1e3, 1e4, 1e5]);
    let bound = prohorov_lower_bound(&spec);
    let start = UnitTangent::hyperbolic(m.hyperbolic_chart()?.base(), 0.3, 0.0);

    let mut r = Report::new(cfg);
    let mut table = Table::new(
        "prohorov",
        &["T", "atoms", "bins", "distance", "lo", "shift", "certified", "bound", "slack"],
    );
    let mut ladder = Vec::new();
    for &t in &horizons {
        let seg = integrate(&m, &start, t)?;
        let mu = empirical_from_trajectory(&m, &seg, dt)?;
        let inst = compress_against_vertical(&m, &mu, &a, n_delta, eta)?;
        let res = prohorov_flow(&inst.mu, &inst.nu, &inst.dist, FLOW_TOL)?;
        let verified = verify_witnesses(&res, &inst.mu, &inst.nu, &inst.dist);
        // binning moved each atom of mu by at most `shift`, and the uniform
        // measure on A is within h pi / N of its N-atom discretisation
        let certified = res.lo - inst.shift - h * PI / n_delta as f64;
        let s = slack(h, dt, t);
        r.assertions.push(Assertion::new(
            4,
            &format!("certified distance at T = {t} against bound - slack"),
            certified,
            Check::AtLeast { limit: bound - s },
        ));
        r.assertions.push(Assertion::holds(4, &format!("flow witnesses verify at T = {t}"), verified));
        r.assertions.push(Assertion::holds(
            4,
            &format!("atom count at T = {t}"),
            mu.len() == (t / dt * (1.0 + 1e-12)).floor() as usize,
        ));
        table.push(vec![
            fmt(t),
            mu.len().to_string(),
            inst.mu.len().to_string(),
            fmt(res.distance),
            fmt(res.lo),
            fmt(inst.shift),
            fmt(certified),
            fmt(bound),
            fmt(s),
        ]);
        ladder.push(json!({
            "T": t,
            "atoms": mu.len(),
            "bins": inst.mu.len(),
            "distance": res.distance,
            "bracket": [res.lo, res.hi],
            "shift": inst.shift,
            "certified": certified,
            "slack": s,
            "witness_direction": res.witness_direction,
        }));
    }

    // sanity: the discretised Dirac measure is at distance 0 from itself
    let delta = dirac_on_closed_geodesic(&m, &a, 64)?;
    let w = delta.weights();
    let own = prohorov_flow(&w, &w, &distance_matrix(&m, &delta, &delta), FLOW_TOL)?;
    r.assertions.push(Assertion::new(
        4,
        "distance from the Dirac measure on A to itself",
        own.distance,
        Check::Within {
            target: 0.0,
            tol: tolerance(cfg, 1e-9),
        },
    ));

    r.status = "complete".into();
    r.results = json!({
        "l": spec.l,
        "d": spec.d,
        "bound": bound,
        "dt": dt,
        "n_delta": n_delta,
        "eta": eta,
        "start": start,
        "ladder": ladder,
    });
    r.plots.push((
        "distance_vs_T".into(),
        json!({
            "T": horizons,
            "certified": table.rows.iter().map(|row| row[6].parse::<f64>().unwrap()).collect::<Vec<_>>(),
            "bound": bound,
        }),
    ));
    r.tables.push(table);
    Ok(r)
}
