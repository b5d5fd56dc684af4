use flatcyl::hyperbolic::Word;
use flatcyl::periodic::*;
use flatcyl::{LabError, Result};
use serde_json::json;

use super::{cylinder, tolerance};
use crate::config::ScenarioConfig;
use crate::report::{Assertion, Check, Report, Table};

/// Closed geodesic of the hyperbolic core used as the control.
pub const CONTROL_WORD: &str = "ABAb";

pub fn run(cfg: &ScenarioConfig) -> Result<Report> {
    let m = cfg.surface.build()?;
    let spec = cylinder(&m, cfg)?;
    let theta = cfg.theta.unwrap_or(0.2);
    let eps = cfg.eps.unwrap_or(0.5);
    let t_budget = cfg.t_budget.unwrap_or(80.0);
    let n = cfg.grid.unwrap_or(200);
    let grid = SearchGrid {
        n_position: n,
        n_angle: n,
        refine: cfg.refine.unwrap_or(8),
    };
    let control_gap = cfg.control_gap.unwrap_or(1e-3);
    let mut r = Report::new(cfg);
    let mut results = serde_json::Map::new();
    let mut table = Table::new("pseudo_orbit", &["t", "chart", "coord1", "coord2", "alpha"]);

    match obstruction_pseudo_orbit(&m, &spec, theta, eps, t_budget) {
        Ok(q) => {
            let outcome = shadowing_search_with(&m, &q, &grid)?;
            let (certified, min_residual) = match &outcome {
                ShadowingOutcome::Obstructed {
                    certificate,
                    min_residual,
                    ..
                } => (certificate.enter_sign != certificate.required_sign, *min_residual),
                ShadowingOutcome::Closed { orbit, .. } => (false, orbit.residual),
                ShadowingOutcome::BestResidual { residual, .. } => (false, *residual),
            };
            r.assertions.push(Assertion::holds(6, "obstruction certificate emitted", certified));
            r.assertions.push(Assertion::new(
                6,
                "minimal closure residual over the shooting grid",
                min_residual,
                Check::AtLeast { limit: 0.1 },
            ));
            results.insert(
                "pseudo_orbit".into(),
                json!({ "start": q.start(), "period": q.period(), "gap": q.gap, "radius": q.radius }),
            );
            results.insert("outcome".into(), serde_json::to_value(&outcome).unwrap());
            for row in q.pseudo_orbit.to_csv(&m, 0.05)?.lines().skip(1) {
                table.push(row.split(',').map(str::to_string).collect());
            }
            r.status = "complete".into();
        }
        Err(LabError::NotApplicable(why)) => {
            r.status = "inconclusive".into();
            r.notes.push(format!("no recurrence within the time budget: {why}"));
        }
        Err(e) => return Err(e),
    }

    let names = &m.hyperbolic_chart()?.names;
    let word = Word::parse(CONTROL_WORD, names)?;
    let c = axis_from_word(&m, &word)?;
    let control = hyperbolic_control_pseudo_orbit(&m, &c, control_gap, 1e-2)?;
    let outcome = shadowing_search(&m, &control)?;
    let shadow = match &outcome {
        ShadowingOutcome::Closed { shadowing_distance, .. } => *shadowing_distance,
        _ => f64::INFINITY,
    };
    r.assertions.push(Assertion::new(
        6,
        "control pseudo-orbit shadowed",
        shadow,
        Check::AtMost { limit: 1e-2 },
    ));
    results.insert(
        "control".into(),
        json!({ "word": CONTROL_WORD, "period": c.period, "gap": control.gap, "outcome": outcome }),
    );

    // an exactly periodic pseudo-orbit is its own shadow
    let a = designated_geodesic(&m, &spec)?;
    let exact = ShadowingQuery::new(&m, &a.initial, a.period, 0.01, 0.01)?;
    let residual = match shadowing_search(&m, &exact)? {
        ShadowingOutcome::Closed { orbit, .. } => orbit.residual,
        _ => f64::INFINITY,
    };
    r.assertions.push(Assertion::new(
        6,
        "vertical pseudo-orbit closes",
        residual,
        Check::Within {
            target: 0.0,
            tol: tolerance(cfg, 1e-12),
        },
    ));
    results.insert("vertical_residual".into(), json!(residual));
    results.insert("theta".into(), json!(theta));
    results.insert("eps".into(), json!(eps));
    results.insert("grid".into(), json!([grid.n_position, grid.n_angle, grid.refine]));
    r.results = serde_json::Value::Object(results);
    r.plots.push((
        "pseudo_orbit".into(),
        json!({
            "t": table.rows.iter().map(|row| row[0].parse::<f64>().unwrap_or(f64::NAN)).collect::<Vec<_>>(),
            "coord1": table.rows.iter().map(|row| row[2].parse::<f64>().unwrap_or(f64::NAN)).collect::<Vec<_>>(),
        }),
    ));
    r.tables.push(table);
    Ok(r)
}
