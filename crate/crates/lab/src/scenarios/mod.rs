pub mod closing;
pub mod ergodic;
pub mod nonwandering;
pub mod prohorov;

use flatcyl::surface::{CylinderSpec, SurfaceModel};
use flatcyl::Result;

use crate::config::ScenarioConfig;

/// The configured cylinder: the middle geodesic unless `d` is set.
pub(crate) fn cylinder(m: &SurfaceModel, cfg: &ScenarioConfig) -> Result<CylinderSpec> {
    match cfg.d {
        Some(d) => CylinderSpec::new(m.band_width(), m.warp.height, d),
        None => CylinderSpec::middle(m),
    }
}

pub(crate) fn tolerance(cfg: &ScenarioConfig, default: f64) -> f64 {
    cfg.tolerance.unwrap_or(default)
}
