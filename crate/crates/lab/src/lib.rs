//! Experiment runner for the `flatcyl` library: four scenarios, each
//! producing a report of machine-checkable assertions plus data tables.

pub mod config;
pub mod report;
pub mod sampling;
pub mod scenarios;

pub use config::{Scenario, ScenarioConfig};
pub use report::{Assertion, Check, Report, Table};

use flatcyl::{LabError, Result};

/// Runs a scenario on a pool of `workers` threads (all available if `None`).
/// The report does not depend on the worker count.
pub fn run(cfg: &ScenarioConfig, workers: Option<usize>) -> Result<Report> {
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = workers {
        pool = pool.num_threads(k.max(1));
    }
    let pool = pool.build().map_err(|e| LabError::Config(e.to_string()))?;
    pool.install(|| match cfg.scenario {
        Scenario::ClosingLemma => scenarios::closing::run(cfg),
        Scenario::ErgodicGap => scenarios::ergodic::run(cfg),
        Scenario::ProhorovBound => scenarios::prohorov::run(cfg),
        Scenario::Nonwandering => scenarios::nonwandering::run(cfg),
    })
}
