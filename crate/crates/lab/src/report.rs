use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Check {
    AtMost { limit: f64 },
    AtLeast { limit: f64 },
    /// `|measured - target| < tol`, strictly.
    Within { target: f64, tol: f64 },
    Holds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    /// Acceptance criterion number this assertion belongs to.
    pub criterion: u8,
    pub name: String,
    pub measured: f64,
    pub check: Check,
    pub passed: bool,
}

impl Assertion {
    pub fn new(criterion: u8, name: &str, measured: f64, check: Check) -> Self {
        let passed = match check {
            Check::AtMost { limit } => measured <= limit,
            Check::AtLeast { limit } => measured >= limit,
            Check::Within { target, tol } => (measured - target).abs() < tol,
            Check::Holds => measured == 1.0,
        };
        Self {
            criterion,
            name: name.to_string(),
            measured,
            check,
            passed,
        }
    }

    pub fn holds(criterion: u8, name: &str, ok: bool) -> Self {
        Self::new(criterion, name, if ok { 1.0 } else { 0.0 }, Check::Holds)
    }
}

/// A CSV table; cells are preformatted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub status: String,
    pub assertions: Vec<Assertion>,
    pub results: Value,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub tables: Vec<Table>,
    #[serde(skip)]
    pub plots: Vec<(String, Value)>,
}

impl Report {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            scenario: cfg.scenario.name().to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            status: String::new(),
            assertions: Vec::new(),
            results: Value::Null,
            notes: Vec::new(),
            tables: Vec::new(),
            plots: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Assertion> {
        self.assertions.iter().filter(|a| !a.passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `summary.json`, one CSV per table and `plotdata/*.json`.
    pub fn emit(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir.join("plotdata"))?;
        fs::write(dir.join("summary.json"), self.summary_json())?;
        for t in &self.tables {
            fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
        }
        for (name, v) in &self.plots {
            let s = serde_json::to_string_pretty(v).expect("plot data serializes");
            fs::write(dir.join("plotdata").join(format!("{name}.json")), s)?;
        }
        Ok(())
    }
}

pub fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}
