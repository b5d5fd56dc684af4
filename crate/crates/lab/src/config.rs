use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flatcyl::surface::{Preset, SurfaceConfig};
use flatcyl::LabError;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    ClosingLemma,
    ErgodicGap,
    ProhorovBound,
    Nonwandering,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::ClosingLemma,
        Scenario::ErgodicGap,
        Scenario::ProhorovBound,
        Scenario::Nonwandering,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::ClosingLemma => "closing-lemma",
            Scenario::ErgodicGap => "ergodic-gap",
            Scenario::ProhorovBound => "prohorov-bound",
            Scenario::Nonwandering => "nonwandering",
        }
    }

    pub fn required_preset(&self) -> Preset {
        match self {
            Scenario::Nonwandering => Preset::FlatEndedTorus,
            _ => Preset::FlatCylinderTorus,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, LabError> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s.trim().replace('_', "-"))
            .ok_or_else(|| LabError::Config(format!("unknown scenario '{s}'")))
    }
}

/// Everything a scenario run depends on. Unset parameters take the
/// scenario's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub surface: SurfaceConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    /// Region radius.
    #[serde(default)]
    pub eps: Option<f64>,
    /// Angle window to the vertical.
    #[serde(default)]
    pub theta: Option<f64>,
    /// Distance from the designated geodesic to the nearer band edge.
    #[serde(default)]
    pub d: Option<f64>,
    #[serde(default)]
    pub horizons: Option<Vec<f64>>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub refine: Option<usize>,
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub n_delta: Option<usize>,
    #[serde(default)]
    pub eta: Option<f64>,
    /// Time budget for the recurrence search.
    #[serde(default)]
    pub t_budget: Option<f64>,
    #[serde(default)]
    pub control_gap: Option<f64>,
    /// Overrides the tolerance of every equality assertion.
    #[serde(default)]
    pub tolerance: Option<f64>,
}

const SURFACE_KEYS: [&str; 3] = ["preset", "l", "h"];

impl ScenarioConfig {
    pub fn new(scenario: Scenario, surface: SurfaceConfig) -> Self {
        Self {
            scenario,
            surface,
            seed: 0,
            out: None,
            eps: None,
            theta: None,
            d: None,
            horizons: None,
            dt: None,
            samples: None,
            grid: None,
            refine: None,
            n_max: None,
            n_delta: None,
            eta: None,
            t_budget: None,
            control_gap: None,
            tolerance: None,
        }
    }

    /// Default configuration of a scenario on its preset.
    pub fn preset(scenario: Scenario) -> Self {
        let surface = SurfaceConfig {
            preset: scenario.required_preset().name().to_string(),
            l: (scenario != Scenario::Nonwandering).then_some(4.0),
            ..SurfaceConfig::default()
        };
        Self::new(scenario, surface)
    }

    pub fn parse(s: &str) -> Result<Self, LabError> {
        let cfg: Self = if s.trim_start().starts_with('{') {
            serde_json::from_str(s).map_err(|e| LabError::Config(e.to_string()))?
        } else {
            Self::from_key_value(s)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let s = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&s)
    }

    /// `key = value` lines. Surface keys (`preset`, `l`, `h`, one-letter
    /// generator names) go to the surface; lists are comma or space separated.
    fn from_key_value(s: &str) -> Result<Self, LabError> {
        let mut surface = String::new();
        let mut map = Map::new();
        for (n, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LabError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim().to_ascii_lowercase().replace('-', "_"), v.trim());
            let generator = k.len() == 1 && k.chars().all(|c| c.is_ascii_alphabetic()) && k != "d";
            if SURFACE_KEYS.contains(&k.as_str()) || generator {
                surface.push_str(line);
                surface.push('\n');
                continue;
            }
            let tokens: Vec<&str> = v.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).collect();
            let scalar = |t: &str| serde_json::from_str::<Value>(t).unwrap_or_else(|_| Value::String(t.to_string()));
            let value = if k == "horizons" {
                Value::Array(tokens.iter().map(|t| scalar(t)).collect())
            } else if tokens.len() == 1 {
                scalar(tokens[0])
            } else {
                return Err(LabError::Config(format!("line {}: '{k}' takes one value", n + 1)));
            };
            map.insert(k, value);
        }
        map.insert("surface".into(), serde_json::to_value(SurfaceConfig::from_key_value(&surface)?).unwrap());
        serde_json::from_value(Value::Object(map)).map_err(|e| LabError::Config(e.to_string()))
    }

    /// Range checks on every set parameter and on the scenario's preset.
    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |msg: String| Err(LabError::Config(msg));
        let preset = Preset::from_name(&self.surface.preset)?;
        if preset != self.scenario.required_preset() {
            return bad(format!(
                "{} runs on {}, not {}",
                self.scenario,
                self.scenario.required_preset().name(),
                preset.name()
            ));
        }
        let positive = [
            ("eps", self.eps),
            ("theta", self.theta),
            ("d", self.d),
            ("dt", self.dt),
            ("eta", self.eta),
            ("t_budget", self.t_budget),
            ("control_gap", self.control_gap),
        ];
        for (name, v) in positive {
            if let Some(x) = v {
                if !(x > 0.0 && x.is_finite()) {
                    return bad(format!("{name} must be positive and finite (got {x})"));
                }
            }
        }
        if let Some(t) = self.theta {
            if t >= FRAC_PI_2 {
                return bad(format!("theta must be below pi/2 (got {t})"));
            }
        }
        if let Some(e) = self.eta {
            if e > 1.0 {
                return bad(format!("eta must be at most 1 (got {e})"));
            }
        }
        if let Some(c) = self.control_gap {
            if c >= 0.1 {
                return bad(format!("control_gap must be below 0.1 (got {c})"));
            }
        }
        if let Some(t) = self.tolerance {
            if !(t >= 0.0) {
                return bad(format!("tolerance must be nonnegative (got {t})"));
            }
        }
        if let Some(hs) = &self.horizons {
            if hs.is_empty() || hs.iter().any(|t| !(*t > 0.0 && *t <= 1e6)) {
                return bad("horizons must be nonempty and in (0, 1e6]".into());
            }
        }
        let counts = [
            ("samples", self.samples, 1, 10_000),
            ("grid", self.grid, 2, 1_000),
            ("refine", self.refine, 0, 64),
            ("n_max", self.n_max, 2, 12),
            ("n_delta", self.n_delta, 1, 4_096),
        ];
        for (name, v, lo, hi) in counts {
            if let Some(x) = v {
                if x < lo || x > hi {
                    return bad(format!("{name} must be in [{lo}, {hi}] (got {x})"));
                }
            }
        }
        self.surface.build().map_err(|e| LabError::Config(e.to_string()))?;
        Ok(())
    }
}
