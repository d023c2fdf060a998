//! Top-level simulation configuration, loaded from JSON.
//!
//! Every section and field is optional; missing values take their defaults.
//! Unknown keys are rejected.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentHyper, SlicingAction, ACTION_COUNT};
use crate::baseline::BaselineParams;
use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::mobility::{FleetConfig, RoadGrid};
use crate::observation::ObservationConfig;
use crate::revenue::RevenueParams;
use crate::traffic::TrafficConfig;

/// Which policy picks the slicing action every cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Controller {
    #[default]
    Drl,
    Baseline,
    Fixed(usize),
}

impl Controller {
    pub fn fixed_action(&self) -> Option<SlicingAction> {
        match self {
            Controller::Fixed(i) => SlicingAction::from_index(*i).ok(),
            _ => None,
        }
    }
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Controller::Drl => f.write_str("drl"),
            Controller::Baseline => f.write_str("baseline"),
            Controller::Fixed(i) => write!(f, "fixed:{i}"),
        }
    }
}

impl FromStr for Controller {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drl" => Ok(Controller::Drl),
            "baseline" => Ok(Controller::Baseline),
            other => {
                let idx = other
                    .strip_prefix("fixed:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "controller must be `drl`, `baseline` or `fixed:<index>`, got `{other}`"
                        ))
                    })?;
                if idx >= ACTION_COUNT {
                    return Err(Error::Config(format!(
                        "controller fixed action {idx} outside [0, {ACTION_COUNT})"
                    )));
                }
                Ok(Controller::Fixed(idx))
            }
        }
    }
}

impl TryFrom<String> for Controller {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Controller> for String {
    fn from(c: Controller) -> String {
        c.to_string()
    }
}

/// Episode structure of training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// TTIs between two controller decisions.
    pub cycle_ttis: u64,
    pub train_episodes: u64,
    pub cycles_per_episode: u64,
    pub eval_cycles: u64,
    /// Independent held-out evaluation runs.
    pub eval_runs: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cycle_ttis: 100,
            train_episodes: 40,
            cycles_per_episode: 500,
            eval_cycles: 50,
            eval_runs: 3,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cycle_ttis", self.cycle_ttis),
            ("train_episodes", self.train_episodes),
            ("cycles_per_episode", self.cycles_per_episode),
            ("eval_cycles", self.eval_cycles),
            ("eval_runs", self.eval_runs as u64),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("run.{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub controller: Controller,
    pub grid: RoadGrid,
    pub fleet: FleetConfig,
    pub channel: ChannelParams,
    pub traffic: TrafficConfig,
    pub observation: ObservationConfig,
    pub revenue: RevenueParams,
    pub baseline: BaselineParams,
    pub agent: AgentHyper,
    pub run: RunConfig,
    pub metrics: MetricsConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.fleet.validate(&self.grid)?;
        self.channel.validate()?;
        self.traffic.validate()?;
        self.observation.validate()?;
        self.revenue.validate()?;
        self.baseline.validate()?;
        self.agent.validate()?;
        self.run.validate()?;
        self.metrics.validate()?;
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable")
    }

    /// Writes `config.resolved.json` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.resolved.json");
        fs::write(&path, self.to_json_pretty()).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a JSON configuration file.
pub fn parse_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SimConfig::from_json_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
