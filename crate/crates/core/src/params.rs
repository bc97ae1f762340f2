use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Battle,
    Search,
    Pursuit,
    Planner,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Battle, Scenario::Search, Scenario::Pursuit, Scenario::Planner];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Battle => "battle",
            Scenario::Search => "search",
            Scenario::Pursuit => "pursuit",
            Scenario::Planner => "planner",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}` (expected battle, search, pursuit or planner)")))
    }
}

/// Named scalar access to a scenario's parameter set, used by sweeps and the CLI.
///
/// Counts and switches are numeric too: counts must be non-negative integers and
/// switches take 0 or 1.
pub trait ScenarioParams: Clone + Send + Sync + 'static {
    const SCENARIO: Scenario;

    fn names() -> &'static [&'static str];
    fn get(&self, name: &str) -> Option<f64>;
    fn set(&mut self, name: &str, value: f64) -> Result<()>;
    fn validate(&self) -> Result<()>;

    fn values(&self) -> Vec<(&'static str, f64)> {
        Self::names()
            .iter()
            .map(|&n| (n, self.get(n).expect("every listed name is readable")))
            .collect()
    }

    fn unknown(name: &str) -> Error {
        Error::UnknownParam {
            scenario: Self::SCENARIO.to_string(),
            name: name.to_string(),
        }
    }
}

pub(crate) fn as_count(name: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::invalid(name, format!("expected a non-negative integer, got {v}")))
    }
}

pub(crate) fn as_switch(name: &str, v: f64) -> Result<bool> {
    match v {
        x if x == 0.0 => Ok(false),
        x if x == 1.0 => Ok(true),
        _ => Err(Error::invalid(name, format!("expected 0 or 1, got {v}"))),
    }
}

pub(crate) fn switch(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}
