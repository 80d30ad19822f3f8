use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use slfv_core::diagnostics::{AlphaConfig, Method};
use slfv_core::{Params, Point};

use crate::Failure;

/// Seeds given as `N`, `A..B` (exclusive) or `A..=B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Seeds {
    Single(u64),
    Range { start: u64, end: u64 },
}

impl Seeds {
    pub fn to_vec(self) -> Vec<u64> {
        match self {
            Seeds::Single(s) => vec![s],
            Seeds::Range { start, end } => (start..end).collect(),
        }
    }
}

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed `{t}`: {e}"));
        if let Some((a, b)) = s.split_once("..=") {
            let (start, last) = (num(a)?, num(b)?);
            let end = last.checked_add(1).ok_or("seed range overflows")?;
            return Seeds::range(start, end);
        }
        if let Some((a, b)) = s.split_once("..") {
            return Seeds::range(num(a)?, num(b)?);
        }
        Ok(Seeds::Single(num(s)?))
    }
}

impl Seeds {
    fn range(start: u64, end: u64) -> Result<Self, String> {
        if start >= end {
            return Err(format!("empty seed range {start}..{end}"));
        }
        Ok(Seeds::Range { start, end })
    }
}

impl fmt::Display for Seeds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Seeds::Single(s) => write!(f, "{s}"),
            Seeds::Range { start, end } => write!(f, "{start}..{end}"),
        }
    }
}

impl Serialize for Seeds {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Seeds {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(Seeds::Single(n)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Report at the last step.
    Fixed,
    /// Double the horizon (extending the run) until kappa and tau are both
    /// stable, or until the run would exceed `max` steps.
    DoubleUntilStable { max: usize },
}

/// A run configuration. Every field has a default, so a config file may set
/// any subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "d")]
    pub dim: usize,
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(rename = "U")]
    pub impact: f64,
    pub a: f64,
    pub r0: f64,
    #[serde(rename = "C0")]
    pub center: Option<Vec<f64>>,
    pub steps: usize,
    pub horizon: Horizon,
    pub seeds: Seeds,
    pub alpha: Option<f64>,
    pub mc_samples: usize,
    pub probes: usize,
    pub out: PathBuf,
    /// Write every trajectory's event log in `ensemble`.
    pub events: bool,
    /// Initial value of the non-spatial chain.
    pub z0: f64,
    /// Step after which `nonspatial` counts runs with no further flip.
    pub settle: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: 1,
            radius: 1.0,
            impact: 0.5,
            a: 1.0,
            r0: 1.0,
            center: None,
            steps: 1000,
            horizon: Horizon::Fixed,
            seeds: Seeds::Single(0),
            alpha: None,
            mc_samples: 20_000,
            probes: 4096,
            out: PathBuf::from("out"),
            events: false,
            z0: 0.5,
            settle: 100,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }

    pub fn params(&self, seed: u64) -> Result<Params, Failure> {
        let mut p = Params::new(self.dim, self.radius, self.impact, self.a, self.r0, seed);
        if let Some(c) = &self.center {
            p = p.with_center(Point::new(c));
        }
        p.validate().map_err(Failure::from)?;
        Ok(p)
    }

    pub fn alpha(&self, params: &Params) -> Result<AlphaConfig, Failure> {
        match self.alpha {
            Some(a) => AlphaConfig::new(a, params).map_err(Failure::from),
            None => Ok(AlphaConfig::default_for(params)),
        }
    }

    /// Exact on the line, Monte Carlo with `mc_samples` otherwise.
    pub fn method(&self) -> Method {
        if self.dim == 1 {
            Method::Exact1d
        } else {
            Method::MonteCarlo {
                samples: self.mc_samples,
            }
        }
    }

    /// Everything `run`, `ensemble` and `verify` need, checked before any work.
    pub fn validate(&self) -> Result<(), Failure> {
        let p = self.params(0)?;
        self.alpha(&p)?;
        if self.mc_samples == 0 {
            return Err(Failure::config("mc_samples must be positive"));
        }
        if let Horizon::DoubleUntilStable { max } = self.horizon {
            if max < 2 * self.steps {
                return Err(Failure::config(format!("horizon max {max} is below twice the {} steps", self.steps)));
            }
        }
        Ok(())
    }
}
