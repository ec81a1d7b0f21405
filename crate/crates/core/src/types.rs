//! Experimental vocabulary shared by every stage.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::stats::units::{unit_to_meters, LengthUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Environment {
    Real,
    AR,
    VR,
}

impl Environment {
    /// Treatment-coding order; `Real` is the reference level.
    pub const ALL: [Environment; 3] = [Environment::Real, Environment::AR, Environment::VR];

    pub fn as_str(self) -> &'static str {
        match self {
            Environment::Real => "Real",
            Environment::AR => "AR",
            Environment::VR => "VR",
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Environment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" => Ok(Environment::Real),
            "ar" => Ok(Environment::AR),
            "vr" => Ok(Environment::VR),
            other => Err(Error::UnknownLevel {
                factor: "environment".into(),
                level: other.into(),
            }),
        }
    }
}

/// Gap orientation of the Landolt C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandoltDirection {
    Left,
    Right,
    Top,
    Bottom,
}

impl LandoltDirection {
    pub const ALL: [LandoltDirection; 4] = [
        LandoltDirection::Left,
        LandoltDirection::Right,
        LandoltDirection::Top,
        LandoltDirection::Bottom,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandoltResponse {
    Left,
    Right,
    Top,
    Bottom,
    Timeout,
}

impl LandoltResponse {
    pub fn is_correct(self, dir: LandoltDirection) -> bool {
        matches!(
            (self, dir),
            (LandoltResponse::Left, LandoltDirection::Left)
                | (LandoltResponse::Right, LandoltDirection::Right)
                | (LandoltResponse::Top, LandoltDirection::Top)
                | (LandoltResponse::Bottom, LandoltDirection::Bottom)
        )
    }
}

impl From<LandoltDirection> for LandoltResponse {
    fn from(d: LandoltDirection) -> Self {
        match d {
            LandoltDirection::Left => LandoltResponse::Left,
            LandoltDirection::Right => LandoltResponse::Right,
            LandoltDirection::Top => LandoltResponse::Top,
            LandoltDirection::Bottom => LandoltResponse::Bottom,
        }
    }
}

/// One verbal distance estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectiveReport {
    pub participant_id: String,
    pub environment: Environment,
    /// True target depth.
    pub depth_m: f64,
    pub report_value: f64,
    pub unit: LengthUnit,
    /// 1-based repetition index.
    pub repetition: u32,
}

impl SubjectiveReport {
    pub fn reported_meters(&self) -> Result<f64> {
        unit_to_meters(self.report_value, self.unit)
    }

    pub fn reported_diopters(&self) -> Result<f64> {
        Ok(1.0 / self.reported_meters()?)
    }
}

/// Integer micrometre key for grouping by depth without float comparisons.
pub fn depth_key(depth_m: f64) -> i64 {
    (depth_m * 1e6).round() as i64
}

/// Dioptric distance between two depths (always non-negative).
pub fn switching_depth_d(start_depth_m: f64, end_depth_m: f64) -> f64 {
    (1.0 / start_depth_m - 1.0 / end_depth_m).abs()
}
