use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    Meters,
    Feet,
    Inches,
    Centimeters,
}

impl LengthUnit {
    pub fn meters_per_unit(self) -> f64 {
        match self {
            LengthUnit::Meters => 1.0,
            LengthUnit::Feet => 0.3048,
            LengthUnit::Inches => 0.0254,
            LengthUnit::Centimeters => 0.01,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LengthUnit::Meters => "meters",
            LengthUnit::Feet => "feet",
            LengthUnit::Inches => "inches",
            LengthUnit::Centimeters => "cm",
        }
    }
}

impl fmt::Display for LengthUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LengthUnit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "m" | "meter" | "meters" | "metre" | "metres" => LengthUnit::Meters,
            "ft" | "foot" | "feet" => LengthUnit::Feet,
            "in" | "inch" | "inches" => LengthUnit::Inches,
            "cm" | "centimeter" | "centimeters" | "centimetre" | "centimetres" => LengthUnit::Centimeters,
            other => return Err(Error::parse(0, format!("unknown length unit `{other}`"))),
        })
    }
}

pub fn unit_to_meters(value: f64, unit: LengthUnit) -> Result<f64> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::Domain(format!("distance must be positive, got {value}")));
    }
    Ok(value * unit.meters_per_unit())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn conversions() {
        assert_relative_eq!(unit_to_meters(10.0, LengthUnit::Feet).unwrap(), 3.048, epsilon = 1e-12);
        assert_eq!(unit_to_meters(0.25, LengthUnit::Meters).unwrap(), 0.25);
        assert_relative_eq!(unit_to_meters(36.0, LengthUnit::Inches).unwrap(), 0.9144, epsilon = 1e-12);
        assert_relative_eq!(unit_to_meters(150.0, LengthUnit::Centimeters).unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn parsing_and_errors() {
        assert_eq!("Feet".parse::<LengthUnit>().unwrap(), LengthUnit::Feet);
        assert_eq!("yards".parse::<LengthUnit>().unwrap_err().kind(), "parse");
        assert_eq!(unit_to_meters(0.0, LengthUnit::Meters).unwrap_err().kind(), "domain");
        for u in [LengthUnit::Meters, LengthUnit::Feet, LengthUnit::Inches, LengthUnit::Centimeters] {
            assert_eq!(u.as_str().parse::<LengthUnit>().unwrap(), u);
        }
    }
}
