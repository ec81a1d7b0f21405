//! Shares of explained variance attributed to individual predictors.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// `share = (R²[minuend] - R²[subtrahend]) / R²[denominator]`, or a plain
/// ratio when there is no subtrahend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareSpec {
    pub predictor: String,
    pub minuend: String,
    pub subtrahend: Option<String>,
    pub denominator: String,
}

impl ShareSpec {
    pub fn ratio(predictor: &str, numerator: &str, denominator: &str) -> Self {
        ShareSpec {
            predictor: predictor.into(),
            minuend: numerator.into(),
            subtrahend: None,
            denominator: denominator.into(),
        }
    }

    pub fn difference(predictor: &str, minuend: &str, subtrahend: &str, denominator: &str) -> Self {
        ShareSpec {
            predictor: predictor.into(),
            minuend: minuend.into(),
            subtrahend: Some(subtrahend.into()),
            denominator: denominator.into(),
        }
    }

    pub fn definition(&self) -> String {
        match &self.subtrahend {
            None => format!("{}/{}", self.minuend, self.denominator),
            Some(s) => format!("({}-{})/{}", self.minuend, s, self.denominator),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub predictor: String,
    pub definition: String,
    /// Percent of the denominator model's R².
    pub percent: f64,
}

pub fn variance_attribution(r_squared: &BTreeMap<String, f64>, specs: &[ShareSpec]) -> Result<Vec<Share>> {
    let get = |tag: &str| {
        r_squared
            .get(tag)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("no model tagged `{tag}`")))
    };
    specs
        .iter()
        .map(|s| {
            let den = get(&s.denominator)?;
            if den == 0.0 {
                return Err(Error::UndefinedShare(format!(
                    "model `{}` explains no variance",
                    s.denominator
                )));
            }
            let num = get(&s.minuend)? - s.subtrahend.as_deref().map(get).transpose()?.unwrap_or(0.0);
            Ok(Share {
                predictor: s.predictor.clone(),
                definition: s.definition(),
                percent: 100.0 * num / den,
            })
        })
        .collect()
}
