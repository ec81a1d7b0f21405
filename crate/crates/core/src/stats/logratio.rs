//! Per-participant log ratios of XR measurements against the Real baseline.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::{depth_key, Environment};

/// One measurement of a (participant, environment, depth) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellValue {
    pub participant_id: String,
    pub environment: Environment,
    pub end_depth_m: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "GVA")]
    Gva,
    #[serde(rename = "subjective")]
    Subjective,
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Gva => "GVA",
            Measure::Subjective => "subjective",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gva" => Ok(Measure::Gva),
            "subjective" => Ok(Measure::Subjective),
            other => Err(Error::UnknownLevel {
                factor: "measure".into(),
                level: other.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRatioRow {
    pub participant_id: String,
    pub end_depth_m: f64,
    pub environment: Environment,
    pub measure: Measure,
    pub log_ratio: f64,
}

type CellKey = (String, i64, Environment);

/// Mean value per cell; repeated measurements of a cell are averaged.
fn cell_means(obs: &[CellValue], measure: Measure) -> Result<BTreeMap<CellKey, (f64, f64)>> {
    let mut sums: BTreeMap<CellKey, (f64, f64, usize)> = BTreeMap::new();
    for o in obs {
        if !(o.value > 0.0) {
            return Err(Error::Domain(format!(
                "{measure} value {} for {} {} at {} m must be positive",
                o.value, o.participant_id, o.environment, o.end_depth_m
            )));
        }
        let e = sums
            .entry((o.participant_id.clone(), depth_key(o.end_depth_m), o.environment))
            .or_insert((o.end_depth_m, 0.0, 0));
        e.1 += o.value;
        e.2 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(k, (d, s, n))| (k, (d, s / n as f64)))
        .collect())
}

/// `ln(XR / Real)` for every AR and VR cell of each measure.
pub fn log_ratio_table(gva_obs: &[CellValue], subjective_obs: &[CellValue]) -> Result<Vec<LogRatioRow>> {
    let mut rows = Vec::new();
    for (measure, obs) in [(Measure::Gva, gva_obs), (Measure::Subjective, subjective_obs)] {
        let means = cell_means(obs, measure)?;
        for ((pid, key, env), (depth, value)) in &means {
            if *env == Environment::Real {
                continue;
            }
            let (_, base) = means
                .get(&(pid.clone(), *key, Environment::Real))
                .ok_or_else(|| {
                    Error::MissingBaseline(format!("{measure} for {pid} at {depth} m has no Real value"))
                })?;
            rows.push(LogRatioRow {
                participant_id: pid.clone(),
                end_depth_m: *depth,
                environment: *env,
                measure,
                log_ratio: (value / base).ln(),
            });
        }
    }
    rows.sort_by(|a, b| {
        (&a.participant_id, depth_key(a.end_depth_m), a.environment, a.measure).cmp(&(
            &b.participant_id,
            depth_key(b.end_depth_m),
            b.environment,
            b.measure,
        ))
    });
    Ok(rows)
}

/// Back from `log(XR / real)` to the ratio itself.
pub fn ratio_from_log(log_ratio: f64) -> f64 {
    log_ratio.exp()
}

/// Mean log ratio per (environment, measure).
pub fn mean_log_ratios(rows: &[LogRatioRow]) -> BTreeMap<(Environment, Measure), f64> {
    let mut acc: BTreeMap<(Environment, Measure), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.environment, r.measure)).or_insert((0.0, 0));
        e.0 += r.log_ratio;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cell(p: &str, env: Environment, d: f64, v: f64) -> CellValue {
        CellValue {
            participant_id: p.into(),
            environment: env,
            end_depth_m: d,
            value: v,
        }
    }

    fn full(factor_ar: f64, factor_vr: f64) -> Vec<CellValue> {
        let mut out = Vec::new();
        for p in ["p1", "p2", "p3"] {
            for d in [0.25, 0.75, 1.5, 4.0] {
                out.push(cell(p, Environment::Real, d, 1.0 / d));
                out.push(cell(p, Environment::AR, d, factor_ar / d));
                out.push(cell(p, Environment::VR, d, factor_vr / d));
            }
        }
        out
    }

    #[test]
    fn row_count_and_veridical_case() {
        let rows = log_ratio_table(&full(1.0, 1.0), &full(1.17, 1.377)).unwrap();
        assert_eq!(rows.len(), 3 * 4 * 2 * 2);
        let means = mean_log_ratios(&rows);
        assert_relative_eq!(means[&(Environment::AR, Measure::Gva)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(means[&(Environment::VR, Measure::Subjective)], 1.377f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn repeated_reports_are_averaged() {
        let subj = vec![
            cell("p", Environment::Real, 1.5, 0.5),
            cell("p", Environment::Real, 1.5, 0.7),
            cell("p", Environment::AR, 1.5, 1.2),
        ];
        let rows = log_ratio_table(&[], &subj).unwrap();
        assert_eq!(rows.len(), 1);
        assert_relative_eq!(rows[0].log_ratio, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn errors() {
        let missing = vec![cell("p", Environment::AR, 1.5, 1.0)];
        assert_eq!(log_ratio_table(&missing, &[]).unwrap_err().kind(), "missing_baseline");
        let bad = vec![cell("p", Environment::Real, 1.5, -1.0)];
        assert_eq!(log_ratio_table(&bad, &[]).unwrap_err().kind(), "domain");
    }
}
