//! Per-participant GVA-to-diopter calibration and its inverse.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::stats::{fit_ols, DataTable, ModelFormula};
use crate::types::Environment;

/// Line `gva = intercept + slope * D` for one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantModel {
    pub participant_id: String,
    pub intercept_deg: f64,
    pub slope_deg_per_diopter: f64,
    pub residual_sd_deg: f64,
    pub n_points: usize,
    /// Smallest and largest diopter value used in the fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrated_range_d: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEstimate {
    pub diopters: f64,
    pub meters: f64,
}

impl ParticipantModel {
    pub fn predict_gva(&self, diopters: f64) -> f64 {
        self.intercept_deg + self.slope_deg_per_diopter * diopters
    }

    /// Estimates may stray at most one calibrated span beyond the middle
    /// of the calibrated range, i.e. an interval twice the span wide.
    fn check_range(&self, d: f64) -> Result<()> {
        if !(d > 0.0) {
            return Err(Error::OutOfRange(format!("estimated {d:.4} D is not positive")));
        }
        if let Some((lo, hi)) = self.calibrated_range_d {
            let span = hi - lo;
            let mid = 0.5 * (lo + hi);
            if (d - mid).abs() > span {
                return Err(Error::OutOfRange(format!(
                    "estimated {d:.4} D lies outside the calibrated range {lo:.3}..{hi:.3} D extended to twice its span"
                )));
            }
        }
        Ok(())
    }
}

/// Ordinary least-squares line through `(diopters, gva_deg)` points.
pub fn fit_participant(participant_id: &str, points: &[(f64, f64)]) -> Result<ParticipantModel> {
    let n = points.len();
    if n < 2 {
        return Err(Error::RankDeficient(format!(
            "{participant_id}: need at least 2 points, got {n}"
        )));
    }
    if let Some(p) = points.iter().find(|(d, g)| !d.is_finite() || !g.is_finite() || *d <= 0.0) {
        return Err(Error::DegenerateInput(format!(
            "{participant_id}: bad calibration point ({}, {})",
            p.0, p.1
        )));
    }
    let nf = n as f64;
    let md = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mg = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - md).powi(2)).sum();
    if sxx <= 1e-12 * md * md {
        return Err(Error::RankDeficient(format!(
            "{participant_id}: all calibration points share one depth"
        )));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - md) * (p.1 - mg)).sum();
    let slope = sxy / sxx;
    let intercept = mg - slope * md;
    if !(slope > 0.0) {
        return Err(Error::InvalidModel(format!(
            "{participant_id}: slope {slope:.4} deg/D is not positive"
        )));
    }
    let rss: f64 = points
        .iter()
        .map(|(d, g)| (g - intercept - slope * d).powi(2))
        .sum();
    let residual_sd = if n > 2 { (rss / (nf - 2.0)).sqrt() } else { 0.0 };
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(ParticipantModel {
        participant_id: participant_id.to_string(),
        intercept_deg: intercept,
        slope_deg_per_diopter: slope,
        residual_sd_deg: residual_sd,
        n_points: n,
        calibrated_range_d: Some((lo, hi)),
    })
}

/// Invert the calibration line: `D = (gva - a) / b`.
pub fn estimate_depth(gva_deg: f64, model: &ParticipantModel) -> Result<DepthEstimate> {
    if !(model.slope_deg_per_diopter > 0.0) || !model.slope_deg_per_diopter.is_finite() {
        return Err(Error::InvalidModel(format!(
            "{}: slope {} deg/D is not positive",
            model.participant_id, model.slope_deg_per_diopter
        )));
    }
    let d = (gva_deg - model.intercept_deg) / model.slope_deg_per_diopter;
    model.check_range(d)?;
    Ok(DepthEstimate {
        diopters: d,
        meters: 1.0 / d,
    })
}

/// Mean GVA of one (participant, environment, end depth) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GvaObservation {
    pub participant_id: String,
    pub environment: Environment,
    pub end_depth_m: f64,
    pub end_depth_d: f64,
    pub gva: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_gva: Option<f64>,
}

pub fn normalize_gva(obs: &GvaObservation, model: &ParticipantModel) -> Result<GvaObservation> {
    if obs.participant_id != model.participant_id {
        return Err(Error::Lookup(format!(
            "observation of {} given the model of {}",
            obs.participant_id, model.participant_id
        )));
    }
    Ok(GvaObservation {
        normalized_gva: Some(obs.gva - model.intercept_deg),
        ..obs.clone()
    })
}

pub fn normalize_all(
    obs: &[GvaObservation],
    models: &BTreeMap<String, ParticipantModel>,
) -> Result<Vec<GvaObservation>> {
    obs.iter()
        .map(|o| {
            let m = models
                .get(&o.participant_id)
                .ok_or_else(|| Error::Lookup(format!("no model for participant {}", o.participant_id)))?;
            normalize_gva(o, m)
        })
        .collect()
}

/// One model per participant, pooling all environments.
pub fn fit_models(obs: &[GvaObservation]) -> Result<BTreeMap<String, ParticipantModel>> {
    let mut points: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for o in obs {
        points.entry(&o.participant_id).or_default().push((o.end_depth_d, o.gva));
    }
    points
        .into_iter()
        .map(|(pid, pts)| Ok((pid.to_string(), fit_participant(pid, &pts)?)))
        .collect()
}

/// One model per (participant, environment).
pub fn fit_models_by_environment(
    obs: &[GvaObservation],
) -> Result<BTreeMap<(String, Environment), ParticipantModel>> {
    let mut points: BTreeMap<(String, Environment), Vec<(f64, f64)>> = BTreeMap::new();
    for o in obs {
        points
            .entry((o.participant_id.clone(), o.environment))
            .or_default()
            .push((o.end_depth_d, o.gva));
    }
    points
        .into_iter()
        .map(|(k, pts)| {
            let m = fit_participant(&k.0, &pts)?;
            Ok((k, m))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetDifference {
    pub environment: Environment,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentOffsets {
    pub slope_deg_per_diopter: f64,
    /// Intercept of each environment's line.
    pub intercepts: BTreeMap<Environment, f64>,
    /// AR - Real and VR - Real.
    pub differences: Vec<OffsetDifference>,
}

/// Fit `normalized_gva ~ end_depth + environment` and report the
/// per-environment intercepts.
pub fn environment_offsets(obs: &[GvaObservation]) -> Result<EnvironmentOffsets> {
    let present: BTreeSet<Environment> = obs.iter().map(|o| o.environment).collect();
    for env in Environment::ALL {
        if !present.contains(&env) {
            return Err(Error::MissingLevel(format!("no observations for {env}")));
        }
    }
    let norm = obs
        .iter()
        .map(|o| {
            o.normalized_gva.ok_or_else(|| {
                Error::Config(format!("observation of {} is not normalized", o.participant_id))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let levels: Vec<&str> = Environment::ALL.iter().map(|e| e.as_str()).collect();
    let envs: Vec<&str> = obs.iter().map(|o| o.environment.as_str()).collect();
    let mut t = DataTable::new();
    t.add_continuous("end_depth", obs.iter().map(|o| o.end_depth_d).collect())?;
    t.add_categorical("environment", &levels, &envs)?;
    t.add_continuous("norm_gva", norm)?;
    let formula: ModelFormula = "norm_gva ~ end_depth + environment".parse()?;
    let fit = fit_ols(&t, &formula)?;
    let coef = |name: &str| {
        fit.coefficients
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Lookup(format!("no coefficient `{name}`")))
    };
    let base = coef(crate::stats::ols::INTERCEPT)?.estimate;
    let mut intercepts = BTreeMap::new();
    intercepts.insert(Environment::Real, base);
    let mut differences = Vec::new();
    for env in [Environment::AR, Environment::VR] {
        let c = coef(&format!("environment{}", env.as_str()))?;
        intercepts.insert(env, base + c.estimate);
        differences.push(OffsetDifference {
            environment: env,
            estimate: c.estimate,
            std_error: c.std_error,
        });
    }
    Ok(EnvironmentOffsets {
        slope_deg_per_diopter: coef("end_depth")?.estimate,
        intercepts,
        differences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model(a: f64, b: f64) -> ParticipantModel {
        ParticipantModel {
            participant_id: "p".into(),
            intercept_deg: a,
            slope_deg_per_diopter: b,
            residual_sd_deg: 0.0,
            n_points: 4,
            calibrated_range_d: None,
        }
    }

    #[test]
    fn exact_line_is_recovered() {
        let pts: Vec<(f64, f64)> = [0.25, 0.67, 1.33, 4.0].iter().map(|&d| (d, 17.5 + 1.7 * d)).collect();
        let m = fit_participant("p", &pts).unwrap();
        assert_relative_eq!(m.intercept_deg, 17.5, epsilon = 1e-9);
        assert_relative_eq!(m.slope_deg_per_diopter, 1.7, epsilon = 1e-9);
        assert!(m.residual_sd_deg < 1e-9);
        assert_eq!(m.n_points, 4);
    }

    #[test]
    fn two_point_line() {
        let m = fit_participant("p", &[(0.25, 1.0), (4.0, 2.0)]).unwrap();
        assert_relative_eq!(m.slope_deg_per_diopter, 1.0 / 3.75, epsilon = 1e-12);
        assert_relative_eq!(m.intercept_deg, 1.0 - 0.25 / 3.75, epsilon = 1e-12);
        assert_eq!(m.residual_sd_deg, 0.0);
    }

    #[test]
    fn fit_errors() {
        let same = fit_participant("p", &[(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)]).unwrap_err();
        assert_eq!(same.kind(), "rank_deficient");
        let falling = fit_participant("p", &[(0.25, 5.0), (4.0, 2.0)]).unwrap_err();
        assert_eq!(falling.kind(), "invalid_model");
    }

    #[test]
    fn inversion_examples() {
        let m = model(17.5, 1.7);
        let e = estimate_depth(17.5 + 1.7 * 4.0, &m).unwrap();
        assert_relative_eq!(e.diopters, 4.0, epsilon = 1e-12);
        assert_relative_eq!(e.meters, 0.25, epsilon = 1e-12);
        assert_eq!(estimate_depth(17.5, &m).unwrap_err().kind(), "out_of_range");
        assert_eq!(estimate_depth(20.0, &model(17.5, 0.0)).unwrap_err().kind(), "invalid_model");
    }

    #[test]
    fn calibrated_range_limits_extrapolation() {
        let pts: Vec<(f64, f64)> = [0.25, 4.0].iter().map(|&d| (d, 10.0 + 2.0 * d)).collect();
        let m = fit_participant("p", &pts).unwrap();
        // Range 0.25..4 D, span 3.75, middle 2.125: anything above 5.875 D is rejected.
        assert!(estimate_depth(10.0 + 2.0 * 5.8, &m).is_ok());
        assert_eq!(estimate_depth(10.0 + 2.0 * 6.0, &m).unwrap_err().kind(), "out_of_range");
    }

    #[test]
    fn normalization_examples() {
        let obs = GvaObservation {
            participant_id: "p".into(),
            environment: Environment::AR,
            end_depth_m: 0.25,
            end_depth_d: 4.0,
            gva: 24.3,
            normalized_gva: None,
        };
        let n = normalize_gva(&obs, &model(17.5, 1.7)).unwrap();
        assert_relative_eq!(n.normalized_gva.unwrap(), 6.8, epsilon = 1e-12);
        let other = ParticipantModel {
            participant_id: "q".into(),
            ..model(17.5, 1.7)
        };
        assert_eq!(normalize_gva(&obs, &other).unwrap_err().kind(), "lookup");
    }

    fn cohort(offsets: [f64; 3]) -> Vec<GvaObservation> {
        let mut out = Vec::new();
        for (pi, a) in [12.0, 17.5, 25.0].iter().enumerate() {
            for (ei, env) in Environment::ALL.iter().enumerate() {
                for d in [0.25, 0.667, 1.333, 4.0] {
                    let gva = a + 1.7 * d + offsets[ei];
                    out.push(GvaObservation {
                        participant_id: format!("p{pi}"),
                        environment: *env,
                        end_depth_m: 1.0 / d,
                        end_depth_d: d,
                        gva,
                        normalized_gva: Some(gva - a),
                    });
                }
            }
        }
        out
    }

    #[test]
    fn offsets_are_recovered() {
        let off = environment_offsets(&cohort([0.0, -0.8, -1.3])).unwrap();
        assert_relative_eq!(off.differences[0].estimate, -0.8, epsilon = 1e-9);
        assert_relative_eq!(off.differences[1].estimate, -1.3, epsilon = 1e-9);
        assert_relative_eq!(off.slope_deg_per_diopter, 1.7, epsilon = 1e-9);
        let flat = environment_offsets(&cohort([0.0; 3])).unwrap();
        for d in flat.differences {
            assert!(d.estimate.abs() < 1e-9);
        }
    }

    #[test]
    fn offsets_need_every_environment() {
        let only_real: Vec<_> = cohort([0.0; 3])
            .into_iter()
            .filter(|o| o.environment == Environment::Real)
            .collect();
        assert_eq!(environment_offsets(&only_real).unwrap_err().kind(), "missing_level");
    }

    #[test]
    fn pooled_and_per_environment_fits() {
        let obs = cohort([0.0, -0.8, -1.3]);
        let pooled = fit_models(&obs).unwrap();
        assert_eq!(pooled.len(), 3);
        let per_env = fit_models_by_environment(&obs).unwrap();
        assert_eq!(per_env.len(), 9);
        let m = &per_env[&("p1".to_string(), Environment::VR)];
        assert_relative_eq!(m.intercept_deg, 17.5 - 1.3, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn forward_then_inverse_is_identity(
            a in -10.0..40.0f64,
            b in 0.2..4.0f64,
            d in 0.05..10.0f64,
        ) {
            let est = estimate_depth(a + b * d, &model(a, b)).unwrap();
            prop_assert!((est.diopters - d).abs() < 1e-9 * d.max(1.0));
        }

        #[test]
        fn fit_recovers_any_noiseless_line(
            a in -10.0..40.0f64,
            b in 0.2..4.0f64,
            ds in proptest::collection::btree_set(1u32..400, 2..8),
        ) {
            let pts: Vec<(f64, f64)> = ds.iter().map(|&k| {
                let d = k as f64 / 100.0;
                (d, a + b * d)
            }).collect();
            let m = fit_participant("p", &pts).unwrap();
            prop_assert!((m.intercept_deg - a).abs() < 1e-9);
            prop_assert!((m.slope_deg_per_diopter - b).abs() < 1e-9);
        }

        #[test]
        fn normalization_is_a_pure_shift(shift in -30.0..30.0f64) {
            let pts: Vec<(f64, f64)> = [(0.25, 18.1), (0.67, 18.3), (1.33, 20.0), (4.0, 24.6)].to_vec();
            let shifted: Vec<(f64, f64)> = pts.iter().map(|(d, g)| (*d, g - shift)).collect();
            let m1 = fit_participant("p", &pts).unwrap();
            let m2 = fit_participant("p", &shifted).unwrap();
            prop_assert!((m1.slope_deg_per_diopter - m2.slope_deg_per_diopter).abs() < 1e-9);
            prop_assert!((m1.residual_sd_deg - m2.residual_sd_deg).abs() < 1e-9);
            prop_assert!((m1.intercept_deg - shift - m2.intercept_deg).abs() < 1e-9);
        }
    }
}
