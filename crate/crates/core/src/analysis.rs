//! From trial outcomes to averaged observations and regression reports.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::calibration::{
    environment_offsets, fit_models, normalize_all, EnvironmentOffsets, GvaObservation, ParticipantModel,
};
use crate::error::{Error, Result};
use crate::pipeline::{cascade_validity, process_trials, PipelineConfig, TrialOutcome, TrialRecord, ValidityReport};
use crate::stats::{
    fit_ols, log_ratio_table, mean_log_ratios, nested_f_test, pearson_r, r_squared_percent, ratio_from_log, stepwise_refine, variance_attribution,
    CellValue, Criterion, DataTable, FitResult, LogRatioRow, Measure, ModelFormula, Share, ShareSpec, Significance,
    Term,
};
use crate::types::{depth_key, switching_depth_d, Environment, SubjectiveReport};

/// Per-trial result as written to the GVA table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GvaTrialRow {
    pub participant_id: String,
    pub environment: Environment,
    pub trial_id: u32,
    pub start_depth_m: f64,
    pub end_depth_m: f64,
    pub mean_gva: Option<f64>,
    pub valid_fraction: f64,
    pub valid: bool,
    /// Valid and inside a valid pair, environment and participant.
    pub included: bool,
}

/// Run the cleaning cascade and the validity gates.
pub fn preprocess(trials: Vec<TrialRecord>, cfg: &PipelineConfig) -> (Vec<TrialOutcome>, ValidityReport) {
    let outcomes = process_trials(trials, cfg);
    let report = cascade_validity(&outcomes, &cfg.gates);
    (outcomes, report)
}

pub fn gva_rows(outcomes: &[TrialOutcome], report: &ValidityReport) -> Vec<GvaTrialRow> {
    let valid_pairs: BTreeSet<(&str, Environment, i64, i64)> = report
        .pairs
        .iter()
        .filter(|p| p.valid)
        .map(|p| {
            (
                p.participant_id.as_str(),
                p.environment,
                depth_key(p.start_depth_m),
                depth_key(p.end_depth_m),
            )
        })
        .collect();
    let valid_envs: BTreeSet<(&str, Environment)> = report
        .environments
        .iter()
        .filter(|e| e.valid)
        .map(|e| (e.participant_id.as_str(), e.environment))
        .collect();
    outcomes
        .iter()
        .map(|o| {
            let pid = o.participant_id.as_str();
            let included = o.valid
                && o.mean_gva.is_some()
                && report.is_retained(pid)
                && valid_envs.contains(&(pid, o.environment))
                && valid_pairs.contains(&(
                    pid,
                    o.environment,
                    depth_key(o.start_depth_m),
                    depth_key(o.end_depth_m),
                ));
            GvaTrialRow {
                participant_id: o.participant_id.clone(),
                environment: o.environment,
                trial_id: o.trial_id,
                start_depth_m: o.start_depth_m,
                end_depth_m: o.end_depth_m,
                mean_gva: o.mean_gva,
                valid_fraction: o.valid_fraction,
                valid: o.valid,
                included,
            }
        })
        .collect()
}

/// Mean GVA of included trials per (participant, environment, end depth).
pub fn cell_observations(rows: &[GvaTrialRow]) -> Vec<GvaObservation> {
    let mut acc: BTreeMap<(String, Environment, i64), (f64, f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.included) {
        let Some(g) = r.mean_gva else { continue };
        let e = acc
            .entry((r.participant_id.clone(), r.environment, depth_key(r.end_depth_m)))
            .or_insert((r.end_depth_m, 0.0, 0));
        e.1 += g;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|((pid, env, _), (d, sum, n))| GvaObservation {
            participant_id: pid,
            environment: env,
            end_depth_m: d,
            end_depth_d: 1.0 / d,
            gva: sum / n as f64,
            normalized_gva: None,
        })
        .collect()
}

/// Mean GVA per (participant, environment, start depth, end depth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairObservation {
    pub participant_id: String,
    pub environment: Environment,
    pub start_depth_m: f64,
    pub end_depth_m: f64,
    /// Dioptric distance between start and end depth.
    pub switch_depth_d: f64,
    pub gva: f64,
    pub normalized_gva: Option<f64>,
}

pub fn pair_observations(rows: &[GvaTrialRow]) -> Vec<PairObservation> {
    let mut acc: BTreeMap<(String, Environment, i64, i64), (f64, f64, f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.included) {
        let Some(g) = r.mean_gva else { continue };
        let e = acc
            .entry((
                r.participant_id.clone(),
                r.environment,
                depth_key(r.start_depth_m),
                depth_key(r.end_depth_m),
            ))
            .or_insert((r.start_depth_m, r.end_depth_m, 0.0, 0));
        e.2 += g;
        e.3 += 1;
    }
    acc.into_iter()
        .map(|((pid, env, _, _), (s, e, sum, n))| PairObservation {
            participant_id: pid,
            environment: env,
            start_depth_m: s,
            end_depth_m: e,
            switch_depth_d: switching_depth_d(s, e),
            gva: sum / n as f64,
            normalized_gva: None,
        })
        .collect()
}

fn normalize_pairs(pairs: &[PairObservation], models: &BTreeMap<String, ParticipantModel>) -> Result<Vec<PairObservation>> {
    pairs
        .iter()
        .map(|p| {
            let m = models
                .get(&p.participant_id)
                .ok_or_else(|| Error::Lookup(format!("no model for participant {}", p.participant_id)))?;
            Ok(PairObservation {
                normalized_gva: Some(p.gva - m.intercept_deg),
                ..p.clone()
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Regression reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub model_tag: String,
    pub formula_string: String,
    pub r_squared: f64,
    pub res_df: usize,
    pub delta_df: Option<usize>,
    pub f: Option<f64>,
    pub p: Option<f64>,
    pub p_label: Option<String>,
    pub significance: Option<Significance>,
}

/// Rows for a chain of progressively smaller models. Each model is tested
/// against the one above it, with the first model's residual variance.
pub fn regression_table(chain: &[(String, FitResult)]) -> Result<Vec<RegressionRow>> {
    let Some((_, complete)) = chain.first() else {
        return Ok(Vec::new());
    };
    chain
        .iter()
        .enumerate()
        .map(|(i, (tag, fit))| {
            let cmp = if i == 0 {
                None
            } else {
                Some(nested_f_test(fit, &chain[i - 1].1, complete)?)
            };
            Ok(RegressionRow {
                model_tag: tag.clone(),
                formula_string: fit.formula.to_string(),
                r_squared: fit.r_squared,
                res_df: fit.residual_df,
                delta_df: cmp.as_ref().map(|c| c.delta_df),
                f: cmp.as_ref().map(|c| c.f),
                p: cmp.as_ref().map(|c| c.p),
                p_label: cmp.as_ref().map(|c| c.p_label()),
                significance: cmp.as_ref().map(|c| c.significance),
            })
        })
        .collect()
}

fn vanished_label(from: &ModelFormula, to: &ModelFormula) -> String {
    let before = from.variables();
    let after = to.variables();
    let gone: Vec<&str> = before.difference(&after).copied().collect();
    if !gone.is_empty() {
        return gone.join(" + ");
    }
    let dropped: Vec<String> = from
        .terms()
        .filter(|t| !to.has_term(t))
        .map(Term::to_string)
        .collect();
    dropped.join(" + ")
}

/// Attribution along a chain: whatever a step removes gets
/// `(R²_before - R²_after) / R²_before`; the variables of the last model
/// that still has predictors get `R²_last / R²_first`.
pub fn chain_attribution(chain: &[(String, FitResult)]) -> Result<Vec<Share>> {
    let r2: BTreeMap<String, f64> = chain.iter().map(|(t, f)| (t.clone(), f.r_squared)).collect();
    let mut specs = Vec::new();
    let last_nonnull = chain.iter().rposition(|(_, f)| f.formula.n_terms() > 0);
    let Some(last) = last_nonnull else {
        return Ok(Vec::new());
    };
    for i in 1..=last {
        let (a, fa) = &chain[i - 1];
        let (b, fb) = &chain[i];
        specs.push(ShareSpec::difference(&vanished_label(&fa.formula, &fb.formula), a, b, a));
    }
    let (lt, lf) = &chain[last];
    let vars: Vec<&str> = lf.formula.variables().into_iter().collect();
    specs.push(ShareSpec::ratio(&vars.join(" + "), lt, &chain[0].0));
    variance_attribution(&r2, &specs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub name: String,
    pub normalized: bool,
    pub n: usize,
    pub rows: Vec<RegressionRow>,
    pub attribution: Vec<Share>,
    pub selected: String,
    pub criterion: Criterion,
    /// Terms dropped by the stepwise search, in order.
    pub dropped: Vec<String>,
}

impl RegressionReport {
    pub fn row(&self, tag: &str) -> Option<&RegressionRow> {
        self.rows.iter().find(|r| r.model_tag == tag)
    }

    pub fn share(&self, predictor: &str) -> Option<f64> {
        self.attribution.iter().find(|s| s.predictor == predictor).map(|s| s.percent)
    }
}

/// Stepwise from the first complete formula, then tabulate the chain of
/// complete models (those containing the selection), the selected model and
/// its next reduction.
fn chain_report(
    name: &str,
    normalized: bool,
    table: &DataTable,
    completes: &[ModelFormula],
    criterion: Criterion,
) -> Result<RegressionReport> {
    let first = completes.first().ok_or_else(|| Error::Config("no complete model".into()))?;
    let step = stepwise_refine(table, first, criterion)?;
    let mut chain: Vec<(String, FitResult)> = Vec::new();
    let multi = completes.len() > 1;
    for (i, f) in completes.iter().enumerate() {
        if i > 0 && !step.selected.formula.is_nested_in(f) {
            continue;
        }
        let tag = if multi { format!("cm{}", i + 1) } else { "cm".to_string() };
        let fit = if i == 0 { step.complete.clone() } else { fit_ols(table, f)? };
        chain.push((tag, fit));
    }
    if chain.last().map(|(_, f)| &f.formula) != Some(&step.selected.formula) {
        chain.push(("fm".into(), step.selected.clone()));
    }
    if let Some((rm, _)) = &step.next_reduced {
        chain.push(("rm".into(), rm.clone()));
    }
    Ok(RegressionReport {
        name: name.into(),
        normalized,
        n: step.complete.n,
        rows: regression_table(&chain)?,
        attribution: chain_attribution(&chain)?,
        selected: step.selected.formula.to_string(),
        criterion,
        dropped: step.trace.iter().filter_map(|s| s.dropped.clone()).collect(),
    })
}

fn env_levels() -> Vec<&'static str> {
    Environment::ALL.iter().map(|e| e.as_str()).collect()
}

fn response_values<T>(items: &[T], normalized: bool, raw: impl Fn(&T) -> f64, norm: impl Fn(&T) -> Option<f64>) -> Result<Vec<f64>> {
    items
        .iter()
        .map(|o| {
            if normalized {
                norm(o).ok_or_else(|| Error::Config("observations are not normalized".into()))
            } else {
                Ok(raw(o))
            }
        })
        .collect()
}

/// `gva ~ end_depth * environment` with end depth in diopters.
pub fn end_depth_analysis(obs: &[GvaObservation], normalized: bool, criterion: Criterion) -> Result<RegressionReport> {
    let y = response_values(obs, normalized, |o| o.gva, |o| o.normalized_gva)?;
    let envs: Vec<&str> = obs.iter().map(|o| o.environment.as_str()).collect();
    let mut t = DataTable::new();
    t.add_continuous("end_depth", obs.iter().map(|o| o.end_depth_d).collect())?;
    t.add_categorical("environment", &env_levels(), &envs)?;
    t.add_continuous("gva", y)?;
    let name = if normalized { "normalized_gva" } else { "raw_gva" };
    chain_report(name, normalized, &t, &["gva ~ end_depth * environment".parse()?], criterion)
}

fn depth_label(d: f64) -> String {
    format!("{d}")
}

/// Pair-level analysis with end depth as a factor and the dioptric
/// switching distance as a covariate.
pub fn stability_analysis(pairs: &[PairObservation], normalized: bool, criterion: Criterion) -> Result<RegressionReport> {
    let y = response_values(pairs, normalized, |o| o.gva, |o| o.normalized_gva)?;
    let mut depths: Vec<f64> = pairs.iter().map(|p| p.end_depth_m).collect();
    depths.sort_by(f64::total_cmp);
    depths.dedup_by(|a, b| depth_key(*a) == depth_key(*b));
    let labels: Vec<String> = depths.iter().map(|d| depth_label(*d)).collect();
    let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    let end: Vec<String> = pairs.iter().map(|p| depth_label(p.end_depth_m)).collect();
    let envs: Vec<&str> = pairs.iter().map(|o| o.environment.as_str()).collect();
    let mut t = DataTable::new();
    t.add_continuous("switch_depth", pairs.iter().map(|p| p.switch_depth_d).collect())?;
    t.add_categorical("end_depth", &label_refs, &end)?;
    t.add_categorical("environment", &env_levels(), &envs)?;
    t.add_continuous("gva", y)?;
    let name = if normalized { "stability_normalized" } else { "stability_raw" };
    chain_report(
        name,
        normalized,
        &t,
        &[
            "gva ~ switch_depth * end_depth * environment".parse()?,
            "gva ~ end_depth * environment".parse()?,
        ],
        criterion,
    )
}

/// `log_ratio ~ end_depth * environment * measure` over the XR log ratios.
pub fn subjective_analysis(rows: &[LogRatioRow], criterion: Criterion) -> Result<RegressionReport> {
    let envs: Vec<&str> = rows.iter().map(|r| r.environment.as_str()).collect();
    let measures: Vec<&str> = rows.iter().map(|r| r.measure.as_str()).collect();
    let mut t = DataTable::new();
    t.add_continuous("end_depth", rows.iter().map(|r| 1.0 / r.end_depth_m).collect())?;
    t.add_categorical("environment", &["AR", "VR"], &envs)?;
    t.add_categorical("measure", &["GVA", "subjective"], &measures)?;
    t.add_continuous("log_ratio", rows.iter().map(|r| r.log_ratio).collect())?;
    chain_report(
        "log_ratio",
        false,
        &t,
        &["log_ratio ~ end_depth * environment * measure".parse()?],
        criterion,
    )
}

/// Mean reported diopters per (participant, environment, depth).
pub fn subjective_cells(reports: &[SubjectiveReport]) -> Result<Vec<CellValue>> {
    let mut acc: BTreeMap<(String, Environment, i64), (f64, f64, usize)> = BTreeMap::new();
    for r in reports {
        let e = acc
            .entry((r.participant_id.clone(), r.environment, depth_key(r.depth_m)))
            .or_insert((r.depth_m, 0.0, 0));
        e.1 += r.reported_diopters()?;
        e.2 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|((pid, env, _), (d, s, n))| CellValue {
            participant_id: pid,
            environment: env,
            end_depth_m: d,
            value: s / n as f64,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentCorrelation {
    pub environment: Environment,
    pub r: f64,
    pub r_squared_percent: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanLogRatio {
    pub environment: Environment,
    pub measure: Measure,
    pub mean: f64,
    /// `exp(mean)`: the XR / Real ratio.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectiveSummary {
    pub gva_source: GvaSource,
    pub means: Vec<MeanLogRatio>,
    pub correlations: Vec<EnvironmentCorrelation>,
    pub regression: RegressionReport,
    pub rows: Vec<LogRatioRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GvaSource {
    #[default]
    Raw,
    Normalized,
}

/// Log ratios, their means, the regression on them, and per-environment
/// correlations of reported diopters with normalized GVA.
pub fn subjective_summary(
    obs: &[GvaObservation],
    reports: &[SubjectiveReport],
    source: GvaSource,
    criterion: Criterion,
) -> Result<SubjectiveSummary> {
    let subj = subjective_cells(reports)?;
    let observed: BTreeSet<(&str, Environment, i64)> = obs
        .iter()
        .map(|o| (o.participant_id.as_str(), o.environment, depth_key(o.end_depth_m)))
        .collect();
    // Only cells with a GVA observation enter the comparison.
    let subj: Vec<CellValue> = subj
        .into_iter()
        .filter(|c| observed.contains(&(c.participant_id.as_str(), c.environment, depth_key(c.end_depth_m))))
        .collect();
    let gva: Vec<CellValue> = obs
        .iter()
        .map(|o| {
            let value = match source {
                GvaSource::Raw => o.gva,
                GvaSource::Normalized => o
                    .normalized_gva
                    .ok_or_else(|| Error::Config("observations are not normalized".into()))?,
            };
            Ok(CellValue {
                participant_id: o.participant_id.clone(),
                environment: o.environment,
                end_depth_m: o.end_depth_m,
                value,
            })
        })
        .collect::<Result<_>>()?;
    let rows = log_ratio_table(&gva, &subj)?;
    let means = mean_log_ratios(&rows)
        .into_iter()
        .map(|((environment, measure), mean)| MeanLogRatio {
            environment,
            measure,
            mean,
            ratio: ratio_from_log(mean),
        })
        .collect();

    let subj_map: BTreeMap<(&str, Environment, i64), f64> = subj
        .iter()
        .map(|c| ((c.participant_id.as_str(), c.environment, depth_key(c.end_depth_m)), c.value))
        .collect();
    let mut correlations = Vec::new();
    for env in Environment::ALL {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for o in obs.iter().filter(|o| o.environment == env) {
            let Some(ng) = o.normalized_gva else { continue };
            if let Some(s) = subj_map.get(&(o.participant_id.as_str(), env, depth_key(o.end_depth_m))) {
                x.push(*s);
                y.push(ng);
            }
        }
        if x.is_empty() {
            continue;
        }
        let c = pearson_r(&x, &y)?;
        correlations.push(EnvironmentCorrelation {
            environment: env,
            r: c.r,
            r_squared_percent: r_squared_percent(c.r),
            n: c.n,
        });
    }
    Ok(SubjectiveSummary {
        gva_source: source,
        means,
        correlations,
        regression: subjective_analysis(&rows, criterion)?,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Whole analysis

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub normalized: bool,
    pub stability: bool,
    pub criterion: Criterion,
    pub log_ratio_source: GvaSource,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            normalized: true,
            stability: true,
            criterion: Criterion::default(),
            log_ratio_source: GvaSource::Raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub n_observations: usize,
    pub n_pair_observations: usize,
    pub participants: Vec<String>,
    pub regressions: Vec<RegressionReport>,
    pub environment_offsets: Option<EnvironmentOffsets>,
    pub subjective: Option<SubjectiveSummary>,
    pub models: Vec<ParticipantModel>,
    pub observations: Vec<GvaObservation>,
    pub pair_observations: Vec<PairObservation>,
}

impl AnalysisReport {
    pub fn regression(&self, name: &str) -> Option<&RegressionReport> {
        self.regressions.iter().find(|r| r.name == name)
    }
}

/// Run every analysis the inputs support. Raw end-depth regression always;
/// normalized and stability analyses when requested; the subjective
/// comparison when reports are given.
pub fn analyze(
    rows: &[GvaTrialRow],
    models: Option<&BTreeMap<String, ParticipantModel>>,
    reports: Option<&[SubjectiveReport]>,
    opts: &AnalysisOptions,
) -> Result<AnalysisReport> {
    let raw = cell_observations(rows);
    if raw.is_empty() {
        return Err(Error::DegenerateInput("no included trials to analyze".into()));
    }
    let fitted;
    let models = match models {
        Some(m) => m,
        None => {
            fitted = fit_models(&raw)?;
            &fitted
        }
    };
    let obs = normalize_all(&raw, models)?;
    let pairs = normalize_pairs(&pair_observations(rows), models)?;

    let mut regressions = vec![end_depth_analysis(&obs, false, opts.criterion)?];
    let mut offsets = None;
    if opts.normalized {
        regressions.push(end_depth_analysis(&obs, true, opts.criterion)?);
        offsets = Some(environment_offsets(&obs)?);
    }
    if opts.stability {
        regressions.push(stability_analysis(&pairs, false, opts.criterion)?);
        if opts.normalized {
            regressions.push(stability_analysis(&pairs, true, opts.criterion)?);
        }
    }
    let subjective = match reports {
        Some(r) => Some(subjective_summary(&obs, r, opts.log_ratio_source, opts.criterion)?),
        None => None,
    };
    let participants: BTreeSet<String> = obs.iter().map(|o| o.participant_id.clone()).collect();
    Ok(AnalysisReport {
        n_observations: obs.len(),
        n_pair_observations: pairs.len(),
        participants: participants.into_iter().collect(),
        regressions,
        environment_offsets: offsets,
        subjective,
        models: models
            .iter()
            .filter(|(id, _)| participants_contains(&obs, id))
            .map(|(_, m)| m.clone())
            .collect(),
        observations: obs,
        pair_observations: pairs,
    })
}

fn participants_contains(obs: &[GvaObservation], id: &str) -> bool {
    obs.iter().any(|o| o.participant_id == id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ModelFormula;
    use approx::assert_abs_diff_eq;

    fn printed(formula: &str, r2: f64, df: usize, n: usize) -> FitResult {
        FitResult::from_summary(formula.parse::<ModelFormula>().unwrap(), r2, df, n).unwrap()
    }

    #[test]
    fn table_from_printed_stability_chain() {
        let chain = vec![
            ("cm1".to_string(), printed("gva ~ switch_depth * end_depth * environment", 0.6188, 441, 465)),
            ("cm2".to_string(), printed("gva ~ end_depth * environment", 0.6135, 453, 465)),
            ("fm".to_string(), printed("gva ~ end_depth + environment", 0.6066, 459, 465)),
            ("rm".to_string(), printed("gva ~ end_depth", 0.5828, 461, 465)),
        ];
        let rows = regression_table(&chain).unwrap();
        let f: Vec<String> = rows[1..].iter().map(|r| format!("{:.1}", r.f.unwrap())).collect();
        assert_eq!(f, ["0.5", "1.3", "13.8"]);
        assert_eq!(rows[3].p_label.as_deref(), Some("<0.001"));
        assert_eq!(rows[0].f, None);

        let shares = chain_attribution(&chain).unwrap();
        let switch = shares.iter().find(|s| s.predictor == "switch_depth").unwrap();
        assert_eq!(format!("{:.1}", switch.percent), "0.9");
        let depth = shares.iter().find(|s| s.predictor == "end_depth").unwrap();
        assert_eq!(format!("{:.1}", depth.percent), "94.2");
        assert_eq!(depth.definition, "rm/cm1");
    }

    fn row(pid: &str, env: Environment, trial: u32, s: f64, e: f64, g: f64) -> GvaTrialRow {
        GvaTrialRow {
            participant_id: pid.into(),
            environment: env,
            trial_id: trial,
            start_depth_m: s,
            end_depth_m: e,
            mean_gva: Some(g),
            valid_fraction: 1.0,
            valid: true,
            included: true,
        }
    }

    #[test]
    fn averaging_uses_only_included_trials() {
        let mut rows = vec![
            row("P01", Environment::Real, 0, 4.0, 0.25, 20.0),
            row("P01", Environment::Real, 1, 0.75, 0.25, 22.0),
            row("P01", Environment::Real, 2, 0.75, 0.25, 24.0),
        ];
        rows.push(GvaTrialRow {
            included: false,
            ..row("P01", Environment::Real, 3, 4.0, 0.25, 99.0)
        });
        let cells = cell_observations(&rows);
        assert_eq!(cells.len(), 1);
        assert_abs_diff_eq!(cells[0].gva, 22.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cells[0].end_depth_d, 4.0, epsilon = 1e-12);
        let pairs = pair_observations(&rows);
        assert_eq!(pairs.len(), 2);
        assert_abs_diff_eq!(pairs[0].gva, 23.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pairs[0].switch_depth_d, 4.0 - 1.0 / 0.75, epsilon = 1e-12);
    }
}
