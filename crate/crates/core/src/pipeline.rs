//! Sample-cleaning cascade and validity gates.
//!
//! Order is fixed: confidence, velocity, SD outlier, then fixation onset and
//! the 1-2 s analysis window. Filters never remove slots; they only flip a
//! sample's status, so a trial's length is constant through the cascade.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::geometry::{cyclopean_direction, vergence_angle_with, GazeRay, VergenceMode};
use crate::types::{depth_key, Environment, LandoltDirection, LandoltResponse};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    LowConfidence,
    VelocitySpike,
    Outlier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Valid,
    Invalidated(InvalidReason),
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinocularGaze {
    pub left: GazeRay,
    pub right: GazeRay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinocularSample {
    pub t_s: f64,
    /// `None` for samples the tracker did not deliver.
    pub gaze: Option<BinocularGaze>,
    pub left_conf: f64,
    pub right_conf: f64,
    pub status: SampleStatus,
}

impl BinocularSample {
    pub fn new(t_s: f64, left: GazeRay, right: GazeRay, left_conf: f64, right_conf: f64) -> Self {
        Self {
            t_s,
            gaze: Some(BinocularGaze { left, right }),
            left_conf,
            right_conf,
            status: SampleStatus::Valid,
        }
    }

    pub fn missing(t_s: f64, left_conf: f64, right_conf: f64) -> Self {
        Self {
            t_s,
            gaze: None,
            left_conf,
            right_conf,
            status: SampleStatus::Missing,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.status == SampleStatus::Valid
    }

    /// GVA of the raw rays, regardless of status.
    pub fn raw_gva(&self, mode: VergenceMode) -> Option<f64> {
        let g = self.gaze.as_ref()?;
        vergence_angle_with(mode, g.left.direction, g.right.direction).ok()
    }

    /// GVA if the sample is still valid.
    pub fn gva(&self, mode: VergenceMode) -> Option<f64> {
        if self.is_valid() {
            self.raw_gva(mode)
        } else {
            None
        }
    }

    fn invalidate(&mut self, reason: InvalidReason) {
        if self.status == SampleStatus::Valid {
            self.status = SampleStatus::Invalidated(reason);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u32,
    pub participant_id: String,
    pub environment: Environment,
    pub start_depth_m: f64,
    pub end_depth_m: f64,
    pub stimulus_onset_s: f64,
    pub response_s: Option<f64>,
    pub fixation_onset_s: Option<f64>,
    pub landolt_dir: LandoltDirection,
    pub landolt_response: LandoltResponse,
    pub samples: Vec<BinocularSample>,
}

impl TrialRecord {
    pub fn landolt_correct(&self) -> bool {
        self.landolt_response.is_correct(self.landolt_dir)
    }

    pub fn last_sample_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.t_s)
    }
}

// ---------------------------------------------------------------------------
// Filters

/// Invalidate samples where either eye's confidence is below `threshold`.
pub fn confidence_filter(mut trial: TrialRecord, threshold: f64) -> TrialRecord {
    for s in trial.samples.iter_mut().filter(|s| s.is_valid()) {
        if s.left_conf.min(s.right_conf) < threshold {
            s.invalidate(InvalidReason::LowConfidence);
        }
    }
    trial
}

/// Invalidate samples whose GVA velocity magnitude exceeds `max_velocity`.
///
/// The velocity of sample `i` is the step from the preceding sample; it is
/// only computed when that sample is valid after filtering. A one-sample
/// spike is therefore caught on the way in, and the step back out is not
/// evaluated because it touches an invalid sample.
pub fn velocity_filter(mut trial: TrialRecord, max_velocity: f64, mode: VergenceMode) -> TrialRecord {
    let mut prev: Option<(f64, f64)> = None;
    for s in trial.samples.iter_mut() {
        let Some(g) = s.gva(mode) else {
            prev = None;
            continue;
        };
        match prev {
            Some((tp, gp)) if s.t_s > tp => {
                let v = (g - gp) / (s.t_s - tp);
                if v.abs() > max_velocity {
                    s.invalidate(InvalidReason::VelocitySpike);
                    prev = None;
                } else {
                    prev = Some((s.t_s, g));
                }
            }
            _ => prev = Some((s.t_s, g)),
        }
    }
    trial
}

/// Invalidate samples at or beyond `k_sd` standard deviations from the
/// trial mean. Mean and SD are computed once over the currently valid set.
pub fn outlier_filter(mut trial: TrialRecord, k_sd: f64, mode: VergenceMode) -> TrialRecord {
    let values: Vec<(usize, f64)> = trial
        .samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.gva(mode).map(|g| (i, g)))
        .collect();
    let Some((mean, sd)) = mean_sd(values.iter().map(|&(_, g)| g)) else {
        return trial;
    };
    // Zero spread cannot flag anything; rounding noise on identical values
    // must not either.
    if sd <= 1e-12 * mean.abs().max(1.0) {
        return trial;
    }
    let limit = k_sd * sd;
    for (i, g) in values {
        if (g - mean).abs() >= limit {
            trial.samples[i].invalidate(InvalidReason::Outlier);
        }
    }
    trial
}

/// Mean and sample standard deviation (n - 1); `None` below two values.
pub fn mean_sd(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for x in values {
        n += 1;
        let d = x - mean;
        mean += d / n as f64;
        m2 += d * (x - mean);
    }
    (n >= 2).then(|| (mean, (m2 / (n - 1) as f64).sqrt()))
}

// ---------------------------------------------------------------------------
// Fixation and window

/// Dispersion-threshold (I-DT) fixation detection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixationConfig {
    /// Earliest fixation onset relative to stimulus onset.
    pub min_latency_s: f64,
    /// Max (azimuth range + elevation range) of the cyclopean direction, degrees.
    pub dispersion_deg: f64,
    pub min_duration_s: f64,
}

impl Default for FixationConfig {
    fn default() -> Self {
        Self {
            min_latency_s: 0.250,
            dispersion_deg: 1.5,
            min_duration_s: 0.100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialFlaw {
    NoFixation,
    ShortTrial,
    NoValidSamples,
    InsufficientValid,
}

/// Onset of the first I-DT fixation starting at or after
/// `stimulus_onset + min_latency` and before the response.
pub fn detect_fixation_onset(trial: &TrialRecord, cfg: &FixationConfig) -> Result<f64, TrialFlaw> {
    let earliest = trial.stimulus_onset_s + cfg.min_latency_s - TIME_EPS;
    let points: Vec<(f64, f64, f64)> = trial
        .samples
        .iter()
        .filter(|s| s.is_valid() && s.t_s >= earliest)
        .filter_map(|s| {
            let g = s.gaze.as_ref()?;
            let c = cyclopean_direction(g.left.direction, g.right.direction).ok()?;
            let (az, el) = c.angles_deg();
            Some((s.t_s, az, el))
        })
        .collect();

    for i in 0..points.len() {
        let onset = points[i].0;
        if let Some(resp) = trial.response_s {
            if onset >= resp {
                break;
            }
        }
        let (mut az_lo, mut az_hi) = (points[i].1, points[i].1);
        let (mut el_lo, mut el_hi) = (points[i].2, points[i].2);
        for &(t, az, el) in &points[i + 1..] {
            az_lo = az_lo.min(az);
            az_hi = az_hi.max(az);
            el_lo = el_lo.min(el);
            el_hi = el_hi.max(el);
            if (az_hi - az_lo) + (el_hi - el_lo) > cfg.dispersion_deg {
                break;
            }
            if t - onset >= cfg.min_duration_s - TIME_EPS {
                return Ok(onset);
            }
        }
    }
    Err(TrialFlaw::NoFixation)
}

/// `[onset + 1 s, onset + 2 s)`; errors when the trial ends before the window does.
pub fn analysis_window(trial: &TrialRecord) -> Result<(f64, f64), TrialFlaw> {
    let onset = trial.fixation_onset_s.ok_or(TrialFlaw::NoFixation)?;
    let window = (onset + 1.0, onset + 2.0);
    match trial.last_sample_time() {
        Some(last) if last + TIME_EPS >= window.1 - sample_period(trial) => Ok(window),
        _ => Err(TrialFlaw::ShortTrial),
    }
}

fn sample_period(trial: &TrialRecord) -> f64 {
    match trial.samples.as_slice() {
        [a, b, ..] => (b.t_s - a.t_s).max(0.0),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowMean {
    pub mean_gva: f64,
    pub valid_fraction: f64,
    pub n_valid: usize,
    pub n_total: usize,
}

/// Mean GVA over valid samples in `[t0, t1)`.
pub fn trial_mean_gva(
    trial: &TrialRecord,
    window: (f64, f64),
    mode: VergenceMode,
) -> Result<WindowMean, TrialFlaw> {
    let (t0, t1) = window;
    let mut n_total = 0usize;
    let mut n_valid = 0usize;
    let mut sum = 0.0;
    for s in trial
        .samples
        .iter()
        .filter(|s| s.t_s >= t0 - TIME_EPS && s.t_s < t1 - TIME_EPS)
    {
        n_total += 1;
        if let Some(g) = s.gva(mode) {
            n_valid += 1;
            sum += g;
        }
    }
    if n_valid == 0 {
        return Err(TrialFlaw::NoValidSamples);
    }
    Ok(WindowMean {
        mean_gva: sum / n_valid as f64,
        valid_fraction: n_valid as f64 / n_total as f64,
        n_valid,
        n_total,
    })
}

/// A trial is valid when strictly more than half its window samples are valid.
pub fn trial_validity(valid_fraction: f64) -> bool {
    valid_fraction > 0.5
}

// ---------------------------------------------------------------------------
// Whole-trial processing

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub min_valid_trials_per_pair: usize,
    pub min_valid_pairs_per_environment: usize,
    pub required_valid_environments: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            min_valid_trials_per_pair: 3,
            min_valid_pairs_per_environment: 6,
            required_valid_environments: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub confidence_threshold: f64,
    pub max_velocity_deg_s: f64,
    pub outlier_k_sd: f64,
    pub fixation: FixationConfig,
    pub vergence_mode: VergenceMode,
    pub gates: GateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.75,
            max_velocity_deg_s: 5000.0,
            outlier_k_sd: 2.5,
            fixation: FixationConfig::default(),
            vergence_mode: VergenceMode::Full3d,
            gates: GateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub total: usize,
    pub valid: usize,
    pub missing: usize,
    pub low_confidence: usize,
    pub velocity_spike: usize,
    pub outlier: usize,
}

impl SampleCounts {
    pub fn of(samples: &[BinocularSample]) -> Self {
        let mut c = SampleCounts::default();
        for s in samples {
            c.total += 1;
            match s.status {
                SampleStatus::Valid => c.valid += 1,
                SampleStatus::Missing => c.missing += 1,
                SampleStatus::Invalidated(InvalidReason::LowConfidence) => c.low_confidence += 1,
                SampleStatus::Invalidated(InvalidReason::VelocitySpike) => c.velocity_spike += 1,
                SampleStatus::Invalidated(InvalidReason::Outlier) => c.outlier += 1,
            }
        }
        c
    }

    pub fn add(&mut self, o: &SampleCounts) {
        self.total += o.total;
        self.valid += o.valid;
        self.missing += o.missing;
        self.low_confidence += o.low_confidence;
        self.velocity_spike += o.velocity_spike;
        self.outlier += o.outlier;
    }

    pub fn excluded(&self) -> usize {
        self.total - self.valid
    }

    pub fn excluded_percent(&self) -> f64 {
        percent(self.excluded(), self.total)
    }
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_id: u32,
    pub participant_id: String,
    pub environment: Environment,
    pub start_depth_m: f64,
    pub end_depth_m: f64,
    pub fixation_onset_s: Option<f64>,
    pub window: Option<(f64, f64)>,
    pub mean_gva: Option<f64>,
    pub valid_fraction: f64,
    pub valid: bool,
    pub flaw: Option<TrialFlaw>,
    pub counts: SampleCounts,
    pub landolt_correct: bool,
}

/// Run the full cascade on one trial. Returns the filtered record (with
/// `fixation_onset_s` set when found) and its outcome.
pub fn process_trial(trial: TrialRecord, cfg: &PipelineConfig) -> (TrialRecord, TrialOutcome) {
    let mode = cfg.vergence_mode;
    let trial = confidence_filter(trial, cfg.confidence_threshold);
    let trial = velocity_filter(trial, cfg.max_velocity_deg_s, mode);
    let mut trial = outlier_filter(trial, cfg.outlier_k_sd, mode);

    let mut outcome = TrialOutcome {
        trial_id: trial.trial_id,
        participant_id: trial.participant_id.clone(),
        environment: trial.environment,
        start_depth_m: trial.start_depth_m,
        end_depth_m: trial.end_depth_m,
        fixation_onset_s: None,
        window: None,
        mean_gva: None,
        valid_fraction: 0.0,
        valid: false,
        flaw: None,
        counts: SampleCounts::of(&trial.samples),
        landolt_correct: trial.landolt_correct(),
    };

    let result = detect_fixation_onset(&trial, &cfg.fixation).and_then(|onset| {
        trial.fixation_onset_s = Some(onset);
        outcome.fixation_onset_s = Some(onset);
        let window = analysis_window(&trial)?;
        outcome.window = Some(window);
        trial_mean_gva(&trial, window, mode)
    });
    match result {
        Ok(m) => {
            outcome.mean_gva = Some(m.mean_gva);
            outcome.valid_fraction = m.valid_fraction;
            outcome.valid = trial_validity(m.valid_fraction);
            if !outcome.valid {
                outcome.flaw = Some(TrialFlaw::InsufficientValid);
            }
        }
        Err(flaw) => outcome.flaw = Some(flaw),
    }
    (trial, outcome)
}

/// Process trials in parallel; output order matches input order.
pub fn process_trials(trials: Vec<TrialRecord>, cfg: &PipelineConfig) -> Vec<TrialOutcome> {
    trials
        .into_par_iter()
        .map(|t| process_trial(t, cfg).1)
        .collect()
}

// ---------------------------------------------------------------------------
// Validity gates and reporting

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairValidity {
    pub participant_id: String,
    pub environment: Environment,
    pub start_depth_m: f64,
    pub end_depth_m: f64,
    pub valid_trials: usize,
    pub total_trials: usize,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentValidity {
    pub participant_id: String,
    pub environment: Environment,
    pub valid_pairs: usize,
    pub total_pairs: usize,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantValidity {
    pub participant_id: String,
    pub valid_environments: usize,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionSummary {
    pub environment: Environment,
    pub counts: SampleCounts,
    /// Mean over participants of their per-participant exclusion percentage.
    pub mean_participant_excluded_percent: f64,
    pub min_participant_excluded_percent: f64,
    pub max_participant_excluded_percent: f64,
    pub trials: usize,
    pub valid_trials: usize,
    pub valid_trial_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandoltSummary {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Spread of per-(participant, environment) accuracies.
    pub cell_sd: f64,
    pub cell_min: f64,
    pub cell_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub totals: SampleCounts,
    pub excluded_percent: f64,
    pub by_environment: Vec<ExclusionSummary>,
    pub trial_flaws: BTreeMap<String, usize>,
    pub pairs: Vec<PairValidity>,
    pub environments: Vec<EnvironmentValidity>,
    pub participants: Vec<ParticipantValidity>,
    pub retained_participants: Vec<String>,
    pub landolt: Option<LandoltSummary>,
}

impl ValidityReport {
    pub fn is_retained(&self, participant_id: &str) -> bool {
        self.retained_participants.iter().any(|p| p == participant_id)
    }
}

/// Apply the pair, environment and participant gates hierarchically.
pub fn cascade_validity(outcomes: &[TrialOutcome], gates: &GateConfig) -> ValidityReport {
    let mut totals = SampleCounts::default();
    let mut trial_flaws: BTreeMap<String, usize> = BTreeMap::new();
    // (participant, env, start, end) -> (valid, total)
    let mut pair_counts: BTreeMap<(String, Environment, i64, i64), (usize, usize, f64, f64)> =
        BTreeMap::new();
    let mut cell_counts: BTreeMap<(String, Environment), (SampleCounts, usize, usize)> = BTreeMap::new();

    for o in outcomes {
        totals.add(&o.counts);
        if let Some(f) = o.flaw {
            let key = serde_json::to_value(f)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            *trial_flaws.entry(key).or_default() += 1;
        }
        let e = pair_counts
            .entry((
                o.participant_id.clone(),
                o.environment,
                depth_key(o.start_depth_m),
                depth_key(o.end_depth_m),
            ))
            .or_insert((0, 0, o.start_depth_m, o.end_depth_m));
        e.1 += 1;
        if o.valid {
            e.0 += 1;
        }
        let c = cell_counts
            .entry((o.participant_id.clone(), o.environment))
            .or_default();
        c.0.add(&o.counts);
        c.2 += 1;
        if o.landolt_correct {
            c.1 += 1;
        }
    }

    let pairs: Vec<PairValidity> = pair_counts
        .iter()
        .map(|((p, env, _, _), &(valid, total, s, e))| PairValidity {
            participant_id: p.clone(),
            environment: *env,
            start_depth_m: s,
            end_depth_m: e,
            valid_trials: valid,
            total_trials: total,
            valid: valid >= gates.min_valid_trials_per_pair,
        })
        .collect();

    let mut env_counts: BTreeMap<(String, Environment), (usize, usize)> = BTreeMap::new();
    for p in &pairs {
        let e = env_counts
            .entry((p.participant_id.clone(), p.environment))
            .or_default();
        e.1 += 1;
        if p.valid {
            e.0 += 1;
        }
    }
    let environments: Vec<EnvironmentValidity> = env_counts
        .iter()
        .map(|((p, env), &(valid, total))| EnvironmentValidity {
            participant_id: p.clone(),
            environment: *env,
            valid_pairs: valid,
            total_pairs: total,
            valid: valid >= gates.min_valid_pairs_per_environment,
        })
        .collect();

    let mut part_counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &environments {
        let c = part_counts.entry(e.participant_id.clone()).or_default();
        if e.valid {
            *c += 1;
        }
    }
    let participants: Vec<ParticipantValidity> = part_counts
        .iter()
        .map(|(p, &n)| ParticipantValidity {
            participant_id: p.clone(),
            valid_environments: n,
            valid: n >= gates.required_valid_environments,
        })
        .collect();
    let retained_participants = participants
        .iter()
        .filter(|p| p.valid)
        .map(|p| p.participant_id.clone())
        .collect();

    let by_environment = Environment::ALL
        .iter()
        .filter_map(|&env| exclusion_summary(env, outcomes, &cell_counts))
        .collect();

    let landolt = landolt_summary(&cell_counts);

    ValidityReport {
        excluded_percent: totals.excluded_percent(),
        totals,
        by_environment,
        trial_flaws,
        pairs,
        environments,
        participants,
        retained_participants,
        landolt,
    }
}

fn exclusion_summary(
    env: Environment,
    outcomes: &[TrialOutcome],
    cells: &BTreeMap<(String, Environment), (SampleCounts, usize, usize)>,
) -> Option<ExclusionSummary> {
    let per_participant: Vec<f64> = cells
        .iter()
        .filter(|((_, e), _)| *e == env)
        .map(|(_, (c, _, _))| c.excluded_percent())
        .collect();
    if per_participant.is_empty() {
        return None;
    }
    let mut counts = SampleCounts::default();
    for ((_, e), (c, _, _)) in cells {
        if *e == env {
            counts.add(c);
        }
    }
    let trials = outcomes.iter().filter(|o| o.environment == env).count();
    let valid_trials = outcomes
        .iter()
        .filter(|o| o.environment == env && o.valid)
        .count();
    Some(ExclusionSummary {
        environment: env,
        counts,
        mean_participant_excluded_percent: per_participant.iter().sum::<f64>()
            / per_participant.len() as f64,
        min_participant_excluded_percent: per_participant.iter().copied().fold(f64::INFINITY, f64::min),
        max_participant_excluded_percent: per_participant
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
        trials,
        valid_trials,
        valid_trial_percent: percent(valid_trials, trials),
    })
}

fn landolt_summary(
    cells: &BTreeMap<(String, Environment), (SampleCounts, usize, usize)>,
) -> Option<LandoltSummary> {
    let correct: usize = cells.values().map(|c| c.1).sum();
    let total: usize = cells.values().map(|c| c.2).sum();
    if total == 0 {
        return None;
    }
    let accs: Vec<f64> = cells
        .values()
        .filter(|c| c.2 > 0)
        .map(|c| c.1 as f64 / c.2 as f64)
        .collect();
    let cell_sd = mean_sd(accs.iter().copied()).map(|(_, sd)| sd).unwrap_or(0.0);
    Some(LandoltSummary {
        correct,
        total,
        accuracy: correct as f64 / total as f64,
        cell_sd,
        cell_min: accs.iter().copied().fold(f64::INFINITY, f64::min),
        cell_max: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}
