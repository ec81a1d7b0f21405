//! Ground-truth simulator: experiment design, per-participant physiology,
//! binocular sample streams with tagged artifacts, and verbal reports.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{ideal_vergence, rays_for_vergence, EyeConfig};
use crate::pipeline::{BinocularSample, TrialRecord};
use crate::stats::units::LengthUnit;
use crate::types::{Environment, LandoltDirection, LandoltResponse, SubjectiveReport};

const DEFAULT_DEPTHS: [f64; 4] = [0.25, 0.75, 1.5, 4.0];
/// Horizontal direction of each default target, degrees from straight ahead.
const DEFAULT_AZIMUTHS: [f64; 4] = [25.0, -7.6, 5.71, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentDesign {
    pub depths_m: Vec<f64>,
    /// Target azimuths parallel to `depths_m`; generated when absent.
    pub target_azimuths_deg: Option<Vec<f64>>,
    pub environments: Vec<Environment>,
    pub repetitions: usize,
    pub participants: usize,
    pub sample_rate_hz: f64,
    pub response_window_s: f64,
    pub iti_range_s: (f64, f64),
    /// Recording starts this long before stimulus onset.
    pub pre_stimulus_s: f64,
    /// Recording covers this long after stimulus onset.
    pub post_stimulus_s: f64,
}

impl Default for ExperimentDesign {
    fn default() -> Self {
        Self {
            depths_m: DEFAULT_DEPTHS.to_vec(),
            target_azimuths_deg: None,
            environments: Environment::ALL.to_vec(),
            repetitions: 6,
            participants: 13,
            sample_rate_hz: 200.0,
            response_window_s: 3.0,
            iti_range_s: (3.0, 6.0),
            pre_stimulus_s: 0.5,
            post_stimulus_s: 3.0,
        }
    }
}

impl ExperimentDesign {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depths_m.len() < 2 {
            return bad("need at least two depths".into());
        }
        if self.depths_m.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return bad("depths must be positive".into());
        }
        for (i, a) in self.depths_m.iter().enumerate() {
            if self.depths_m[i + 1..].iter().any(|b| (a - b).abs() < 1e-9) {
                return bad(format!("depth {a} listed twice"));
            }
        }
        let az = self.azimuths();
        if az.len() != self.depths_m.len() {
            return bad("one azimuth per depth is required".into());
        }
        for (i, a) in az.iter().enumerate() {
            if az[i + 1..].iter().any(|b| (a - b).abs() < 3.0) {
                return bad("target azimuths must differ by at least 3 degrees".into());
            }
        }
        if self.environments.is_empty() {
            return bad("no environments".into());
        }
        if self.repetitions == 0 || self.participants == 0 {
            return bad("repetitions and participants must be positive".into());
        }
        if !(self.sample_rate_hz > 0.0) {
            return bad("sample rate must be positive".into());
        }
        if !(self.iti_range_s.0 >= 0.0 && self.iti_range_s.1 >= self.iti_range_s.0) {
            return bad("bad inter-trial interval range".into());
        }
        if !(self.response_window_s > 0.0 && self.post_stimulus_s >= self.response_window_s) {
            return bad("recording must cover the response window".into());
        }
        if !(self.pre_stimulus_s >= 0.0) {
            return bad("pre-stimulus time must be >= 0".into());
        }
        Ok(())
    }

    pub fn azimuths(&self) -> Vec<f64> {
        match &self.target_azimuths_deg {
            Some(a) => a.clone(),
            None if self.depths_m == DEFAULT_DEPTHS => DEFAULT_AZIMUTHS.to_vec(),
            None => (0..self.depths_m.len())
                .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * 6.0 * (i / 2 + 1) as f64)
                .collect(),
        }
    }

    /// Every ordered pair of distinct depths.
    pub fn depth_pairs(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &a in &self.depths_m {
            for &b in &self.depths_m {
                if a != b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn trials_per_session(&self) -> usize {
        self.depth_pairs().len() * self.repetitions
    }

    fn azimuth_of(&self, depth: f64) -> f64 {
        let i = self
            .depths_m
            .iter()
            .position(|d| *d == depth)
            .expect("depth from the design");
        self.azimuths()[i]
    }
}

/// How a participant's steady-state GVA depends on target depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseModel {
    /// `gva = a + b * D`, with `a` and `b` drawn per participant; draws
    /// below the minimum are redrawn.
    DiopterLinear {
        intercept_mean: f64,
        intercept_sd: f64,
        intercept_min: f64,
        slope_mean: f64,
        slope_sd: f64,
        slope_min: f64,
    },
    /// `gva = gain * ideal_vergence(depth, ipd) + bias`.
    Geometric {
        gain: f64,
        bias_mean: f64,
        bias_sd: f64,
        bias_min: f64,
    },
}

impl Default for ResponseModel {
    fn default() -> Self {
        ResponseModel::DiopterLinear {
            intercept_mean: 17.5,
            intercept_sd: 8.6,
            intercept_min: 5.0,
            slope_mean: 1.7,
            slope_sd: 0.37,
            slope_min: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpdModel {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for IpdModel {
    fn default() -> Self {
        Self {
            mean: 0.063,
            sd: 0.0035,
            min: 0.054,
            max: 0.074,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Independent Gaussian noise on each sample's GVA, degrees.
    pub sample_noise_sd: f64,
    /// Gaussian noise on the cyclopean gaze azimuth, degrees.
    pub version_noise_sd: f64,
    /// Constant shift of one trial's steady-state GVA, degrees.
    pub trial_offset_sd: f64,
    /// Fraction of samples lost to confidence-zero dropouts.
    pub dropout_rate: f64,
    pub dropout_burst_mean: f64,
    /// Probability that a trial loses tracking from shortly after the
    /// saccade to its end.
    pub trial_loss_rate: f64,
    /// Single-sample GVA jumps fast enough to trip the velocity filter.
    pub spike_rate: f64,
    pub spike_size_deg: f64,
    /// Single-sample GVA jumps during steady fixation, below the velocity
    /// limit but far outside the trial's spread.
    pub outlier_rate: f64,
    pub outlier_size_deg: f64,
    /// Vergence settles within this time (three time constants).
    pub settle_time_range_s: (f64, f64),
    pub saccade_latency_range_s: (f64, f64),
    pub confidence_range: (f64, f64),
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sample_noise_sd: 0.6,
            version_noise_sd: 0.02,
            trial_offset_sd: 0.0,
            dropout_rate: 0.13,
            dropout_burst_mean: 20.0,
            trial_loss_rate: 0.01,
            spike_rate: 0.003,
            spike_size_deg: 40.0,
            outlier_rate: 0.0,
            outlier_size_deg: 20.0,
            settle_time_range_s: (0.2, 0.3),
            saccade_latency_range_s: (0.22, 0.3),
            confidence_range: (0.8, 1.0),
        }
    }
}

impl NoiseModel {
    pub fn silent() -> Self {
        Self {
            sample_noise_sd: 0.0,
            version_noise_sd: 0.0,
            trial_offset_sd: 0.0,
            dropout_rate: 0.0,
            trial_loss_rate: 0.0,
            spike_rate: 0.0,
            outlier_rate: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let rates = [
            self.dropout_rate,
            self.trial_loss_rate,
            self.spike_rate,
            self.outlier_rate,
        ];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("artifact rates must lie in [0, 1]".into()));
        }
        let sds = [self.sample_noise_sd, self.version_noise_sd, self.trial_offset_sd];
        if sds.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("noise SDs must be >= 0".into()));
        }
        if !(self.dropout_burst_mean >= 1.0) {
            return Err(Error::Config("dropout bursts last at least one sample".into()));
        }
        let ranges = [
            self.settle_time_range_s,
            self.saccade_latency_range_s,
            self.confidence_range,
        ];
        if ranges.iter().any(|(lo, hi)| !(lo <= hi) || *lo < 0.0) {
            return Err(Error::Config("bad range in noise model".into()));
        }
        if self.settle_time_range_s.0 <= 0.0 {
            return Err(Error::Config("settle time must be positive".into()));
        }
        if self.confidence_range.1 > 1.0 {
            return Err(Error::Config("confidence cannot exceed 1".into()));
        }
        Ok(())
    }
}

/// Additive GVA offsets per environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentEffect {
    pub offsets: BTreeMap<Environment, f64>,
}

impl Default for EnvironmentEffect {
    fn default() -> Self {
        Self {
            offsets: [
                (Environment::Real, 0.0),
                (Environment::AR, -0.8),
                (Environment::VR, -1.3),
            ]
            .into_iter()
            .collect(),
        }
    }
}

impl EnvironmentEffect {
    pub fn none() -> Self {
        Self {
            offsets: Environment::ALL.iter().map(|e| (*e, 0.0)).collect(),
        }
    }

    pub fn offset(&self, env: Environment) -> f64 {
        self.offsets.get(&env).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectiveModel {
    /// Multiplier on the true depth in diopters.
    pub factors: BTreeMap<Environment, f64>,
    /// SD of the lognormal jitter on each report.
    pub jitter_sd: f64,
    pub repetitions: u32,
    pub units: Vec<LengthUnit>,
}

impl Default for SubjectiveModel {
    fn default() -> Self {
        Self {
            factors: [
                (Environment::Real, 1.0),
                (Environment::AR, 1.17),
                (Environment::VR, 1.377),
            ]
            .into_iter()
            .collect(),
            jitter_sd: 0.1,
            repetitions: 3,
            units: vec![LengthUnit::Meters, LengthUnit::Feet, LengthUnit::Inches],
        }
    }
}

impl SubjectiveModel {
    pub fn factor(&self, env: Environment) -> f64 {
        self.factors.get(&env).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorModel {
    pub landolt_accuracy: f64,
    pub timeout_rate: f64,
    /// Response time after stimulus onset.
    pub response_time_range_s: (f64, f64),
}

impl Default for BehaviorModel {
    fn default() -> Self {
        Self {
            landolt_accuracy: 0.98,
            timeout_rate: 0.0,
            response_time_range_s: (0.6, 1.5),
        }
    }
}

/// Fixed parameters for one participant, by zero-based index.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ParticipantOverride {
    pub index: usize,
    pub ipd: Option<f64>,
    /// Intercept (linear response) or bias (geometric response).
    pub intercept_deg: Option<f64>,
    pub slope_deg_per_diopter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub design: ExperimentDesign,
    pub response: ResponseModel,
    pub ipd: IpdModel,
    pub noise: NoiseModel,
    pub environment_effect: EnvironmentEffect,
    pub subjective: SubjectiveModel,
    pub behavior: BehaviorModel,
    pub overrides: Vec<ParticipantOverride>,
}

impl CohortConfig {
    /// Linear diopter response with the reference population statistics
    /// (intercept 17.5 +- 8.6 deg, slope 1.7 +- 0.37 deg/D).
    pub fn reference() -> Self {
        Self::default()
    }

    /// Vergence follows the midline geometry, shifted by a per-participant bias.
    pub fn geometric() -> Self {
        Self {
            response: ResponseModel::Geometric {
                gain: 1.0,
                bias_mean: 17.5,
                bias_sd: 8.6,
                bias_min: 5.0,
            },
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "reference" => Ok(Self::reference()),
            "geometric" => Ok(Self::geometric()),
            "noiseless" => Ok(Self::reference().noiseless()),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    /// No sample noise, no artifacts, no environment offsets.
    pub fn noiseless(mut self) -> Self {
        self.noise = NoiseModel::silent();
        self.environment_effect = EnvironmentEffect::none();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        self.noise.validate()?;
        if !(0.0..=1.0).contains(&self.behavior.landolt_accuracy)
            || !(0.0..=1.0).contains(&self.behavior.timeout_rate)
        {
            return Err(Error::Config("behavior rates must lie in [0, 1]".into()));
        }
        let (lo, hi) = self.behavior.response_time_range_s;
        if !(lo > 0.0 && hi >= lo && hi < self.design.response_window_s) {
            return Err(Error::Config(
                "response times must fall inside the response window".into(),
            ));
        }
        if !(self.ipd.min > 0.0 && self.ipd.max >= self.ipd.min && self.ipd.sd >= 0.0) {
            return Err(Error::Config("bad ipd model".into()));
        }
        if self.subjective.repetitions == 0 || self.subjective.units.is_empty() {
            return Err(Error::Config("subjective reports need repetitions and units".into()));
        }
        if self.subjective.factors.values().any(|f| !(*f > 0.0)) || self.subjective.jitter_sd < 0.0 {
            return Err(Error::Config("subjective factors must be positive".into()));
        }
        match self.response {
            ResponseModel::DiopterLinear { intercept_sd, slope_sd, slope_min, .. } => {
                if intercept_sd < 0.0 || slope_sd < 0.0 || !(slope_min > 0.0) {
                    return Err(Error::Config("bad linear response model".into()));
                }
            }
            ResponseModel::Geometric { gain, bias_sd, .. } => {
                if !(gain > 0.0) || bias_sd < 0.0 {
                    return Err(Error::Config("bad geometric response model".into()));
                }
            }
        }
        for o in &self.overrides {
            if o.index >= self.design.participants {
                return Err(Error::Config(format!("override for missing participant {}", o.index)));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Participants

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParticipantResponse {
    Linear { intercept_deg: f64, slope_deg_per_diopter: f64 },
    Geometric { gain: f64, bias_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Physiology {
    pub participant_id: String,
    pub ipd: f64,
    pub response: ParticipantResponse,
    pub settle_time_s: f64,
    pub environment_order: Vec<Environment>,
}

impl Physiology {
    /// Noise-free steady-state GVA at `depth_m` in the Real environment.
    pub fn steady_gva(&self, depth_m: f64) -> f64 {
        match self.response {
            ParticipantResponse::Linear { intercept_deg, slope_deg_per_diopter } => {
                intercept_deg + slope_deg_per_diopter / depth_m
            }
            ParticipantResponse::Geometric { gain, bias_deg } => {
                gain * ideal_vergence(depth_m, self.ipd).expect("positive depth and ipd") + bias_deg
            }
        }
    }

    pub fn intercept_bias(&self) -> f64 {
        match self.response {
            ParticipantResponse::Linear { intercept_deg, .. } => intercept_deg,
            ParticipantResponse::Geometric { bias_deg, .. } => bias_deg,
        }
    }

    /// Slope of the least-squares line of steady GVA on diopters over `depths`.
    pub fn slope_implied(&self, depths_m: &[f64]) -> f64 {
        match self.response {
            ParticipantResponse::Linear { slope_deg_per_diopter, .. } => slope_deg_per_diopter,
            ParticipantResponse::Geometric { .. } => {
                let n = depths_m.len() as f64;
                let ds: Vec<f64> = depths_m.iter().map(|d| 1.0 / d).collect();
                let gs: Vec<f64> = depths_m.iter().map(|d| self.steady_gva(*d)).collect();
                let md = ds.iter().sum::<f64>() / n;
                let mg = gs.iter().sum::<f64>() / n;
                let sxy: f64 = ds.iter().zip(&gs).map(|(d, g)| (d - md) * (g - mg)).sum();
                let sxx: f64 = ds.iter().map(|d| (d - md).powi(2)).sum();
                sxy / sxx
            }
        }
    }
}

fn gauss<R: Rng>(rng: &mut R, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Normal draw, redrawn while below `min` (clamped after many misses).
fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64, min: f64) -> f64 {
    for _ in 0..1000 {
        let v = mean + gauss(rng, sd);
        if v >= min {
            return v;
        }
    }
    min
}

/// Independent stream per (participant, purpose).
fn stream(seed: u64, participant: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(participant as u64 * 4 + purpose);
    rng
}

const PHYSIOLOGY: u64 = 0;
const SEQUENCE: u64 = 1;
const TRIALS: u64 = 2;
const REPORTS: u64 = 3;

pub fn participant_id(index: usize) -> String {
    format!("P{:02}", index + 1)
}

pub fn draw_physiology(cfg: &CohortConfig, seed: u64, index: usize) -> Physiology {
    let mut rng = stream(seed, index, PHYSIOLOGY);
    let ov = cfg.overrides.iter().find(|o| o.index == index).copied().unwrap_or_default();
    let ipd_draw = (cfg.ipd.mean + gauss(&mut rng, cfg.ipd.sd)).clamp(cfg.ipd.min, cfg.ipd.max);
    let ipd = ov.ipd.unwrap_or(ipd_draw);
    let response = match cfg.response {
        ResponseModel::DiopterLinear {
            intercept_mean,
            intercept_sd,
            intercept_min,
            slope_mean,
            slope_sd,
            slope_min,
        } => {
            let a = truncated_normal(&mut rng, intercept_mean, intercept_sd, intercept_min);
            let b = truncated_normal(&mut rng, slope_mean, slope_sd, slope_min);
            ParticipantResponse::Linear {
                intercept_deg: ov.intercept_deg.unwrap_or(a),
                slope_deg_per_diopter: ov.slope_deg_per_diopter.unwrap_or(b),
            }
        }
        ResponseModel::Geometric { gain, bias_mean, bias_sd, bias_min } => {
            let bias = truncated_normal(&mut rng, bias_mean, bias_sd, bias_min);
            ParticipantResponse::Geometric {
                gain,
                bias_deg: ov.intercept_deg.unwrap_or(bias),
            }
        }
    };
    let settle_time_s = uniform(&mut rng, cfg.noise.settle_time_range_s);
    let environment_order = if cfg.design.environments == Environment::ALL {
        use Environment::*;
        let orders = [[Real, AR, VR], [AR, VR, Real], [VR, AR, Real]];
        orders[rng.random_range(0..orders.len())].to_vec()
    } else {
        let mut envs = cfg.design.environments.clone();
        envs.shuffle(&mut rng);
        envs
    };
    Physiology {
        participant_id: participant_id(index),
        ipd,
        response,
        settle_time_s,
        environment_order,
    }
}

// ---------------------------------------------------------------------------
// Trial sequences

/// A chained sequence of (start, end) depth pairs: each ordered pair occurs
/// `repetitions` times and every trial starts where the previous one ended.
///
/// Every depth has equal in- and out-degree in the pair multigraph, so an
/// Euler circuit exists; it is built with Hierholzer's algorithm over
/// shuffled adjacency lists, from a random first depth.
pub fn generate_sequence<R: Rng>(design: &ExperimentDesign, rng: &mut R) -> Vec<(f64, f64)> {
    let k = design.depths_m.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, out) in adj.iter_mut().enumerate() {
        for j in 0..k {
            if i != j {
                out.extend(std::iter::repeat_n(j, design.repetitions));
            }
        }
        out.shuffle(rng);
    }
    let start = rng.random_range(0..k);
    let mut stack = vec![start];
    let mut path = Vec::with_capacity(k * (k - 1) * design.repetitions + 1);
    while let Some(&v) = stack.last() {
        match adj[v].pop() {
            Some(u) => stack.push(u),
            None => path.push(stack.pop().expect("non-empty")),
        }
    }
    path.reverse();
    path.windows(2)
        .map(|w| (design.depths_m[w[0]], design.depths_m[w[1]]))
        .collect()
}

/// Sequences for every participant and environment, keyed by
/// (participant id, environment).
pub fn generate_sequences(design: &ExperimentDesign, seed: u64) -> BTreeMap<(String, Environment), Vec<(f64, f64)>> {
    let mut out = BTreeMap::new();
    for p in 0..design.participants {
        let mut rng = stream(seed, p, SEQUENCE);
        for env in &design.environments {
            out.insert((participant_id(p), *env), generate_sequence(design, &mut rng));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Trials

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Dropout,
    Spike,
    Outlier,
}

/// A run of `n_samples` consecutive artifact samples starting at `t_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactTag {
    pub participant_id: String,
    pub environment: Environment,
    pub trial: u32,
    pub t_s: f64,
    pub kind: ArtifactKind,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub trial_id: u32,
    pub start_depth_m: f64,
    pub end_depth_m: f64,
    pub stimulus_onset_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrial {
    pub record: TrialRecord,
    /// Noise-free steady-state GVA at the end depth, including offsets.
    pub steady_state_gva: f64,
    pub artifacts: Vec<ArtifactTag>,
}

/// Duration of a saccade of `amplitude_deg` from the main sequence.
fn saccade_duration_s(amplitude_deg: f64) -> f64 {
    (2.2 * amplitude_deg + 21.0) / 1000.0
}

pub fn simulate_trial<R: Rng>(
    spec: &TrialSpec,
    env: Environment,
    phys: &Physiology,
    cfg: &CohortConfig,
    rng: &mut R,
) -> SimulatedTrial {
    let design = &cfg.design;
    let noise = &cfg.noise;
    let offset = cfg.environment_effect.offset(env);
    let eyes = EyeConfig::symmetric(phys.ipd).expect("ipd validated");

    let start_gva = phys.steady_gva(spec.start_depth_m) + offset;
    let end_gva = phys.steady_gva(spec.end_depth_m) + offset + gauss(rng, noise.trial_offset_sd);
    // The head faces the new target; before the saccade the eyes are still
    // on the old one.
    let version0 = design.azimuth_of(spec.start_depth_m) - design.azimuth_of(spec.end_depth_m);
    let latency = uniform(rng, noise.saccade_latency_range_s);
    let sacc_start = spec.stimulus_onset_s + latency;
    let sacc_dur = saccade_duration_s(version0.abs());
    let tau = phys.settle_time_s / 3.0;
    let settle_end = 9.0 * tau;

    let period = 1.0 / design.sample_rate_hz;
    let n = ((design.pre_stimulus_s + design.post_stimulus_s) * design.sample_rate_hz).round() as usize;
    let t0 = spec.stimulus_onset_s - design.pre_stimulus_s;

    // Artifact plan: per-sample kind, then tags for runs.
    let mut kind: Vec<Option<ArtifactKind>> = vec![None; n];
    if noise.trial_loss_rate > 0.0 && rng.random::<f64>() < noise.trial_loss_rate {
        let from = ((sacc_start + sacc_dur + 0.1 - t0) / period).ceil().max(0.0) as usize;
        for k in kind.iter_mut().skip(from) {
            *k = Some(ArtifactKind::Dropout);
        }
    }
    if noise.dropout_rate > 0.0 {
        let p_start = noise.dropout_rate / noise.dropout_burst_mean;
        let max_len = (2.0 * noise.dropout_burst_mean - 1.0).round().max(1.0) as usize;
        let mut k = 0;
        while k < n {
            if rng.random::<f64>() < p_start {
                let len = rng.random_range(1..=max_len);
                for slot in kind.iter_mut().skip(k).take(len) {
                    *slot = Some(ArtifactKind::Dropout);
                }
                k += len;
            } else {
                k += 1;
            }
        }
    }
    let clear = |kind: &[Option<ArtifactKind>], k: usize, radius: usize| {
        let lo = k.saturating_sub(radius);
        let hi = (k + radius).min(n - 1);
        kind[lo..=hi].iter().all(Option::is_none)
    };
    if noise.spike_rate > 0.0 {
        for k in 1..n {
            if rng.random::<f64>() < noise.spike_rate && clear(&kind, k, 1) {
                kind[k] = Some(ArtifactKind::Spike);
            }
        }
    }
    if noise.outlier_rate > 0.0 {
        let steady_from = sacc_start + sacc_dur + phys.settle_time_s * 2.0;
        for k in 1..n {
            let t = t0 + k as f64 * period;
            if t >= steady_from && rng.random::<f64>() < noise.outlier_rate && clear(&kind, k, 2) {
                kind[k] = Some(ArtifactKind::Outlier);
            }
        }
    }

    let mut samples = Vec::with_capacity(n);
    for (k, art) in kind.iter().enumerate() {
        let t = t0 + k as f64 * period;
        let since = t - sacc_start;
        let version = if since <= 0.0 {
            version0
        } else {
            version0 * (1.0 - (since / sacc_dur).min(1.0))
        };
        let mut gva = if since <= 0.0 {
            start_gva
        } else if since < settle_end {
            // Exponential approach, rescaled to land exactly on the end
            // level after nine time constants.
            let done = (1.0 - (-since / tau).exp()) / (1.0 - (-settle_end / tau).exp());
            start_gva + (end_gva - start_gva) * done
        } else {
            end_gva
        };
        gva += gauss(rng, noise.sample_noise_sd);
        match art {
            Some(ArtifactKind::Spike) => gva += noise.spike_size_deg,
            Some(ArtifactKind::Outlier) => gva += noise.outlier_size_deg,
            _ => {}
        }
        let az = version + gauss(rng, noise.version_noise_sd);
        let (left, right) = rays_for_vergence(&eyes, az, gva);
        let (lc, rc) = if *art == Some(ArtifactKind::Dropout) {
            (0.0, 0.0)
        } else {
            (uniform(rng, noise.confidence_range), uniform(rng, noise.confidence_range))
        };
        samples.push(BinocularSample::new(t, left, right, lc, rc));
    }

    let mut artifacts = Vec::new();
    let mut k = 0;
    while k < n {
        if let Some(a) = kind[k] {
            let mut len = 1;
            while a == ArtifactKind::Dropout && k + len < n && kind[k + len] == Some(a) {
                len += 1;
            }
            artifacts.push(ArtifactTag {
                participant_id: phys.participant_id.clone(),
                environment: env,
                trial: spec.trial_id,
                t_s: t0 + k as f64 * period,
                kind: a,
                n_samples: len,
            });
            k += len;
        } else {
            k += 1;
        }
    }

    let landolt_dir = LandoltDirection::ALL[rng.random_range(0..4)];
    let b = &cfg.behavior;
    let (response_s, landolt_response) = if rng.random::<f64>() < b.timeout_rate {
        (None, LandoltResponse::Timeout)
    } else {
        let rt = uniform(rng, b.response_time_range_s);
        let answer = if rng.random::<f64>() < b.landolt_accuracy {
            landolt_dir
        } else {
            let others: Vec<LandoltDirection> =
                LandoltDirection::ALL.iter().copied().filter(|d| *d != landolt_dir).collect();
            others[rng.random_range(0..others.len())]
        };
        (Some(spec.stimulus_onset_s + rt), LandoltResponse::from(answer))
    };

    SimulatedTrial {
        record: TrialRecord {
            trial_id: spec.trial_id,
            participant_id: phys.participant_id.clone(),
            environment: env,
            start_depth_m: spec.start_depth_m,
            end_depth_m: spec.end_depth_m,
            stimulus_onset_s: spec.stimulus_onset_s,
            response_s,
            fixation_onset_s: None,
            landolt_dir,
            landolt_response,
            samples,
        },
        steady_state_gva: phys.steady_gva(spec.end_depth_m) + offset,
        artifacts,
    }
}

// ---------------------------------------------------------------------------
// Cohorts

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub environment: Environment,
    pub trials: Vec<SimulatedTrial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedParticipant {
    pub physiology: Physiology,
    /// In canonical environment order.
    pub sessions: Vec<Session>,
    pub subjective: Vec<SubjectiveReport>,
}

impl SimulatedParticipant {
    pub fn artifacts(&self) -> impl Iterator<Item = &ArtifactTag> {
        self.sessions.iter().flat_map(|s| s.trials.iter().flat_map(|t| t.artifacts.iter()))
    }
}

pub fn simulate_participant(cfg: &CohortConfig, seed: u64, index: usize) -> SimulatedParticipant {
    let phys = draw_physiology(cfg, seed, index);
    let design = &cfg.design;
    let mut seq_rng = stream(seed, index, SEQUENCE);
    let mut rng = stream(seed, index, TRIALS);
    let mut envs = design.environments.clone();
    envs.sort();
    envs.dedup();
    let mut sessions = Vec::new();
    for env in design.environments.iter() {
        let seq = generate_sequence(design, &mut seq_rng);
        let mut onset = 1.0;
        let mut trials = Vec::with_capacity(seq.len());
        for (i, (s, e)) in seq.into_iter().enumerate() {
            let spec = TrialSpec {
                trial_id: i as u32,
                start_depth_m: s,
                end_depth_m: e,
                stimulus_onset_s: onset,
            };
            let trial = simulate_trial(&spec, *env, &phys, cfg, &mut rng);
            let ended = trial.record.response_s.unwrap_or(onset + design.response_window_s);
            onset = ended.max(onset + design.post_stimulus_s) + uniform(&mut rng, design.iti_range_s);
            trials.push(trial);
        }
        sessions.push(Session { environment: *env, trials });
    }
    sessions.sort_by_key(|s| s.environment);

    let mut rep_rng = stream(seed, index, REPORTS);
    let sub = &cfg.subjective;
    let mut subjective = Vec::new();
    for env in &envs {
        for &depth in &design.depths_m {
            for rep in 1..=sub.repetitions {
                let d = sub.factor(*env) / depth * gauss(&mut rep_rng, sub.jitter_sd).exp();
                let unit = sub.units[rep_rng.random_range(0..sub.units.len())];
                subjective.push(SubjectiveReport {
                    participant_id: phys.participant_id.clone(),
                    environment: *env,
                    depth_m: depth,
                    report_value: 1.0 / d / unit.meters_per_unit(),
                    unit,
                    repetition: rep,
                });
            }
        }
    }

    SimulatedParticipant {
        physiology: phys,
        sessions,
        subjective,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantTruth {
    pub ipd: f64,
    pub intercept_bias: f64,
    pub slope_implied: f64,
    pub settle_time_s: f64,
    pub environment_order: Vec<Environment>,
}

/// Every true parameter and injected artifact of a simulated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLedger {
    pub seed: u64,
    pub participants: BTreeMap<String, ParticipantTruth>,
    pub artifacts: Vec<ArtifactTag>,
    pub env_offsets: BTreeMap<Environment, f64>,
    pub subjective_factors: BTreeMap<Environment, f64>,
}

fn truth_of(p: &SimulatedParticipant, cfg: &CohortConfig) -> ParticipantTruth {
    let ph = &p.physiology;
    ParticipantTruth {
        ipd: ph.ipd,
        intercept_bias: ph.intercept_bias(),
        slope_implied: ph.slope_implied(&cfg.design.depths_m),
        settle_time_s: ph.settle_time_s,
        environment_order: ph.environment_order.clone(),
    }
}

fn empty_ledger(cfg: &CohortConfig, seed: u64) -> GroundTruthLedger {
    GroundTruthLedger {
        seed,
        participants: BTreeMap::new(),
        artifacts: Vec::new(),
        env_offsets: cfg
            .design
            .environments
            .iter()
            .map(|e| (*e, cfg.environment_effect.offset(*e)))
            .collect(),
        subjective_factors: cfg
            .design
            .environments
            .iter()
            .map(|e| (*e, cfg.subjective.factor(*e)))
            .collect(),
    }
}

/// Simulate every participant in parallel and hand each to `f`, which may
/// reduce it (for example, run the pipeline and drop the raw samples).
/// Results are in participant order and independent of scheduling.
pub fn simulate_cohort_with<T, F>(cfg: &CohortConfig, seed: u64, f: F) -> Result<(Vec<T>, GroundTruthLedger)>
where
    T: Send,
    F: Fn(SimulatedParticipant) -> T + Sync,
{
    cfg.validate()?;
    let parts: Vec<(T, String, ParticipantTruth, Vec<ArtifactTag>)> = (0..cfg.design.participants)
        .into_par_iter()
        .map(|i| {
            let p = simulate_participant(cfg, seed, i);
            let truth = truth_of(&p, cfg);
            let arts = p.artifacts().cloned().collect();
            let id = p.physiology.participant_id.clone();
            (f(p), id, truth, arts)
        })
        .collect();
    let mut ledger = empty_ledger(cfg, seed);
    let mut out = Vec::with_capacity(parts.len());
    for (t, id, truth, arts) in parts {
        ledger.participants.insert(id, truth);
        ledger.artifacts.extend(arts);
        out.push(t);
    }
    Ok((out, ledger))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCohort {
    pub config: CohortConfig,
    pub participants: Vec<SimulatedParticipant>,
    pub ledger: GroundTruthLedger,
}

impl SimulatedCohort {
    pub fn trials(&self) -> impl Iterator<Item = &SimulatedTrial> {
        self.participants
            .iter()
            .flat_map(|p| p.sessions.iter().flat_map(|s| s.trials.iter()))
    }

    pub fn subjective(&self) -> impl Iterator<Item = &SubjectiveReport> {
        self.participants.iter().flat_map(|p| p.subjective.iter())
    }
}

pub fn simulate_cohort(cfg: &CohortConfig, seed: u64) -> Result<SimulatedCohort> {
    let (participants, ledger) = simulate_cohort_with(cfg, seed, |p| p)?;
    Ok(SimulatedCohort {
        config: cfg.clone(),
        participants,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VergenceMode;
    use crate::pipeline::{process_trial, PipelineConfig};
    use approx::assert_abs_diff_eq;
    use std::collections::HashMap;

    fn small(participants: usize, reps: usize) -> CohortConfig {
        let mut cfg = CohortConfig::reference();
        cfg.design.participants = participants;
        cfg.design.repetitions = reps;
        cfg
    }

    #[test]
    fn sequences_chain_and_balance() {
        let design = ExperimentDesign::default();
        let seqs = generate_sequences(&ExperimentDesign { participants: 4, ..design.clone() }, 11);
        assert_eq!(seqs.len(), 12);
        for seq in seqs.values() {
            assert_eq!(seq.len(), 72);
            for w in seq.windows(2) {
                assert_eq!(w[0].1, w[1].0);
            }
            let mut hist: HashMap<(u64, u64), usize> = HashMap::new();
            for (s, e) in seq {
                assert_ne!(s, e);
                *hist.entry((s.to_bits(), e.to_bits())).or_default() += 1;
            }
            assert_eq!(hist.len(), 12);
            assert!(hist.values().all(|&c| c == 6));
        }
        assert_eq!(seqs, generate_sequences(&ExperimentDesign { participants: 4, ..design }, 11));
    }

    #[test]
    fn first_depth_varies_with_seed() {
        let design = ExperimentDesign::default();
        let firsts: std::collections::BTreeSet<u64> = (0..40)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                generate_sequence(&design, &mut rng)[0].0.to_bits()
            })
            .collect();
        assert_eq!(firsts.len(), 4);
    }

    fn fixed(intercept: f64, slope: f64) -> Physiology {
        Physiology {
            participant_id: "P01".into(),
            ipd: 0.0648,
            response: ParticipantResponse::Linear {
                intercept_deg: intercept,
                slope_deg_per_diopter: slope,
            },
            settle_time_s: 0.25,
            environment_order: Environment::ALL.to_vec(),
        }
    }

    fn window_mean(trial: &SimulatedTrial) -> f64 {
        let (_, out) = process_trial(trial.record.clone(), &PipelineConfig::default());
        out.mean_gva.expect("valid trial")
    }

    fn run(phys: &Physiology, cfg: &CohortConfig, env: Environment, s: f64, e: f64) -> SimulatedTrial {
        let spec = TrialSpec {
            trial_id: 0,
            start_depth_m: s,
            end_depth_m: e,
            stimulus_onset_s: 1.0,
        };
        simulate_trial(&spec, env, phys, cfg, &mut ChaCha8Rng::seed_from_u64(5))
    }

    #[test]
    fn geometric_steady_state_matches_ideal_vergence() {
        let cfg = CohortConfig::geometric().noiseless();
        let phys = Physiology {
            response: ParticipantResponse::Geometric { gain: 1.0, bias_deg: 0.0 },
            ..fixed(0.0, 0.0)
        };
        let t = run(&phys, &cfg, Environment::Real, 4.0, 0.25);
        assert_abs_diff_eq!(t.steady_state_gva, 14.768747, epsilon = 1e-6);
        assert_abs_diff_eq!(window_mean(&t), 14.768747, epsilon = 1e-6);
    }

    #[test]
    fn bias_and_environment_offsets_are_additive() {
        let mut cfg = CohortConfig::reference().noiseless();
        cfg.environment_effect = EnvironmentEffect::default();
        for (s, e) in [(4.0, 0.25), (0.25, 1.5), (0.75, 4.0)] {
            let base = window_mean(&run(&fixed(10.0, 1.7), &cfg, Environment::Real, s, e));
            let biased = window_mean(&run(&fixed(15.0, 1.7), &cfg, Environment::Real, s, e));
            let vr = window_mean(&run(&fixed(10.0, 1.7), &cfg, Environment::VR, s, e));
            assert_abs_diff_eq!(biased - base, 5.0, epsilon = 1e-9);
            assert_abs_diff_eq!(vr - base, -1.3, epsilon = 1e-9);
            assert_abs_diff_eq!(base, 10.0 + 1.7 / e, epsilon = 1e-9);
        }
    }

    #[test]
    fn steady_state_ignores_start_depth() {
        let cfg = CohortConfig::reference().noiseless();
        let phys = fixed(12.0, 2.0);
        let means: Vec<f64> = [0.25, 0.75, 4.0]
            .iter()
            .map(|&s| window_mean(&run(&phys, &cfg, Environment::AR, s, 1.5)))
            .collect();
        for m in &means {
            assert_abs_diff_eq!(*m, means[0], epsilon = 1e-9);
        }
    }

    #[test]
    fn noiseless_cohort_loses_no_samples() {
        let cfg = small(2, 1).noiseless();
        let cohort = simulate_cohort(&cfg, 3).unwrap();
        assert!(cohort.ledger.artifacts.is_empty());
        for t in cohort.trials() {
            let (_, out) = process_trial(t.record.clone(), &PipelineConfig::default());
            assert_eq!(out.counts.excluded(), 0);
            assert!(out.valid, "{:?}", out.flaw);
            assert_abs_diff_eq!(out.mean_gva.unwrap(), t.steady_state_gva, epsilon = 1e-9);
        }
    }

    #[test]
    fn design_arithmetic_and_determinism() {
        let cfg = small(2, 6);
        let a = simulate_cohort(&cfg, 9).unwrap();
        assert_eq!(a.trials().count(), 2 * 3 * 72);
        assert_eq!(a.subjective().count(), 2 * 3 * 4 * 3);
        let b = simulate_cohort(&cfg, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate_cohort(&cfg, 10).unwrap();
        assert_ne!(a.ledger, c.ledger);
        assert_eq!(CohortConfig::reference().design.trials_per_session() * 3 * 13, 2808);
    }

    #[test]
    fn trials_do_not_overlap_in_time() {
        let cohort = simulate_cohort(&small(1, 2), 4).unwrap();
        for s in &cohort.participants[0].sessions {
            for w in s.trials.windows(2) {
                let end = w[0].record.samples.last().unwrap().t_s;
                let next = w[1].record.samples[0].t_s;
                assert!(next > end + 2.4, "{end} -> {next}");
            }
        }
    }

    #[test]
    fn ledger_tags_every_artifact_sample() {
        let mut cfg = small(1, 1);
        cfg.noise.sample_noise_sd = 0.0;
        cfg.noise.outlier_rate = 0.004;
        let cohort = simulate_cohort(&cfg, 21).unwrap();
        let mut tagged = 0;
        for t in cohort.trials() {
            let zero_conf = t.record.samples.iter().filter(|s| s.left_conf == 0.0).count();
            let dropouts: usize = t
                .artifacts
                .iter()
                .filter(|a| a.kind == ArtifactKind::Dropout)
                .map(|a| a.n_samples)
                .sum();
            assert_eq!(zero_conf, dropouts);
            tagged += t.artifacts.len();
        }
        assert_eq!(tagged, cohort.ledger.artifacts.len());
        let kinds: std::collections::BTreeSet<ArtifactKind> =
            cohort.ledger.artifacts.iter().map(|a| a.kind).collect();
        assert_eq!(kinds.len(), 3);
    }

    #[test]
    fn subjective_reports_follow_factors() {
        let mut cfg = small(1, 1);
        cfg.subjective.jitter_sd = 0.0;
        let p = simulate_participant(&cfg, 2, 0);
        for r in &p.subjective {
            let want = cfg.subjective.factor(r.environment) / r.depth_m;
            assert_abs_diff_eq!(r.reported_diopters().unwrap(), want, epsilon = 1e-9);
            assert!((1..=3).contains(&r.repetition));
        }
    }

    #[test]
    fn spikes_trip_the_velocity_filter() {
        let mut cfg = CohortConfig::reference().noiseless();
        cfg.noise.spike_rate = 0.01;
        let t = run(&fixed(15.0, 1.7), &cfg, Environment::Real, 0.75, 0.25);
        assert!(!t.artifacts.is_empty());
        let (rec, _) = process_trial(t.record.clone(), &PipelineConfig::default());
        for a in &t.artifacts {
            let s = rec.samples.iter().find(|s| s.t_s == a.t_s).unwrap();
            assert!(!s.is_valid());
            assert!(s.raw_gva(VergenceMode::Full3d).unwrap() > 40.0);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = CohortConfig::reference();
        cfg.noise.dropout_rate = 1.5;
        assert_eq!(cfg.validate().unwrap_err().kind(), "config");
        let mut cfg = CohortConfig::reference();
        cfg.design.depths_m = vec![1.0];
        assert!(simulate_cohort(&cfg, 1).is_err());
        assert!(CohortConfig::preset("nope").is_err());
    }
}
