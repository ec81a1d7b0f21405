//! Per-sample depth estimation from a calibrated participant model.
//!
//! Batch mode runs the full cleaning cascade over the whole recording.
//! Streaming mode only has the past, so it applies the confidence and
//! velocity filters and skips the SD outlier filter.

use serde::{Deserialize, Serialize};

use crate::calibration::{estimate_depth, ParticipantModel};
use crate::geometry::VergenceMode;
use crate::pipeline::{confidence_filter, outlier_filter, velocity_filter, BinocularSample, PipelineConfig, TrialRecord};
use crate::types::{Environment, LandoltDirection, LandoltResponse};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleEstimate {
    pub t_s: f64,
    /// `None` when the sample was filtered out.
    pub gva_deg: Option<f64>,
    /// `None` when filtered out or outside the calibrated range.
    pub depth_m: Option<f64>,
}

impl SampleEstimate {
    fn of(t_s: f64, gva: Option<f64>, model: &ParticipantModel) -> Self {
        Self {
            t_s,
            gva_deg: gva,
            depth_m: gva.and_then(|g| estimate_depth(g, model).ok()).map(|d| d.meters),
        }
    }

    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        format!("{},{},{}", self.t_s, opt(self.gva_deg), opt(self.depth_m))
    }
}

pub const ESTIMATE_HEADER: &str = "t_s,gva_deg,depth_m";

pub struct StreamEstimator<'a> {
    model: &'a ParticipantModel,
    confidence_threshold: f64,
    max_velocity_deg_s: f64,
    mode: VergenceMode,
    prev: Option<(f64, f64)>,
}

impl<'a> StreamEstimator<'a> {
    pub fn new(model: &'a ParticipantModel, cfg: &PipelineConfig) -> Self {
        Self {
            model,
            confidence_threshold: cfg.confidence_threshold,
            max_velocity_deg_s: cfg.max_velocity_deg_s,
            mode: cfg.vergence_mode,
            prev: None,
        }
    }

    /// Same rules as the batch velocity filter, applied one sample at a time.
    pub fn push(&mut self, s: &BinocularSample) -> SampleEstimate {
        let g = if s.left_conf.min(s.right_conf) < self.confidence_threshold {
            None
        } else {
            s.gva(self.mode)
        };
        let Some(g) = g else {
            self.prev = None;
            return SampleEstimate::of(s.t_s, None, self.model);
        };
        let accepted = match self.prev {
            Some((tp, gp)) if s.t_s > tp => ((g - gp) / (s.t_s - tp)).abs() <= self.max_velocity_deg_s,
            _ => true,
        };
        if accepted {
            self.prev = Some((s.t_s, g));
            SampleEstimate::of(s.t_s, Some(g), self.model)
        } else {
            self.prev = None;
            SampleEstimate::of(s.t_s, None, self.model)
        }
    }
}

/// Full cascade over a whole recording, then per-sample estimates.
pub fn estimate_series(samples: Vec<BinocularSample>, model: &ParticipantModel, cfg: &PipelineConfig) -> Vec<SampleEstimate> {
    let rec = TrialRecord {
        trial_id: 0,
        participant_id: model.participant_id.clone(),
        environment: Environment::Real,
        start_depth_m: 1.0,
        end_depth_m: 1.0,
        stimulus_onset_s: 0.0,
        response_s: None,
        fixation_onset_s: None,
        landolt_dir: LandoltDirection::Left,
        landolt_response: LandoltResponse::Timeout,
        samples,
    };
    let rec = confidence_filter(rec, cfg.confidence_threshold);
    let rec = velocity_filter(rec, cfg.max_velocity_deg_s, cfg.vergence_mode);
    let rec = outlier_filter(rec, cfg.outlier_k_sd, cfg.vergence_mode);
    rec.samples
        .iter()
        .map(|s| SampleEstimate::of(s.t_s, s.gva(cfg.vergence_mode), model))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::fit_participant;
    use crate::geometry::{rays_for_vergence, EyeConfig};
    use approx::assert_relative_eq;

    fn model() -> ParticipantModel {
        // a = 17.5, b = 1.7 over the four standard depths.
        let pts: Vec<(f64, f64)> = [4.0, 1.0 / 0.75, 1.0 / 1.5, 0.25]
            .iter()
            .map(|d| (*d, 17.5 + 1.7 * d))
            .collect();
        fit_participant("P01", &pts).unwrap()
    }

    fn sample(t: f64, gva: f64, conf: f64) -> BinocularSample {
        let (l, r) = rays_for_vergence(&EyeConfig::symmetric(0.0648).unwrap(), 0.0, gva);
        BinocularSample::new(t, l, r, conf, conf)
    }

    #[test]
    fn stream_inverts_the_model() {
        let m = model();
        let cfg = PipelineConfig::default();
        let mut est = StreamEstimator::new(&m, &cfg);
        let e = est.push(&sample(0.0, 24.3, 1.0));
        assert_relative_eq!(e.gva_deg.unwrap(), 24.3, epsilon = 1e-9);
        assert_relative_eq!(e.depth_m.unwrap(), 0.25, epsilon = 1e-9);
        assert_eq!(e.to_csv_line().split(',').count(), 3);
    }

    #[test]
    fn stream_drops_low_confidence_and_spikes() {
        let m = model();
        let cfg = PipelineConfig::default();
        let mut est = StreamEstimator::new(&m, &cfg);
        let out: Vec<_> = [
            sample(0.000, 20.0, 1.0),
            sample(0.005, 20.0, 0.5),
            sample(0.010, 20.0, 1.0),
            sample(0.015, 60.0, 1.0),
            sample(0.020, 20.0, 1.0),
        ]
        .iter()
        .map(|s| est.push(s))
        .collect();
        let kept: Vec<bool> = out.iter().map(|e| e.gva_deg.is_some()).collect();
        assert_eq!(kept, [true, false, true, false, true]);
        assert_eq!(out[1].to_csv_line(), "0.005,,");
    }

    #[test]
    fn out_of_range_gva_has_no_depth() {
        let m = model();
        let e = SampleEstimate::of(0.0, Some(10.0), &m);
        assert!(e.gva_deg.is_some() && e.depth_m.is_none());
    }

    #[test]
    fn batch_matches_stream_without_outliers() {
        let m = model();
        let cfg = PipelineConfig::default();
        let samples: Vec<_> = (0..50).map(|i| sample(i as f64 * 0.005, 19.0 + 0.01 * (i % 5) as f64, 0.9)).collect();
        let mut est = StreamEstimator::new(&m, &cfg);
        let stream: Vec<_> = samples.iter().map(|s| est.push(s)).collect();
        assert_eq!(estimate_series(samples, &m, &cfg), stream);
    }
}
