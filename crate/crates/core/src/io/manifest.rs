//! Per-session trial manifests. Each trial points at a contiguous row range
//! of the session's gaze CSV.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::gaze::{parse_gaze_csv, write_gaze_csv};
use crate::pipeline::TrialRecord;
use crate::types::{depth_key, Environment, LandoltDirection, LandoltResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub trial_id: u32,
    pub start_depth_m: f64,
    pub end_depth_m: f64,
    pub stimulus_onset_s: f64,
    pub response_s: Option<f64>,
    pub landolt_dir: LandoltDirection,
    pub landolt_response: LandoltResponse,
    pub gaze_file: String,
    /// Zero-based index of the trial's first data row in `gaze_file`.
    pub first_row: usize,
    pub n_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub participant_id: String,
    pub environment: Environment,
    /// Declared depth set; every trial depth must come from it.
    pub depths_m: Vec<f64>,
    pub trials: Vec<ManifestTrial>,
}

impl TrialManifest {
    /// Depth membership always; start-equals-previous-end when `chaining`.
    pub fn validate(&self, chaining: bool) -> Result<()> {
        let declared: Vec<i64> = self.depths_m.iter().map(|d| depth_key(*d)).collect();
        for t in &self.trials {
            for d in [t.start_depth_m, t.end_depth_m] {
                if !declared.contains(&depth_key(d)) {
                    return Err(Error::Config(format!(
                        "trial {}: depth {d} m is not in the declared set",
                        t.trial_id
                    )));
                }
            }
        }
        if chaining {
            for w in self.trials.windows(2) {
                if depth_key(w[0].end_depth_m) != depth_key(w[1].start_depth_m) {
                    return Err(Error::Config(format!(
                        "trial {} starts at {} m but the previous trial ended at {} m",
                        w[1].trial_id, w[1].start_depth_m, w[0].end_depth_m
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn session_stem(participant_id: &str, env: Environment) -> String {
    format!("{participant_id}_{env}")
}

/// Write a session's gaze CSV and manifest into `dir`; returns the manifest.
pub fn write_session(dir: &Path, trials: &[TrialRecord], depths_m: &[f64]) -> Result<TrialManifest> {
    let first = trials
        .first()
        .ok_or_else(|| Error::DegenerateInput("session without trials".into()))?;
    let stem = session_stem(&first.participant_id, first.environment);
    let gaze_file = format!("{stem}.gaze.csv");
    let mut row = 0;
    let mut entries = Vec::with_capacity(trials.len());
    for t in trials {
        if t.participant_id != first.participant_id || t.environment != first.environment {
            return Err(Error::Config("a session holds one participant and one environment".into()));
        }
        entries.push(ManifestTrial {
            trial_id: t.trial_id,
            start_depth_m: t.start_depth_m,
            end_depth_m: t.end_depth_m,
            stimulus_onset_s: t.stimulus_onset_s,
            response_s: t.response_s,
            landolt_dir: t.landolt_dir,
            landolt_response: t.landolt_response,
            gaze_file: gaze_file.clone(),
            first_row: row,
            n_rows: t.samples.len(),
        });
        row += t.samples.len();
    }
    let manifest = TrialManifest {
        participant_id: first.participant_id.clone(),
        environment: first.environment,
        depths_m: depths_m.to_vec(),
        trials: entries,
    };
    write_gaze_csv(
        BufWriter::new(File::create(dir.join(&gaze_file))?),
        trials.iter().flat_map(|t| t.samples.iter()),
    )?;
    let f = BufWriter::new(File::create(dir.join(format!("{stem}.manifest.json")))?);
    serde_json::to_writer_pretty(f, &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<TrialManifest> {
    let m: TrialManifest = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    m.validate(false)?;
    Ok(m)
}

/// Rebuild the session's trial records from a manifest and its gaze files.
pub fn load_session(manifest_path: &Path) -> Result<Vec<TrialRecord>> {
    let m = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut cache: Option<(String, Vec<crate::pipeline::BinocularSample>)> = None;
    let mut out = Vec::with_capacity(m.trials.len());
    for t in &m.trials {
        if cache.as_ref().map(|(f, _)| f != &t.gaze_file).unwrap_or(true) {
            cache = Some((t.gaze_file.clone(), parse_gaze_csv(&dir.join(&t.gaze_file))?));
        }
        let samples = &cache.as_ref().expect("gaze file loaded").1;
        let end = t.first_row + t.n_rows;
        if end > samples.len() {
            return Err(Error::Config(format!(
                "trial {}: rows {}..{end} exceed the {} rows of {}",
                t.trial_id,
                t.first_row,
                samples.len(),
                t.gaze_file
            )));
        }
        out.push(TrialRecord {
            trial_id: t.trial_id,
            participant_id: m.participant_id.clone(),
            environment: m.environment,
            start_depth_m: t.start_depth_m,
            end_depth_m: t.end_depth_m,
            stimulus_onset_s: t.stimulus_onset_s,
            response_s: t.response_s,
            fixation_onset_s: None,
            landolt_dir: t.landolt_dir,
            landolt_response: t.landolt_response,
            samples: samples[t.first_row..end].to_vec(),
        });
    }
    Ok(out)
}
