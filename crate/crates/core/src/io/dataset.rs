//! On-disk layout of a recorded or simulated dataset:
//!
//! ```text
//! <dir>/cohort.json                 simulation config (simulated data only)
//! <dir>/ledger.json                 ground truth (simulated data only)
//! <dir>/subjective.csv              verbal depth reports
//! <dir>/sessions/<pid>_<env>.gaze.csv
//! <dir>/sessions/<pid>_<env>.manifest.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::io::json::{write_data_json, write_report_json};
use crate::io::manifest::write_session;
use crate::io::tables::write_csv_file;
use crate::synth::{simulate_cohort_with, CohortConfig, GroundTruthLedger, SimulatedParticipant};
use crate::types::SubjectiveReport;

pub const SESSIONS_DIR: &str = "sessions";
pub const SUBJECTIVE_FILE: &str = "subjective.csv";
pub const LEDGER_FILE: &str = "ledger.json";
pub const COHORT_FILE: &str = "cohort.json";

pub fn write_participant(dir: &Path, p: &SimulatedParticipant, depths_m: &[f64]) -> Result<()> {
    let sessions = dir.join(SESSIONS_DIR);
    for s in &p.sessions {
        let records: Vec<_> = s.trials.iter().map(|t| t.record.clone()).collect();
        write_session(&sessions, &records, depths_m)?;
    }
    Ok(())
}

/// Simulate a cohort straight to disk, one participant at a time per worker.
pub fn write_simulated_dataset(dir: &Path, cfg: &CohortConfig, seed: u64) -> Result<GroundTruthLedger> {
    fs::create_dir_all(dir.join(SESSIONS_DIR))?;
    let (written, ledger) = simulate_cohort_with(cfg, seed, |p| {
        write_participant(dir, &p, &cfg.design.depths_m).map(|_| p.subjective)
    })?;
    let mut subjective: Vec<SubjectiveReport> = Vec::new();
    for w in written {
        subjective.extend(w?);
    }
    write_csv_file(&dir.join(SUBJECTIVE_FILE), &subjective)?;
    write_report_json(&dir.join(LEDGER_FILE), &ledger)?;
    write_data_json(&dir.join(COHORT_FILE), cfg)?;
    Ok(ledger)
}

/// Manifest paths under `<dir>/sessions`, sorted by file name.
pub fn list_manifests(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir.join(SESSIONS_DIR))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    out.sort();
    Ok(out)
}
