//! File formats: gaze CSV, session manifests, result tables and JSON.

pub mod dataset;
pub mod gaze;
pub mod json;
pub mod manifest;
pub mod tables;

pub use dataset::{list_manifests, write_simulated_dataset};
pub use gaze::{parse_gaze_csv, parse_gaze_row, read_gaze_csv, write_gaze_csv, GAZE_HEADER};
pub use json::{read_json, round_sig, to_report_json, write_data_json, write_report_json};
pub use manifest::{load_session, read_manifest, write_session, ManifestTrial, TrialManifest};
pub use tables::{read_gva_table, read_gva_table_file, read_subjective, read_subjective_file, write_csv_file};
