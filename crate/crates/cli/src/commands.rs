use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use vergescope::analysis::{analyze as run_analysis, cell_observations, gva_rows, AnalysisOptions, AnalysisReport, GvaSource};
use vergescope::calibration::{estimate_depth, fit_models, ParticipantModel};
use vergescope::estimate::{estimate_series, StreamEstimator, ESTIMATE_HEADER};
use vergescope::geometry::VergenceMode;
use vergescope::io::{
    list_manifests, load_session, parse_gaze_row, read_gva_table_file, read_json, read_subjective_file,
    to_report_json, write_csv_file, write_data_json, write_report_json, write_simulated_dataset, GAZE_HEADER,
};
use vergescope::pipeline::{cascade_validity, process_trials, GateConfig, PipelineConfig};
use vergescope::report::render_report;
use vergescope::stats::Criterion;
use vergescope::synth::{CohortConfig, ExperimentDesign};
use vergescope::{Error, Result};

use crate::{AnalyzeArgs, CriterionArg, EstimateArgs, FitArgs, ModeArg, PreprocessArgs, ReportArgs, SimulateArgs, SourceArg};

pub const SEED_ENV: &str = "VERGESCOPE_SEED";
pub const GVA_TABLE_FILE: &str = "gva_table.csv";
pub const VALIDITY_FILE: &str = "validity.json";

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// A design file is either a full cohort config or just the experiment
/// design; in both cases it patches the preset.
fn cohort_config(args: &SimulateArgs) -> Result<CohortConfig> {
    let mut cfg = serde_json::to_value(CohortConfig::preset(&args.preset)?)?;
    if let Some(path) = &args.design {
        let patch: Value = read_json(path)?;
        let Value::Object(obj) = &patch else {
            return Err(Error::Config("design file must hold a JSON object".into()));
        };
        let cohort_keys = serde_json::to_value(CohortConfig::default())?;
        let is_cohort = obj.keys().any(|k| cohort_keys.get(k).is_some());
        let is_design = obj.keys().any(|k| serde_json::to_value(ExperimentDesign::default()).ok().and_then(|d| d.get(k).cloned()).is_some());
        if is_cohort && is_design {
            return Err(Error::Config("design file mixes cohort and design fields".into()));
        }
        if is_cohort {
            merge(&mut cfg, patch);
        } else {
            merge(&mut cfg, json!({ "design": patch }));
        }
    }
    let cfg: CohortConfig = serde_json::from_value(cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn seed(flag: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{s}`"))),
        Err(_) => Ok(flag),
    }
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = cohort_config(&args)?;
    let seed = seed(args.seed)?;
    let ledger = write_simulated_dataset(&args.out, &cfg, seed)?;
    let summary = json!({
        "seed": seed,
        "participants": cfg.design.participants,
        "trials": cfg.design.participants * cfg.design.environments.len() * cfg.design.trials_per_session(),
        "artifacts": ledger.artifacts.len(),
    });
    write_output(None, &to_report_json(&summary)?)
}

fn pipeline_config(args: &PreprocessArgs) -> PipelineConfig {
    PipelineConfig {
        confidence_threshold: args.confidence,
        max_velocity_deg_s: args.max_velocity,
        outlier_k_sd: args.sd_k,
        vergence_mode: match args.vergence_mode {
            ModeArg::Full3d => VergenceMode::Full3d,
            ModeArg::Horizontal => VergenceMode::Horizontal,
        },
        gates: GateConfig {
            min_valid_trials_per_pair: args.min_pair_trials,
            min_valid_pairs_per_environment: args.min_env_pairs,
            required_valid_environments: args.required_envs,
        },
        ..PipelineConfig::default()
    }
}

pub fn preprocess(args: PreprocessArgs) -> Result<()> {
    let cfg = pipeline_config(&args);
    if !(0.0..=1.0).contains(&cfg.confidence_threshold) || !(cfg.max_velocity_deg_s > 0.0) || !(cfg.outlier_k_sd > 0.0) {
        return Err(Error::Config("confidence must be in [0, 1]; velocity and SD limits positive".into()));
    }
    let manifests = list_manifests(&args.input)?;
    if manifests.is_empty() {
        return Err(Error::Config(format!("no session manifests under {}", args.input.display())));
    }
    // One session in memory at a time; trials within it run in parallel.
    let mut outcomes = Vec::new();
    for m in &manifests {
        outcomes.extend(process_trials(load_session(m)?, &cfg));
    }
    let report = cascade_validity(&outcomes, &cfg.gates);
    let rows = gva_rows(&outcomes, &report);
    let out = args.out.unwrap_or(args.input);
    fs::create_dir_all(&out)?;
    write_csv_file(&out.join(GVA_TABLE_FILE), &rows)?;
    write_report_json(&out.join(VALIDITY_FILE), &report)?;
    let summary = json!({
        "trials": rows.len(),
        "included_trials": rows.iter().filter(|r| r.included).count(),
        "excluded_sample_percent": report.excluded_percent,
        "retained_participants": report.retained_participants,
    });
    write_output(None, &to_report_json(&summary)?)
}

pub fn fit(args: FitArgs) -> Result<()> {
    let rows = read_gva_table_file(&args.gva_table)?;
    let models: Vec<ParticipantModel> = fit_models(&cell_observations(&rows))?.into_values().collect();
    match &args.out {
        Some(p) => write_data_json(p, &models),
        None => write_output(None, &vergescope::io::json::to_data_json(&models)?),
    }
}

fn model_map(models: Vec<ParticipantModel>) -> BTreeMap<String, ParticipantModel> {
    models.into_iter().map(|m| (m.participant_id.clone(), m)).collect()
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    let rows = read_gva_table_file(&args.gva_table)?;
    let models = match &args.models {
        Some(p) => Some(model_map(read_json(p)?)),
        None => None,
    };
    let reports = match (&args.subjective, args.logratio) {
        (Some(p), true) => Some(read_subjective_file(p)?),
        _ => None,
    };
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::Config(format!("alpha must be in (0, 1), got {}", args.alpha)));
    }
    let opts = AnalysisOptions {
        normalized: args.normalized,
        stability: args.stability,
        criterion: match args.criterion {
            CriterionArg::FTest => Criterion::FTest { alpha: args.alpha },
            CriterionArg::Aic => Criterion::Aic,
        },
        log_ratio_source: match args.log_ratio_source {
            SourceArg::Raw => GvaSource::Raw,
            SourceArg::Normalized => GvaSource::Normalized,
        },
    };
    let report = run_analysis(&rows, models.as_ref(), reports.as_deref(), &opts)?;
    write_output(args.out.as_deref(), &to_report_json(&report)?)
}

fn load_model(args: &EstimateArgs) -> Result<ParticipantModel> {
    let v: Value = read_json(&args.model)?;
    let models: Vec<ParticipantModel> = match v {
        Value::Array(_) => serde_json::from_value(v)?,
        other => vec![serde_json::from_value(other)?],
    };
    match &args.participant {
        Some(id) => models
            .into_iter()
            .find(|m| &m.participant_id == id)
            .ok_or_else(|| Error::Lookup(format!("no model for participant {id}"))),
        None if models.len() == 1 => Ok(models.into_iter().next().expect("one model")),
        None => Err(Error::Config("model file holds several models; pick one with --participant".into())),
    }
}

pub fn estimate(args: EstimateArgs) -> Result<()> {
    let model = load_model(&args)?;
    if let Some(g) = args.gva {
        let d = estimate_depth(g, &model)?;
        let v = json!({"gva_deg": g, "diopters": d.diopters, "depth_m": d.meters});
        return write_output(None, &to_report_json(&v)?);
    }
    let cfg = PipelineConfig {
        confidence_threshold: args.confidence,
        max_velocity_deg_s: args.max_velocity,
        outlier_k_sd: args.sd_k,
        ..PipelineConfig::default()
    };
    let stdin = io::stdin().lock();
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    writeln!(out, "{ESTIMATE_HEADER}")?;
    let mut stream = StreamEstimator::new(&model, &cfg);
    let mut batch = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (i, line) in stdin.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || (line_no == 1 && trimmed.starts_with(GAZE_HEADER[0])) {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        let s = parse_gaze_row(&fields, line_no)?;
        if s.t_s < last_t {
            return Err(Error::Parse {
                line: line_no,
                message: format!("time goes backwards: {} after {last_t}", s.t_s),
            });
        }
        last_t = s.t_s;
        if args.stream {
            writeln!(out, "{}", stream.push(&s).to_csv_line())?;
            out.flush()?;
        } else {
            batch.push(s);
        }
    }
    for e in estimate_series(batch, &model, &cfg) {
        writeln!(out, "{}", e.to_csv_line())?;
    }
    out.flush()?;
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<()> {
    let analysis: AnalysisReport = read_json(&args.analysis)?;
    let files = render_report(&analysis, &args.out)?;
    let names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
        .collect();
    write_output(None, &to_report_json(&json!({ "files": names }))?)
}
