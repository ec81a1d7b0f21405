//! SVG scatter plots and plain-text tables rendered from an analysis report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::analysis::{AnalysisReport, RegressionReport};
use crate::error::Result;
use crate::types::Environment;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Points,
    Line,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub color: String,
    pub mark: Mark,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, color: &str, mark: Mark, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            color: color.into(),
            mark,
            points,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Roughly `target` round-numbered ticks covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{:.3}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return None;
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    Some((lo - pad, hi + pad))
}

impl Plot {
    pub fn to_svg(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = bounds(all().map(|p| p.0)).unwrap_or((0.0, 1.0));
        let (y0, y1) = bounds(all().map(|p| p.1)).unwrap_or((0.0, 1.0));
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;

        let mut o = String::new();
        let _ = writeln!(
            o,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(o, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            o,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            MARGIN_L + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            o,
            r##"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
        );
        for t in nice_ticks(x0, x1, 6) {
            let x = sx(t);
            let _ = writeln!(
                o,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                MARGIN_T + ph,
                MARGIN_T + ph + 5.0,
                MARGIN_T + ph + 18.0,
                tick_label(t)
            );
        }
        for t in nice_ticks(y0, y1, 6) {
            let y = sy(t);
            let _ = writeln!(
                o,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_L}" y2="{y:.2}" stroke="#333"/><line x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#eee"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                MARGIN_L - 5.0,
                MARGIN_L + pw,
                MARGIN_L - 8.0,
                y + 4.0,
                tick_label(t)
            );
        }
        let _ = writeln!(
            o,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            o,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            MARGIN_T + ph / 2.0,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );

        for s in &self.series {
            match s.mark {
                Mark::Points => {
                    for (x, y) in s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                        let _ = writeln!(
                            o,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.6"/>"#,
                            sx(*x),
                            sy(*y),
                            s.color
                        );
                    }
                }
                Mark::Line => {
                    let pts: Vec<String> = s
                        .points
                        .iter()
                        .filter(|p| p.0.is_finite() && p.1.is_finite())
                        .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                        .collect();
                    let _ = writeln!(
                        o,
                        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                        pts.join(" "),
                        s.color
                    );
                }
            }
        }

        let mut seen = Vec::new();
        for s in self.series.iter().filter(|s| !s.name.is_empty()) {
            if seen.contains(&&s.name) {
                continue;
            }
            seen.push(&s.name);
            let y = MARGIN_T + 10.0 + 18.0 * (seen.len() - 1) as f64;
            let x = WIDTH - MARGIN_R + 15.0;
            let _ = writeln!(
                o,
                r#"<rect x="{x}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{}" y="{:.2}">{}</text>"#,
                y - 9.0,
                s.color,
                x + 15.0,
                y,
                escape(&s.name)
            );
        }
        o.push_str("</svg>\n");
        o
    }
}

fn env_color(env: Environment) -> &'static str {
    match env {
        Environment::Real => PALETTE[0],
        Environment::AR => PALETTE[1],
        Environment::VR => PALETTE[2],
    }
}

fn simple_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if n < 2.0 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let b = sxy / sxx;
    Some((my - b * mx, b))
}

fn line_over(points: &[(f64, f64)], a: f64, b: f64) -> Vec<(f64, f64)> {
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    vec![(lo, a + b * lo), (hi, a + b * hi)]
}

fn gva_by_depth(report: &AnalysisReport) -> Plot {
    let mut series = Vec::new();
    let mut all = Vec::new();
    for env in Environment::ALL {
        let pts: Vec<(f64, f64)> = report
            .observations
            .iter()
            .filter(|o| o.environment == env)
            .map(|o| (o.end_depth_d, o.gva))
            .collect();
        all.extend(pts.iter().copied());
        series.push(Series::new(env.as_str(), env_color(env), Mark::Points, pts));
    }
    if let Some((a, b)) = simple_fit(&all) {
        series.push(Series::new("gva ~ end_depth", PALETTE[7], Mark::Line, line_over(&all, a, b)));
    }
    Plot {
        title: "GVA by end depth".into(),
        x_label: "end depth (D)".into(),
        y_label: "GVA (deg)".into(),
        series,
    }
}

fn gva_by_participant(report: &AnalysisReport) -> Plot {
    let mut series = Vec::new();
    for (i, m) in report.models.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = report
            .observations
            .iter()
            .filter(|o| o.participant_id == m.participant_id)
            .map(|o| (o.end_depth_d, o.gva))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let line = line_over(&pts, m.intercept_deg, m.slope_deg_per_diopter);
        series.push(Series::new(m.participant_id.clone(), color, Mark::Points, pts));
        series.push(Series::new(m.participant_id.clone(), color, Mark::Line, line));
    }
    Plot {
        title: "GVA by end depth and participant".into(),
        x_label: "end depth (D)".into(),
        y_label: "GVA (deg)".into(),
        series,
    }
}

fn normalized_gva(report: &AnalysisReport) -> Plot {
    let mut series = Vec::new();
    for env in Environment::ALL {
        let pts: Vec<(f64, f64)> = report
            .observations
            .iter()
            .filter(|o| o.environment == env)
            .filter_map(|o| o.normalized_gva.map(|g| (o.end_depth_d, g)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        if let Some(off) = &report.environment_offsets {
            if let Some(a) = off.intercepts.get(&env) {
                let line = line_over(&pts, *a, off.slope_deg_per_diopter);
                series.push(Series::new(env.as_str(), env_color(env), Mark::Line, line));
            }
        }
        series.push(Series::new(env.as_str(), env_color(env), Mark::Points, pts));
    }
    Plot {
        title: "Normalized GVA by end depth".into(),
        x_label: "end depth (D)".into(),
        y_label: "normalized GVA (deg)".into(),
        series,
    }
}

fn stability(report: &AnalysisReport) -> Plot {
    let mut by_end: BTreeMap<i64, Vec<(f64, f64)>> = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for p in &report.pair_observations {
        let key = crate::types::depth_key(p.end_depth_m);
        labels.insert(key, p.end_depth_m);
        let y = p.normalized_gva.unwrap_or(p.gva);
        // Divergent moves (toward a farther target) plotted to the left.
        let x = if p.end_depth_m > p.start_depth_m { -p.switch_depth_d } else { p.switch_depth_d };
        by_end.entry(key).or_default().push((x, y));
    }
    let series = by_end
        .into_iter()
        .enumerate()
        .map(|(i, (k, pts))| {
            Series::new(format!("end {} m", labels[&k]), PALETTE[(i + 3) % PALETTE.len()], Mark::Points, pts)
        })
        .collect();
    Plot {
        title: "GVA by switching depth".into(),
        x_label: "switching depth (D); negative = divergence".into(),
        y_label: "normalized GVA (deg)".into(),
        series,
    }
}

fn log_ratio(report: &AnalysisReport) -> Option<Plot> {
    let s = report.subjective.as_ref()?;
    let mut groups: BTreeMap<(Environment, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &s.rows {
        groups
            .entry((r.environment, r.measure.as_str().to_string()))
            .or_default()
            .push((1.0 / r.end_depth_m, r.log_ratio));
    }
    let series = groups
        .into_iter()
        .enumerate()
        .map(|(i, ((env, m), pts))| Series::new(format!("{env} {m}"), PALETTE[(i + 1) % PALETTE.len()], Mark::Points, pts))
        .collect();
    Some(Plot {
        title: "log(XR / real)".into(),
        x_label: "end depth (D)".into(),
        y_label: "log ratio".into(),
        series,
    })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(String::new, |x| format!("{x:.digits$}"))
}

pub fn regression_text(r: &RegressionReport) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "{} (N = {}, selected: {})", r.name, r.n, r.selected);
    let _ = writeln!(
        o,
        "{:<5} {:<48} {:>7} {:>7} {:>4} {:>8} {:>7} {:>5}",
        "Model", "Formula", "R2", "Res.Df", "Df", "F", "p", ""
    );
    for row in &r.rows {
        let _ = writeln!(
            o,
            "{:<5} {:<48} {:>7.4} {:>7} {:>4} {:>8} {:>7} {:>5}",
            row.model_tag,
            row.formula_string,
            row.r_squared,
            row.res_df,
            row.delta_df.map_or_else(String::new, |d| d.to_string()),
            fmt_opt(row.f, 4),
            row.p_label.clone().unwrap_or_default(),
            row.significance.map_or("", |s| s.as_str())
        );
    }
    for s in &r.attribution {
        let _ = writeln!(o, "  {} = {} = {:.1}%", s.predictor, s.definition, s.percent);
    }
    o
}

pub fn report_text(report: &AnalysisReport) -> String {
    let mut o = String::new();
    let _ = writeln!(
        o,
        "{} participants, {} cell observations, {} pair observations\n",
        report.participants.len(),
        report.n_observations,
        report.n_pair_observations
    );
    for r in &report.regressions {
        o.push_str(&regression_text(r));
        o.push('\n');
    }
    if let Some(off) = &report.environment_offsets {
        let _ = writeln!(o, "Environment offsets (slope {:.4} deg/D)", off.slope_deg_per_diopter);
        for d in &off.differences {
            let _ = writeln!(o, "  {} - Real = {:.4} (se {:.4})", d.environment, d.estimate, d.std_error);
        }
        o.push('\n');
    }
    if let Some(s) = &report.subjective {
        o.push_str(&regression_text(&s.regression));
        let _ = writeln!(o, "\nMean log ratios");
        for m in &s.means {
            let _ = writeln!(o, "  {} {}: {:.4} (ratio {:.4})", m.environment, m.measure.as_str(), m.mean, m.ratio);
        }
        let _ = writeln!(o, "\nSubjective diopters vs normalized GVA");
        for c in &s.correlations {
            let _ = writeln!(o, "  {}: r = {:.3}, r2 = {:.1}%, n = {}", c.environment, c.r, c.r_squared_percent, c.n);
        }
    }
    o
}

/// Write every plot and `tables.txt` into `dir`; returns the files written.
pub fn render_report(report: &AnalysisReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut plots = vec![
        ("gva_by_depth.svg", gva_by_depth(report)),
        ("gva_by_participant.svg", gva_by_participant(report)),
        ("normalized_gva.svg", normalized_gva(report)),
    ];
    if !report.pair_observations.is_empty() {
        plots.push(("stability.svg", stability(report)));
    }
    if let Some(p) = log_ratio(report) {
        plots.push(("log_ratio.svg", p));
    }
    let mut written = Vec::new();
    for (name, plot) in plots {
        let path = dir.join(name);
        std::fs::write(&path, plot.to_svg())?;
        written.push(path);
    }
    let path = dir.join("tables.txt");
    std::fs::write(&path, report_text(report))?;
    written.push(path);
    Ok(written)
}
