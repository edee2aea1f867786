//! CSV/JSON report emission.

use std::path::Path;

use camanim_core::road::ComparisonRow;
use camanim_core::YbRoadSeries;
use serde::Serialize;

use crate::error::{AppError, AppResult};

/// Number formatting of the CSV dialect: plain shortest round-trip decimal,
/// switching to two-decimal scientific notation (`-3.50E-07`) for
/// non-zero magnitudes below 1e-3.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.abs() < 1e-3 {
        let s = format!("{x:.2E}");
        let (mantissa, exp) = s.split_once('E').expect("scientific format has an exponent");
        let exp: i32 = exp.parse().expect("exponent is an integer");
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}E{sign}{:02}", exp.abs());
    }
    format!("{x}")
}

/// As [`format_number`] with an explicit `+` on non-negative values.
pub fn format_signed(x: f64) -> String {
    let s = format_number(x);
    if s.starts_with('-') {
        s
    } else {
        format!("+{s}")
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |e| AppError::Encode { path: path.to_path_buf(), message: e.to_string() }
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(AppError::io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| AppError::Encode { path: path.to_path_buf(), message: e.to_string() })?;
    text.push('\n');
    std::fs::write(path, text).map_err(AppError::io(path))
}

/// `exec_index, layer_name, road`, with a leading `trial` column when more
/// than one trial ran.
pub fn ybroad_rows(trials: &[YbRoadSeries]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let with_trial = trials.len() > 1;
    let mut header = vec!["exec_index", "layer_name", "road"];
    if with_trial {
        header.insert(0, "trial");
    }
    let mut rows = Vec::new();
    for (t, series) in trials.iter().enumerate() {
        for e in &series.entries {
            let mut row = vec![e.layer.exec_index.to_string(), e.layer.name.clone(), format_number(e.road)];
            if with_trial {
                row.insert(0, t.to_string());
            }
            rows.push(row);
        }
    }
    (header, rows)
}

pub fn comparison_record(row: &ComparisonRow) -> Vec<String> {
    vec![
        row.model.clone(),
        row.image.clone(),
        row.target_class.clone(),
        row.cam.clone(),
        format_number(row.mean_layer_road),
        format_number(row.final_layer_road),
        format_number(row.max_ybroad),
        format_signed(row.difference),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct JsonEntry {
    pub exec_index: usize,
    pub layer_name: String,
    pub road: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct JsonStats {
    pub mean: f64,
    pub max: f64,
    pub argmax_exec_index: usize,
    pub argmax_layer: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct JsonTrial {
    pub trial: usize,
    pub seed: u64,
    pub entries: Vec<JsonEntry>,
    pub stats: JsonStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct YbRoadJson {
    pub model: String,
    pub image: String,
    pub cam: String,
    pub target_class: usize,
    pub thresholds: Vec<f64>,
    pub trials: Vec<JsonTrial>,
    /// Per-layer ROAD averaged over trials.
    pub mean_curve: Vec<JsonEntry>,
    /// Statistics of the trial-averaged curve.
    pub mean_curve_stats: JsonStats,
    /// Average over trials of each trial's layer mean (equals the mean of
    /// the mean curve; kept explicit for readers).
    pub mean_over_trials_and_layers: f64,
    /// Average over trials of each trial's max.
    pub mean_of_trial_max: f64,
}

fn entries(series: &YbRoadSeries) -> Vec<JsonEntry> {
    series
        .entries
        .iter()
        .map(|e| JsonEntry { exec_index: e.layer.exec_index, layer_name: e.layer.name.clone(), road: e.road })
        .collect()
}

pub fn stats(series: &YbRoadSeries) -> JsonStats {
    JsonStats {
        mean: series.mean,
        max: series.max,
        argmax_exec_index: series.argmax_layer().exec_index,
        argmax_layer: series.argmax_layer().name.clone(),
    }
}

pub fn trial_json(trial: usize, seed: u64, series: &YbRoadSeries) -> JsonTrial {
    JsonTrial { trial, seed, entries: entries(series), stats: stats(series) }
}

pub fn mean_curve_json(curve: &YbRoadSeries) -> Vec<JsonEntry> {
    entries(curve)
}
