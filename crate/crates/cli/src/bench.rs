//! Per-layer parameter and CAM-time accounting.

use std::time::Duration;

use camanim_core::backend::param_count;
use camanim_core::LayerDescriptor;
use serde::Serialize;

use crate::report::format_number;

pub const TABLE_HEADER: [&str; 5] = ["Model", "Num. Params.", "Time (s)", "Avg. Params. per Layer", "Avg. Layer Time (s)"];
pub const LAYER_HEADER: [&str; 5] = ["exec_index", "layer_name", "kind", "param_count", "cam_time_seconds"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub exec_index: usize,
    pub name: String,
    pub kind: String,
    pub param_count: usize,
    pub cam_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub model: String,
    pub rows: Vec<BenchRow>,
    pub total_params: usize,
    pub total_time: f64,
    pub avg_params_per_layer: f64,
    pub avg_layer_time: f64,
}

impl BenchmarkReport {
    /// Totals are aggregated from the rows, so they agree by construction.
    pub fn from_timings(model: &str, layers: &[LayerDescriptor], times: &[Duration]) -> Self {
        let rows: Vec<BenchRow> = layers
            .iter()
            .zip(times)
            .map(|(l, t)| BenchRow {
                exec_index: l.exec_index,
                name: l.name.clone(),
                kind: l.kind.as_str().into(),
                param_count: param_count(l),
                cam_time_seconds: t.as_secs_f64(),
            })
            .collect();
        let total_params = rows.iter().map(|r| r.param_count).sum();
        let total_time = rows.iter().map(|r| r.cam_time_seconds).sum();
        let n = rows.len().max(1) as f64;
        Self {
            model: model.into(),
            total_params,
            total_time,
            avg_params_per_layer: total_params as f64 / n,
            avg_layer_time: total_time / n,
            rows,
        }
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.rows.len() as f64;
        self.total_params == self.rows.iter().map(|r| r.param_count).sum::<usize>()
            && self.total_time == self.rows.iter().map(|r| r.cam_time_seconds).sum::<f64>()
            && self.avg_params_per_layer == self.total_params as f64 / n
            && self.avg_layer_time == self.total_time / n
    }

    pub fn table_row(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            self.total_params.to_string(),
            format_number(self.total_time),
            format_number(self.avg_params_per_layer),
            format_number(self.avg_layer_time),
        ]
    }

    pub fn layer_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.exec_index.to_string(),
                    r.name.clone(),
                    r.kind.clone(),
                    r.param_count.to_string(),
                    format_number(r.cam_time_seconds),
                ]
            })
            .collect()
    }
}
