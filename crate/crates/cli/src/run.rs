//! End-to-end orchestration of the `run`, `benchmark` and `compare` commands.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use camanim_core::pipeline::{LayerwiseRun, SaliencyMap};
use camanim_core::plot::plot_series;
use camanim_core::render::{apply_colormap, frame_filename, overlay, tensor_to_rgb, NormMode, RgbImage};
use camanim_core::road::{comparison_row, ComparisonRow, YbRoadEntry};
use camanim_core::{road_score, Backend, CamVariant, LayerSequence, RoadConfig, Tensor4, YbRoadSeries};
use rayon::prelude::*;
use serde::Serialize;

use crate::anim::write_gif;
use crate::bench::{BenchmarkReport, LAYER_HEADER, TABLE_HEADER};
use crate::config::{RunConfig, TargetClass};
use crate::error::{AppError, AppResult};
use crate::imageio::{load_and_preprocess, write_png, Preprocessed};
use crate::model::{load_model, LoadedModel};
use crate::report::{self, comparison_record, write_csv, write_json, YbRoadJson};

pub const PLOT_SIZE: (usize, usize) = (480, 320);
pub const MANIFEST: &str = "run_manifest.json";

/// Everything one seeded pass of the layer-wise pipeline produces.
pub struct TrialOutput {
    pub seed: u64,
    pub sequence: LayerSequence,
    pub series: YbRoadSeries,
    pub layer_times: Vec<Duration>,
}

/// Layer maps are computed in parallel; results keep execution order.
pub fn layerwise<B: Backend + Sync>(
    model: &B,
    input: &Tensor4,
    target: usize,
    cam: CamVariant,
    seed: u64,
) -> AppResult<(LayerSequence, Vec<Duration>)> {
    let run = LayerwiseRun::prepare(model, input, target, cam, seed)?;
    let timed: Vec<(SaliencyMap, Duration)> = run
        .layers
        .par_iter()
        .map(|l| {
            let start = Instant::now();
            let map = run.layer(l)?;
            Ok((map, start.elapsed()))
        })
        .collect::<camanim_core::Result<_>>()?;
    let (maps, times): (Vec<_>, Vec<_>) = timed.into_iter().unzip();
    let sequence = LayerwiseRun::<B>::finish(maps)?;
    sequence.check_invariants()?;
    Ok((sequence, times))
}

/// ROAD of each retained layer, evaluated in parallel.
pub fn ybroad_parallel<B: Backend + Sync>(
    model: &B,
    input: &Tensor4,
    target: usize,
    sequence: &LayerSequence,
    road: &RoadConfig,
) -> AppResult<YbRoadSeries> {
    let retained: Vec<&SaliencyMap> = sequence.retained().collect();
    let entries = retained
        .par_iter()
        .map(|m| Ok(YbRoadEntry { layer: m.layer.clone(), road: road_score(model, input, &m.local_norm, target, road)? }))
        .collect::<camanim_core::Result<Vec<_>>>()?;
    Ok(YbRoadSeries::from_entries(entries, road.thresholds.clone())?)
}

pub fn run_trial<B: Backend + Sync>(
    model: &B,
    input: &Tensor4,
    target: usize,
    cam: CamVariant,
    road: &RoadConfig,
) -> AppResult<TrialOutput> {
    let (sequence, layer_times) = layerwise(model, input, target, cam, road.seed)?;
    let series = ybroad_parallel(model, input, target, &sequence, road)?;
    Ok(TrialOutput { seed: road.seed, sequence, series, layer_times })
}

/// Per-layer ROAD averaged over trials (all trials share the same layers).
pub fn mean_curve(trials: &[YbRoadSeries]) -> AppResult<YbRoadSeries> {
    let first = trials.first().ok_or(camanim_core::Error::EmptySequence)?;
    let n = trials.len() as f64;
    let entries = first
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| YbRoadEntry { layer: e.layer.clone(), road: trials.iter().map(|t| t.entries[i].road).sum::<f64>() / n })
        .collect();
    Ok(YbRoadSeries::from_entries(entries, first.thresholds.clone())?)
}

pub fn render_frames(
    sequence: &LayerSequence,
    base: &RgbImage,
    mode: NormMode,
    alpha: f64,
    caption: bool,
    include_skipped: bool,
) -> AppResult<Vec<(String, RgbImage)>> {
    let maps: Vec<&SaliencyMap> = sequence.maps.iter().filter(|m| include_skipped || m.is_retained()).collect();
    let frames = maps
        .par_iter()
        .map(|m| {
            let norm = match mode {
                NormMode::Local => &m.local_norm,
                NormMode::Global => &m.global_norm,
            };
            let frame = overlay(&apply_colormap(norm)?, base, alpha, &m.layer.name, m.layer.exec_index, mode, caption)?;
            Ok((frame_filename(frame.exec_index, &frame.layer_name), frame.rgb))
        })
        .collect::<camanim_core::Result<Vec<_>>>()?;
    Ok(frames)
}

fn create_dir(path: &Path) -> AppResult<()> {
    std::fs::create_dir_all(path).map_err(AppError::io(path))
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestConfig {
    pub image_path: String,
    pub model: String,
    pub cam: String,
    pub target_class: String,
    pub norm: crate::config::NormSelection,
    pub fps: f64,
    pub alpha: f64,
    pub thresholds: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
    pub trials: usize,
    pub include_skipped: bool,
    pub caption: bool,
    pub out_dir: String,
    pub normalization: crate::imageio::Normalization,
    pub score: crate::config::ScoreSelection,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub complete: bool,
    pub error: Option<String>,
    pub config: ManifestConfig,
    pub weights_sha256: Option<String>,
    pub resolved_target_class: Option<usize>,
    pub trial_seeds: Vec<u64>,
    pub input_shape: Option<[usize; 4]>,
    pub retained_layers: Option<usize>,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            complete: false,
            error: None,
            config: ManifestConfig {
                image_path: config.image_path.display().to_string(),
                model: config.model.to_string(),
                cam: config.cam.name().into(),
                target_class: config.target_class.to_string(),
                norm: config.norm,
                fps: config.fps,
                alpha: config.alpha,
                thresholds: config.thresholds.clone(),
                noise_std: config.noise_std,
                seed: config.seed,
                trials: config.trials,
                include_skipped: config.include_skipped,
                caption: config.caption,
                out_dir: config.out_dir.display().to_string(),
                normalization: config.normalization.clone(),
                score: config.score,
            },
            weights_sha256: None,
            resolved_target_class: None,
            trial_seeds: (0..config.trials).map(|t| config.trial_seed(t)).collect(),
            input_shape: None,
            retained_layers: None,
            artifacts: Vec::new(),
        }
    }
}

/// Summary returned to the caller of [`run`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub target_class: usize,
    pub retained_layers: usize,
    pub mean_curve: YbRoadSeries,
    pub artifacts: Vec<PathBuf>,
}

/// Runs the whole pipeline. The manifest is written first with
/// `complete: false` and rewritten at the end; on failure it records the error.
pub fn run(config: &RunConfig) -> AppResult<RunSummary> {
    config.validate()?;
    create_dir(&config.out_dir)?;
    let manifest_path = config.out_dir.join(MANIFEST);
    let mut manifest = Manifest::new(config);
    write_json(&manifest_path, &manifest)?;
    match run_inner(config, &mut manifest) {
        Ok(summary) => {
            manifest.complete = true;
            manifest.artifacts = summary
                .artifacts
                .iter()
                .map(|p| p.strip_prefix(&config.out_dir).unwrap_or(p).display().to_string())
                .collect();
            write_json(&manifest_path, &manifest)?;
            Ok(summary)
        }
        Err(e) => {
            manifest.error = Some(format!("{}: {e}", e.kind()));
            // the original error matters more than a failure to record it
            let _ = write_json(&manifest_path, &manifest);
            Err(e)
        }
    }
}

fn run_inner(config: &RunConfig, manifest: &mut Manifest) -> AppResult<RunSummary> {
    let LoadedModel { model, name, weights_sha256 } = load_model(&config.model)?;
    manifest.weights_sha256 = Some(weights_sha256);
    let [_, channels, h, w] = model.input_shape();
    let Preprocessed { input, display } =
        load_and_preprocess(&config.image_path, (h, w), channels, &config.normalization)?;
    manifest.input_shape = Some(input.shape());
    let target = resolve_target(&model, &input, config.target_class)?;
    manifest.resolved_target_class = Some(target);

    let mut trials = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let road = RoadConfig {
            thresholds: config.thresholds.clone(),
            noise_std: config.noise_std,
            seed: config.trial_seed(t),
            score: config.score.into(),
        };
        trials.push(run_trial(&model, &input, target, config.cam, &road)?);
    }
    let first = &trials[0];
    manifest.retained_layers = Some(first.sequence.retained_count());
    let mut artifacts = Vec::new();

    let base = tensor_to_rgb(&display)?;
    for mode in config.norm.modes() {
        let dir = config.out_dir.join("frames").join(mode.as_str());
        create_dir(&dir)?;
        let frames = render_frames(&first.sequence, &base, mode, config.alpha, config.caption, config.include_skipped)?;
        for (file, rgb) in &frames {
            let path = dir.join(file);
            write_png(&path, rgb)?;
            artifacts.push(path);
        }
        let images: Vec<RgbImage> = frames.into_iter().map(|(_, rgb)| rgb).collect();
        let gif_path = config.out_dir.join(format!("camanim_{}.gif", mode.as_str()));
        write_gif(&gif_path, &images, config.fps)?;
        artifacts.push(gif_path);
    }

    let series: Vec<YbRoadSeries> = trials.iter().map(|t| t.series.clone()).collect();
    let curve = mean_curve(&series)?;

    let csv_path = config.out_dir.join("ybroad.csv");
    let (header, rows) = report::ybroad_rows(&series);
    write_csv(&csv_path, &header, &rows)?;
    artifacts.push(csv_path);

    let image_name = config.image_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let json = YbRoadJson {
        model: name.clone(),
        image: image_name.clone(),
        cam: config.cam.name().into(),
        target_class: target,
        thresholds: config.thresholds.clone(),
        trials: trials.iter().enumerate().map(|(i, t)| report::trial_json(i, t.seed, &t.series)).collect(),
        mean_curve: report::mean_curve_json(&curve),
        mean_curve_stats: report::stats(&curve),
        mean_over_trials_and_layers: series.iter().map(|s| s.mean).sum::<f64>() / series.len() as f64,
        mean_of_trial_max: series.iter().map(|s| s.max).sum::<f64>() / series.len() as f64,
    };
    let json_path = config.out_dir.join("ybroad.json");
    write_json(&json_path, &json)?;
    artifacts.push(json_path);

    let row = comparison_row(&name, &image_name, &target.to_string(), config.cam, &curve, curve.final_road());
    let cmp_path = config.out_dir.join("comparison.csv");
    write_csv(&cmp_path, &ComparisonRow::HEADER, &[comparison_record(&row)])?;
    artifacts.push(cmp_path);

    let layers = model.list_layers()?;
    let bench = BenchmarkReport::from_timings(&name, &layers, &first.layer_times);
    artifacts.extend(write_benchmark(&config.out_dir, &bench)?);

    let plot = plot_series(&curve.values(), PLOT_SIZE.0, PLOT_SIZE.1)?;
    let plot_path = config.out_dir.join("ybroad.png");
    write_png(&plot_path, &plot.image)?;
    artifacts.push(plot_path);

    Ok(RunSummary { target_class: target, retained_layers: first.sequence.retained_count(), mean_curve: curve, artifacts })
}

/// Writes `benchmark.csv` (one summary row) and `benchmark_layers.csv`.
pub fn write_benchmark(dir: &Path, report: &BenchmarkReport) -> AppResult<Vec<PathBuf>> {
    if !report.is_consistent() {
        return Err(AppError::Config("benchmark totals disagree with their rows".into()));
    }
    let table = dir.join("benchmark.csv");
    write_csv(&table, &TABLE_HEADER, &[report.table_row()])?;
    let layers = dir.join("benchmark_layers.csv");
    write_csv(&layers, &LAYER_HEADER, &report.layer_rows())?;
    Ok(vec![table, layers])
}

/// Times every layer's CAM serially (one layer at a time).
pub fn benchmark<B: Backend>(
    model: &B,
    model_name: &str,
    input: &Tensor4,
    target: TargetClass,
    cam: CamVariant,
    seed: u64,
) -> AppResult<BenchmarkReport> {
    let target = resolve_target(model, input, target)?;
    let run = LayerwiseRun::prepare(model, input, target, cam, seed)?;
    let mut times = Vec::with_capacity(run.layers.len());
    for l in &run.layers {
        let start = Instant::now();
        run.layer(l)?;
        times.push(start.elapsed());
    }
    Ok(BenchmarkReport::from_timings(model_name, &run.layers, &times))
}

/// Resolves `argmax` against the logits of the unperturbed input.
pub fn resolve_target<B: Backend>(model: &B, input: &Tensor4, target: TargetClass) -> AppResult<usize> {
    match target {
        TargetClass::Index(c) => {
            let n = model.num_classes();
            if c >= n {
                return Err(camanim_core::Error::ClassRange { class: c, num_classes: n }.into());
            }
            Ok(c)
        }
        TargetClass::Argmax => {
            let logits = model.logits(input)?;
            Ok((0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b }))
        }
    }
}

/// One comparison row per CAM variant.
pub fn compare<B: Backend + Sync>(
    model: &B,
    model_name: &str,
    image_name: &str,
    input: &Tensor4,
    target: TargetClass,
    cams: &[CamVariant],
    road: &RoadConfig,
) -> AppResult<Vec<ComparisonRow>> {
    let target = resolve_target(model, input, target)?;
    cams.iter()
        .map(|&cam| {
            let trial = run_trial(model, input, target, cam, road)?;
            Ok(comparison_row(model_name, image_name, &target.to_string(), cam, &trial.series, trial.series.final_road()))
        })
        .collect()
}
