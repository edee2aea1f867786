use std::path::PathBuf;
use std::process::ExitCode;

use camanim::bench::{LAYER_HEADER, TABLE_HEADER};
use camanim::config::{parse_list, NormSelection, ScoreSelection, TargetClass};
use camanim::imageio::{load_and_preprocess, write_gray_png, Normalization};
use camanim::model::{load_model, sha256_hex, ModelSpec, FIXTURE_EPOCHS, FIXTURE_LR, FIXTURE_SEED};
use camanim::report::{comparison_record, write_csv};
use camanim::run::{benchmark, compare, run};
use camanim::{AppError, AppResult, RunConfig};
use camanim_core::nn::{held_out_set, train_fixture, weights};
use camanim_core::road::ComparisonRow;
use camanim_core::{Backend, CamVariant, RoadConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "camanim", version, about = "Layer-wise CAM animations and ybROAD scoring")]
struct Cli {
    /// Worker threads; 1 runs everything serially. Defaults to all logical cores.
    #[arg(long, global = true, env = "CAMANIM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render per-layer CAM frames and GIFs and score every layer with ROAD.
    Run(RunArgs),
    /// Time each layer's CAM and report parameter counts.
    Benchmark(BenchArgs),
    /// Train the reference CNN and write its weights.
    TrainFixture(TrainArgs),
    /// One comparison row per CAM variant for a single image.
    Compare(CompareArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Input PNG (8-bit grayscale or RGB).
    #[arg(long)]
    image: PathBuf,
    /// `fixture`, a CAMFIX1 weight file, or `adapter:<id>`.
    #[arg(long, default_value = "fixture")]
    model: String,
    /// Class index or `argmax`.
    #[arg(long, default_value = "argmax")]
    target_class: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-channel mean, comma separated.
    #[arg(long, default_value = "0.5")]
    mean: String,
    /// Per-channel standard deviation, comma separated.
    #[arg(long, default_value = "0.5")]
    std: String,
}

#[derive(Args)]
struct RoadArgs {
    /// Removal percentages, comma separated.
    #[arg(long, default_value = "20,40,60,80")]
    thresholds: String,
    #[arg(long, default_value_t = 0.01)]
    noise_std: f64,
    #[arg(long, value_enum, default_value = "probability")]
    score: ScoreSelection,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    road: RoadArgs,
    #[arg(long, default_value = "gradcam")]
    cam: String,
    #[arg(long, value_enum, default_value = "both")]
    norm: NormSelection,
    #[arg(long, default_value_t = 4.0)]
    fps: f64,
    /// Heatmap opacity in the overlay.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Also render frames for non-spatial layers.
    #[arg(long)]
    include_skipped: bool,
    /// Draw a caption strip with the layer name.
    #[arg(long)]
    caption: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "gradcam")]
    cam: String,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = FIXTURE_SEED)]
    seed: u64,
    #[arg(long, default_value_t = FIXTURE_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = FIXTURE_LR)]
    lr: f64,
    /// Weight file to write.
    #[arg(long, default_value = "fixture.camfix")]
    out: PathBuf,
    /// Also write this many held-out sample PNGs plus labels.csv here.
    #[arg(long)]
    samples_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    samples: usize,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    road: RoadArgs,
    /// CAM variants, comma separated, or `all`.
    #[arg(long, default_value = "all")]
    cams: String,
    #[arg(long, default_value = "comparison.csv")]
    out: PathBuf,
}

fn normalization(args: &ModelArgs) -> AppResult<Normalization> {
    Ok(Normalization { mean: parse_list(&args.mean)?, std: parse_list(&args.std)? })
}

fn parse_cam(s: &str) -> AppResult<CamVariant> {
    s.parse().map_err(|_| AppError::Config(format!("unknown CAM variant '{s}'")))
}

fn road_config(args: &RoadArgs, seed: u64) -> AppResult<RoadConfig> {
    Ok(RoadConfig { thresholds: parse_list(&args.thresholds)?, noise_std: args.noise_std, seed, score: args.score.into() })
}

fn run_cmd(args: RunArgs) -> AppResult<()> {
    let config = RunConfig {
        image_path: args.model.image.clone(),
        model: args.model.model.parse()?,
        cam: parse_cam(&args.cam)?,
        target_class: args.model.target_class.parse()?,
        norm: args.norm,
        fps: args.fps,
        alpha: args.alpha,
        thresholds: parse_list(&args.road.thresholds)?,
        noise_std: args.road.noise_std,
        seed: args.model.seed,
        trials: args.trials,
        include_skipped: args.include_skipped,
        caption: args.caption,
        out_dir: args.out_dir,
        normalization: normalization(&args.model)?,
        score: args.road.score,
    };
    let summary = run(&config)?;
    let curve = &summary.mean_curve;
    println!(
        "target class {}, {} retained layers, ybROAD mean {:.6} max {:.6} at {}",
        summary.target_class,
        summary.retained_layers,
        curve.mean,
        curve.max,
        curve.argmax_layer().name
    );
    println!("wrote {} artifacts to {}", summary.artifacts.len(), config.out_dir.display());
    Ok(())
}

fn benchmark_cmd(args: BenchArgs) -> AppResult<()> {
    let loaded = load_model(&args.model.model.parse::<ModelSpec>()?)?;
    let [_, c, h, w] = loaded.model.input_shape();
    let pre = load_and_preprocess(&args.model.image, (h, w), c, &normalization(&args.model)?)?;
    let target: TargetClass = args.model.target_class.parse()?;
    let report = benchmark(&loaded.model, &loaded.name, &pre.input, target, parse_cam(&args.cam)?, args.model.seed)?;
    std::fs::create_dir_all(&args.out_dir).map_err(AppError::io(&args.out_dir))?;
    camanim::run::write_benchmark(&args.out_dir, &report)?;
    println!("{}", TABLE_HEADER.join(", "));
    println!("{}", report.table_row().join(", "));
    println!();
    println!("{}", LAYER_HEADER.join(", "));
    for row in report.layer_rows() {
        println!("{}", row.join(", "));
    }
    Ok(())
}

fn train_cmd(args: TrainArgs) -> AppResult<()> {
    let model = train_fixture(args.seed, args.epochs, args.lr)?;
    let bytes = weights::to_bytes(&model);
    std::fs::write(&args.out, &bytes).map_err(AppError::io(&args.out))?;
    let held_out = held_out_set(args.seed);
    let acc = camanim_core::nn::accuracy(&model, &held_out)?;
    println!("wrote {} ({} bytes, sha256 {})", args.out.display(), bytes.len(), sha256_hex(&bytes));
    println!("held-out accuracy {acc:.4} on {} samples", held_out.len());
    if let Some(dir) = args.samples_dir {
        std::fs::create_dir_all(&dir).map_err(AppError::io(&dir))?;
        let mut rows = Vec::new();
        for (i, s) in held_out.iter().take(args.samples).enumerate() {
            let name = format!("sample_{i:03}.png");
            write_gray_png(&dir.join(&name), &s.image)?;
            let b = s.blob_box;
            rows.push(vec![name, s.label.to_string(), b.top.to_string(), b.left.to_string(), b.height.to_string(), b.width.to_string()]);
        }
        write_csv(&dir.join("labels.csv"), &["file", "label", "blob_top", "blob_left", "blob_height", "blob_width"], &rows)?;
    }
    Ok(())
}

fn compare_cmd(args: CompareArgs) -> AppResult<()> {
    let loaded = load_model(&args.model.model.parse::<ModelSpec>()?)?;
    let [_, c, h, w] = loaded.model.input_shape();
    let pre = load_and_preprocess(&args.model.image, (h, w), c, &normalization(&args.model)?)?;
    let cams = if args.cams == "all" {
        CamVariant::ALL.to_vec()
    } else {
        args.cams.split(',').map(|s| parse_cam(s.trim())).collect::<AppResult<_>>()?
    };
    let road = road_config(&args.road, args.model.seed)?;
    let image = args.model.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let target: TargetClass = args.model.target_class.parse()?;
    let rows = compare(&loaded.model, &loaded.name, &image, &pre.input, target, &cams, &road)?;
    let records: Vec<Vec<String>> = rows.iter().map(comparison_record).collect();
    write_csv(&args.out, &ComparisonRow::HEADER, &records)?;
    println!("{}", ComparisonRow::HEADER.join(", "));
    for r in &records {
        println!("{}", r.join(", "));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        if let Some(n) = cli.threads {
            if n == 0 {
                return Err(AppError::Config("--threads must be >= 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| AppError::Config(format!("thread pool: {e}")))?;
        }
        match cli.command {
            Command::Run(a) => run_cmd(a),
            Command::Benchmark(a) => benchmark_cmd(a),
            Command::TrainFixture(a) => train_cmd(a),
            Command::Compare(a) => compare_cmd(a),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
