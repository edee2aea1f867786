#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use camanim::config::{NormSelection, ScoreSelection, TargetClass};
use camanim::imageio::{write_gray_png, Normalization};
use camanim::model::{ModelSpec, FIXTURE_EPOCHS, FIXTURE_LR, FIXTURE_SEED};
use camanim::RunConfig;
use camanim_core::nn::{held_out_set, train_fixture, weights, Sequential};
use camanim_core::CamVariant;
use tempfile::TempDir;

pub struct Shared {
    pub dir: TempDir,
    pub model: Sequential,
    pub weights: PathBuf,
    /// The first held-out samples written as grayscale PNGs.
    pub images: Vec<PathBuf>,
}

/// Fixture weights and sample images, trained once per test binary.
pub fn shared() -> &'static Shared {
    static SHARED: OnceLock<Shared> = OnceLock::new();
    SHARED.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let model = train_fixture(FIXTURE_SEED, FIXTURE_EPOCHS, FIXTURE_LR).unwrap();
        let weights_path = dir.path().join("fixture.camfix");
        std::fs::write(&weights_path, weights::to_bytes(&model)).unwrap();
        let images = held_out_set(FIXTURE_SEED)
            .iter()
            .take(4)
            .enumerate()
            .map(|(i, s)| {
                let p = dir.path().join(format!("sample_{i}.png"));
                write_gray_png(&p, &s.image).unwrap();
                p
            })
            .collect();
        Shared { dir, model, weights: weights_path, images }
    })
}

pub fn config(image: &Path, out_dir: &Path) -> RunConfig {
    RunConfig {
        image_path: image.to_path_buf(),
        model: ModelSpec::Weights(shared().weights.clone()),
        cam: CamVariant::GradCam,
        target_class: TargetClass::Argmax,
        norm: NormSelection::Both,
        fps: 4.0,
        alpha: 0.5,
        thresholds: vec![20.0, 40.0, 60.0, 80.0],
        noise_std: 0.01,
        seed: 0,
        trials: 1,
        include_skipped: false,
        caption: false,
        out_dir: out_dir.to_path_buf(),
        normalization: Normalization::fixture_default(),
        score: ScoreSelection::Probability,
    }
}

pub fn count_files(dir: &Path, ext: &str) -> usize {
    std::fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok()).filter(|e| e.path().extension().is_some_and(|x| x == ext)).count())
        .unwrap_or(0)
}
