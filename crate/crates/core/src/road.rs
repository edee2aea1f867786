//! ROAD (remove and debias) scoring of saliency maps and the per-layer
//! ybROAD series.
//!
//! Pixels are removed by noisy linear imputation: every removed pixel is set
//! to the weighted average of its 8 neighbours (edge neighbours 1/6,
//! diagonal neighbours 1/12, renormalised at the image border), solved
//! jointly as a sparse linear system, and then perturbed with Gaussian noise.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backend::{Backend, LayerDescriptor};
use crate::cam::CamVariant;
use crate::error::{Error, Result};
use crate::nn::ops::softmax;
use crate::pipeline::{run_layerwise, LayerSequence};
use crate::seeds;
use crate::tensor::{Map2, Tensor4};

pub const DEFAULT_THRESHOLDS: [f64; 4] = [20.0, 40.0, 60.0, 80.0];
pub const DEFAULT_NOISE_STD: f64 = 0.01;
pub const SOLVER_TOLERANCE: f64 = 1e-8;
const EDGE_WEIGHT: f64 = 1.0 / 6.0;
const DIAGONAL_WEIGHT: f64 = 1.0 / 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerturbMode {
    /// Remove the most relevant pixels first.
    Mrp,
    /// Remove the least relevant pixels first.
    Lrp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSpec {
    pub mode: PerturbMode,
    /// Percentage of pixels removed, in `(0, 100)`.
    pub p: f64,
    pub noise_std: f64,
    pub seed: u64,
}

/// Which model output the confidence change is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreKind {
    #[default]
    Probability,
    Logit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadConfig {
    pub thresholds: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
    pub score: ScoreKind,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self { thresholds: DEFAULT_THRESHOLDS.to_vec(), noise_std: DEFAULT_NOISE_STD, seed: 0, score: ScoreKind::Probability }
    }
}

impl RoadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config("at least one ROAD threshold is required".into()));
        }
        for &p in &self.thresholds {
            if !(p > 0.0 && p < 100.0) {
                return Err(Error::Range(alloc::format!("threshold {p} outside (0, 100)")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(alloc::format!("noise std {} must be >= 0", self.noise_std)));
        }
        Ok(())
    }
}

/// Number of pixels removed at percentage `p`: nearest integer, at least 1
/// and at most `total - 1` so one known pixel always anchors the imputation.
pub fn removal_count(p: f64, total: usize) -> Result<usize> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::Range(alloc::format!("percentage {p} outside (0, 100)")));
    }
    if total < 2 {
        return Err(Error::Dimension("need at least two pixels to perturb".into()));
    }
    let n = libm::round(p / 100.0 * total as f64) as usize;
    Ok(n.clamp(1, total - 1))
}

/// Boolean mask (row-major) of the pixels removed at `p` percent. Ties are
/// broken by the lower row-major index.
pub fn rank_pixels(saliency: &Map2, mode: PerturbMode, p: f64) -> Result<Vec<bool>> {
    let total = saliency.data.len();
    let count = removal_count(p, total)?;
    let mut order: Vec<usize> = (0..total).collect();
    let d = &saliency.data;
    match mode {
        PerturbMode::Mrp => order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b))),
        PerturbMode::Lrp => order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b))),
    }
    let mut mask = vec![false; total];
    for &i in &order[..count] {
        mask[i] = true;
    }
    Ok(mask)
}

/// The symmetric form of the imputation system over the removed pixels:
/// `s_i x_i - Σ_{j removed} r_ij x_j = Σ_{j known} r_ij v_j`, where `r` are the
/// raw neighbour weights and `s_i` their sum over in-image neighbours.
struct ImputationSystem {
    unknowns: Vec<usize>,
    diag: Vec<f64>,
    /// `(neighbour unknown index, raw weight)` per unknown.
    coupled: Vec<Vec<(usize, f64)>>,
    /// `(pixel index, raw weight)` of known neighbours per unknown.
    known: Vec<Vec<(usize, f64)>>,
}

const NEIGHBOURS: [(isize, isize, f64); 8] = [
    (-1, 0, EDGE_WEIGHT),
    (1, 0, EDGE_WEIGHT),
    (0, -1, EDGE_WEIGHT),
    (0, 1, EDGE_WEIGHT),
    (-1, -1, DIAGONAL_WEIGHT),
    (-1, 1, DIAGONAL_WEIGHT),
    (1, -1, DIAGONAL_WEIGHT),
    (1, 1, DIAGONAL_WEIGHT),
];

impl ImputationSystem {
    fn new(height: usize, width: usize, mask: &[bool]) -> Self {
        let unknowns: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let mut slot = vec![usize::MAX; mask.len()];
        for (k, &i) in unknowns.iter().enumerate() {
            slot[i] = k;
        }
        let mut diag = Vec::with_capacity(unknowns.len());
        let mut coupled = Vec::with_capacity(unknowns.len());
        let mut known = Vec::with_capacity(unknowns.len());
        for &i in &unknowns {
            let (y, x) = ((i / width) as isize, (i % width) as isize);
            let (mut s, mut cu, mut kn) = (0.0, Vec::new(), Vec::new());
            for &(dy, dx, wgt) in &NEIGHBOURS {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                    continue;
                }
                let j = ny as usize * width + nx as usize;
                s += wgt;
                if mask[j] {
                    cu.push((slot[j], wgt));
                } else {
                    kn.push((j, wgt));
                }
            }
            diag.push(s);
            coupled.push(cu);
            known.push(kn);
        }
        Self { unknowns, diag, coupled, known }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..x.len() {
            let mut v = self.diag[k] * x[k];
            for &(j, w) in &self.coupled[k] {
                v -= w * x[j];
            }
            out[k] = v;
        }
    }

    fn rhs(&self, plane: &[f64]) -> Vec<f64> {
        self.known.iter().map(|kn| kn.iter().map(|&(j, w)| w * plane[j]).sum()).collect()
    }

    /// Conjugate gradients, warm-started at the mean of the known pixels.
    fn solve(&self, plane: &[f64], known_mean: f64) -> Result<Vec<f64>> {
        let n = self.unknowns.len();
        let b = self.rhs(plane);
        let b_norm = libm::sqrt(b.iter().map(|v| v * v).sum());
        let mut x = vec![known_mean; n];
        let mut ax = vec![0.0; n];
        self.apply(&x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut p = r.clone();
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let target = SOLVER_TOLERANCE * b_norm.max(f64::MIN_POSITIVE);
        let max_iter = 10 * n.max(1);
        let mut ap = vec![0.0; n];
        for _ in 0..max_iter {
            if libm::sqrt(rr) <= target {
                return Ok(x);
            }
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            let step = rr / pap;
            for k in 0..n {
                x[k] += step * p[k];
                r[k] -= step * ap[k];
            }
            let rr_next: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_next / rr;
            rr = rr_next;
            for k in 0..n {
                p[k] = r[k] + beta * p[k];
            }
        }
        if libm::sqrt(rr) <= target {
            Ok(x)
        } else {
            Err(Error::Solver { iterations: max_iter, residual: libm::sqrt(rr) })
        }
    }
}

/// Replaces the masked pixels of every channel by noisy linear imputation.
pub fn noisy_linear_impute(image: &Tensor4, mask: &[bool], noise_std: f64, seed: u64) -> Result<Tensor4> {
    let [_, channels, h, w] = image.shape();
    if mask.len() != h * w {
        return Err(Error::Dimension(alloc::format!("mask of {} entries for a {h}x{w} image", mask.len())));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Config(alloc::format!("noise std {noise_std} must be >= 0")));
    }
    let system = ImputationSystem::new(h, w, mask);
    let mut out = image.clone();
    if system.unknowns.is_empty() {
        return Ok(out);
    }
    if system.unknowns.len() == mask.len() {
        return Err(Error::Dimension("cannot impute an image with every pixel removed".into()));
    }
    let noise = if noise_std > 0.0 {
        Some(Normal::new(0.0, noise_std).map_err(|_| Error::Config("invalid noise std".into()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..image.shape()[0] * channels {
        let plane = image.channel(c);
        let (sum, count) = plane
            .iter()
            .zip(mask)
            .filter(|(_, &m)| !m)
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
        let solved = system.solve(plane, sum / count as f64)?;
        let dst = out.channel_mut(c);
        for (&i, v) in system.unknowns.iter().zip(solved) {
            dst[i] = match &noise {
                Some(dist) => v + dist.sample(&mut rng),
                None => v,
            };
        }
    }
    Ok(out)
}

fn class_score(logits: &[f64], target: usize, kind: ScoreKind) -> f64 {
    match kind {
        ScoreKind::Probability => softmax(logits)[target],
        ScoreKind::Logit => logits[target],
    }
}

fn checked_score<B: Backend + ?Sized>(model: &B, image: &Tensor4, target: usize, kind: ScoreKind) -> Result<f64> {
    let logits = model.logits(image)?;
    if target >= logits.len() {
        return Err(Error::ClassRange { class: target, num_classes: logits.len() });
    }
    Ok(class_score(&logits, target, kind))
}

/// `score(target | perturbed) - score(target | original)`.
pub fn confidence_delta<B: Backend + ?Sized>(
    model: &B,
    original: &Tensor4,
    perturbed: &Tensor4,
    target_class: usize,
    kind: ScoreKind,
) -> Result<f64> {
    Ok(checked_score(model, perturbed, target_class, kind)? - checked_score(model, original, target_class, kind)?)
}

/// `Σ_p (C_LRP(p) - C_MRP(p)) / 2` over the configured thresholds.
///
/// The imputation noise at threshold index `t` is seeded with
/// `derive(config.seed, t)` for both modes, so identical masks give
/// identical perturbed images.
pub fn road_score<B: Backend + ?Sized>(
    model: &B,
    input: &Tensor4,
    saliency: &Map2,
    target_class: usize,
    config: &RoadConfig,
) -> Result<f64> {
    config.validate()?;
    let (h, w) = input.hw();
    if saliency.height != h || saliency.width != w {
        return Err(Error::Dimension(alloc::format!(
            "saliency {}x{} does not match input {h}x{w}",
            saliency.height,
            saliency.width
        )));
    }
    let base = checked_score(model, input, target_class, config.score)?;
    let mut total = 0.0;
    for (t, &p) in config.thresholds.iter().enumerate() {
        let noise_seed = seeds::derive(config.seed, t as u64);
        let delta = |mode| -> Result<f64> {
            let mask = rank_pixels(saliency, mode, p)?;
            let perturbed = noisy_linear_impute(input, &mask, config.noise_std, noise_seed)?;
            Ok(checked_score(model, &perturbed, target_class, config.score)? - base)
        };
        let lrp = delta(PerturbMode::Lrp)?;
        let mrp = delta(PerturbMode::Mrp)?;
        total += (lrp - mrp) / 2.0;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct YbRoadEntry {
    pub layer: LayerDescriptor,
    pub road: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct YbRoadSeries {
    pub entries: Vec<YbRoadEntry>,
    pub mean: f64,
    pub max: f64,
    /// First entry attaining `max`.
    pub argmax: usize,
    pub thresholds: Vec<f64>,
}

impl YbRoadSeries {
    pub fn from_entries(entries: Vec<YbRoadEntry>, thresholds: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mean = entries.iter().map(|e| e.road).sum::<f64>() / entries.len() as f64;
        let mut argmax = 0;
        for (i, e) in entries.iter().enumerate() {
            if e.road > entries[argmax].road {
                argmax = i;
            }
        }
        Ok(Self { max: entries[argmax].road, mean, argmax, entries, thresholds })
    }

    pub fn argmax_layer(&self) -> &LayerDescriptor {
        &self.entries[self.argmax].layer
    }

    pub fn final_road(&self) -> f64 {
        self.entries.last().map(|e| e.road).unwrap_or(0.0)
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.road).collect()
    }
}

/// ROAD of every retained layer of an existing sequence.
pub fn ybroad_from_sequence<B: Backend + ?Sized>(
    model: &B,
    input: &Tensor4,
    target_class: usize,
    sequence: &LayerSequence,
    config: &RoadConfig,
) -> Result<YbRoadSeries> {
    let entries = sequence
        .retained()
        .map(|m| {
            Ok(YbRoadEntry { layer: m.layer.clone(), road: road_score(model, input, &m.local_norm, target_class, config)? })
        })
        .collect::<Result<Vec<_>>>()?;
    YbRoadSeries::from_entries(entries, config.thresholds.clone())
}

/// Runs the layer-wise CAM and scores every retained layer.
pub fn ybroad<B: Backend + ?Sized>(
    model: &B,
    input: &Tensor4,
    target_class: usize,
    variant: CamVariant,
    config: &RoadConfig,
) -> Result<YbRoadSeries> {
    config.validate()?;
    let sequence = run_layerwise(model, input, target_class, variant, config.seed)?;
    ybroad_from_sequence(model, input, target_class, &sequence, config)
}

/// One row of a ybROAD-vs-final-layer comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub model: String,
    pub image: String,
    pub target_class: String,
    pub cam: String,
    pub mean_layer_road: f64,
    pub final_layer_road: f64,
    pub max_ybroad: f64,
    pub difference: f64,
}

impl ComparisonRow {
    pub const HEADER: [&'static str; 8] = [
        "Model Architecture",
        "Image Name",
        "Target Class",
        "Selected CAM",
        "Mean Layer-wise ROAD",
        "Final Layer ROAD",
        "ybROAD",
        "Difference (ybROAD - Final)",
    ];
}

pub fn comparison_row(
    model: &str,
    image: &str,
    target_class: &str,
    cam: CamVariant,
    series: &YbRoadSeries,
    final_layer_road: f64,
) -> ComparisonRow {
    ComparisonRow {
        model: model.into(),
        image: image.into(),
        target_class: target_class.into(),
        cam: cam.name().into(),
        mean_layer_road: series.mean,
        final_layer_road,
        max_ybroad: series.max,
        difference: series.max - final_layer_road,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[f64]) -> Map2 {
        Map2::from_vec(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn rank_examples() {
        let m = map(2, 2, &[0.9, 0.1, 0.4, 0.2]);
        assert_eq!(rank_pixels(&m, PerturbMode::Mrp, 50.0).unwrap(), vec![true, false, true, false]);
        assert_eq!(rank_pixels(&m, PerturbMode::Lrp, 50.0).unwrap(), vec![false, true, false, true]);
    }

    #[test]
    fn rank_near_total() {
        let m = map(3, 3, &[0.5; 9]);
        let mask = rank_pixels(&m, PerturbMode::Mrp, 8.0 / 9.0 * 100.0).unwrap();
        assert_eq!(mask.iter().filter(|&&b| b).count(), 8);
        // ties resolved toward low indices: the last pixel survives
        assert!(!mask[8]);
    }

    #[test]
    fn rank_rejects_bad_percentages() {
        let m = map(2, 2, &[0.0; 4]);
        for p in [0.0, 100.0, -5.0, f64::NAN] {
            assert!(matches!(rank_pixels(&m, PerturbMode::Lrp, p), Err(Error::Range(_))));
        }
        assert_eq!(removal_count(1.0, 4).unwrap(), 1);
    }

    #[test]
    fn single_pixel_closed_form() {
        // 3x3 image, centre removed; edges 1..4, diagonals 5..8
        let img = Tensor4::from_vec([1, 1, 3, 3], vec![5.0, 1.0, 6.0, 2.0, 0.0, 3.0, 7.0, 4.0, 8.0]).unwrap();
        let mut mask = vec![false; 9];
        mask[4] = true;
        let out = noisy_linear_impute(&img, &mask, 0.0, 0).unwrap();
        assert!((out.get(0, 0, 1, 1) - (10.0 / 6.0 + 26.0 / 12.0)).abs() < 1e-9);
        for i in [0, 1, 2, 3, 5, 6, 7, 8] {
            assert_eq!(out.data()[i], img.data()[i]);
        }
    }

    #[test]
    fn noise_only_touches_imputed_pixels() {
        let img = Tensor4::filled([1, 2, 4, 4], 0.3);
        let mut mask = vec![false; 16];
        mask[5] = true;
        mask[10] = true;
        let out = noisy_linear_impute(&img, &mask, 0.5, 9).unwrap();
        for c in 0..2 {
            for i in 0..16 {
                let changed = out.channel(c)[i] != img.channel(c)[i];
                assert_eq!(changed, mask[i]);
            }
        }
        assert_eq!(out, noisy_linear_impute(&img, &mask, 0.5, 9).unwrap());
        assert_ne!(out.channel(0), out.channel(1));
    }

    #[test]
    fn series_statistics() {
        let layer = |i: usize| LayerDescriptor {
            id: crate::LayerId(i as u32),
            name: alloc::format!("l{i}"),
            kind: crate::LayerKind::Conv,
            exec_index: i,
            out_shape: vec![1, 1, 2, 2],
            param_count: 0,
        };
        let entries: Vec<YbRoadEntry> =
            [0.1, 0.4, 0.4, -0.2].iter().enumerate().map(|(i, &r)| YbRoadEntry { layer: layer(i), road: r }).collect();
        let s = YbRoadSeries::from_entries(entries, DEFAULT_THRESHOLDS.to_vec()).unwrap();
        assert_eq!(s.argmax, 1);
        assert_eq!(s.max, 0.4);
        assert!((s.mean - 0.175).abs() < 1e-15);
        assert_eq!(s.argmax_layer().name, "l1");
        assert!(YbRoadSeries::from_entries(vec![], vec![]).is_err());
        let row = comparison_row("fixture", "img", "0", CamVariant::GradCam, &s, s.final_road());
        assert_eq!(row.difference, 0.4 - -0.2);
    }

    #[test]
    fn empty_thresholds_rejected() {
        let cfg = RoadConfig { thresholds: vec![], ..RoadConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
