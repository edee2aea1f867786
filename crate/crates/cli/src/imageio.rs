//! PNG decoding/encoding and model-input preprocessing.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use camanim_core::render::RgbImage;
use camanim_core::resize::bilinear_resize;
use camanim_core::{Map2, Tensor4};

use crate::error::{AppError, AppResult};

/// ITU-R BT.601 luma weights, used when an RGB image feeds a one-channel model.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// An 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn read_png(path: &Path) -> AppResult<DecodedImage> {
    let decode_err = |message: String| AppError::Decode { path: path.to_path_buf(), message };
    let file = File::open(path).map_err(AppError::io(path))?;
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| decode_err(e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(decode_err(format!("unsupported bit depth {depth:?}; expected 8-bit")));
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(decode_err(format!("unsupported colour type {other:?}; expected grayscale or RGB"))),
    };
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| decode_err(e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok(DecodedImage { width: info.width as usize, height: info.height as usize, channels, data: buf })
}

pub fn write_png(path: &Path, image: &RgbImage) -> AppResult<()> {
    let encode_err = |e: png::EncodingError| AppError::Encode { path: path.to_path_buf(), message: e.to_string() };
    let file = File::create(path).map_err(AppError::io(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&image.data).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

/// Writes a one-channel `[0, 1]` tensor as an 8-bit grayscale PNG.
pub fn write_gray_png(path: &Path, image: &Tensor4) -> AppResult<()> {
    let encode_err = |e: png::EncodingError| AppError::Encode { path: path.to_path_buf(), message: e.to_string() };
    let (h, w) = image.hw();
    let bytes: Vec<u8> = image.channel(0).iter().map(|v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8).collect();
    let file = File::create(path).map_err(AppError::io(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

/// Per-channel standardization applied after scaling to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fixture_default() -> Self {
        Self { mean: vec![0.5], std: vec![0.5] }
    }

    fn for_channel(values: &[f64], c: usize) -> f64 {
        if values.len() == 1 {
            values[0]
        } else {
            values[c]
        }
    }

    fn validate(&self, channels: usize) -> AppResult<()> {
        for (name, v) in [("mean", &self.mean), ("std", &self.std)] {
            if v.len() != 1 && v.len() != channels {
                return Err(AppError::Config(format!(
                    "{name} has {} values; expected 1 or {channels}",
                    v.len()
                )));
            }
        }
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return Err(AppError::Config("std values must be positive".into()));
        }
        Ok(())
    }
}

/// Model input plus the resized `[0, 1]` image used as the overlay base.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub input: Tensor4,
    pub display: Tensor4,
}

/// Converts channel counts (gray → RGB by replication, RGB → gray by luma),
/// resizes bilinearly, scales to `[0, 1]` and standardizes.
pub fn preprocess(
    image: &DecodedImage,
    target_hw: (usize, usize),
    model_channels: usize,
    norm: &Normalization,
) -> AppResult<Preprocessed> {
    norm.validate(model_channels)?;
    let (w, h) = (image.width, image.height);
    let plane = |c: usize| -> Vec<f64> {
        (0..w * h).map(|i| image.data[i * image.channels + c] as f64 / 255.0).collect()
    };
    let planes: Vec<Vec<f64>> = match (image.channels, model_channels) {
        (a, b) if a == b => (0..a).map(plane).collect(),
        (1, 3) => vec![plane(0); 3],
        (3, 1) => {
            let (r, g, b) = (plane(0), plane(1), plane(2));
            vec![(0..w * h).map(|i| LUMA[0] * r[i] + LUMA[1] * g[i] + LUMA[2] * b[i]).collect()]
        }
        (a, b) => {
            return Err(AppError::Channel(format!("cannot map a {a}-channel image onto a {b}-channel model")));
        }
    };
    let (th, tw) = target_hw;
    let mut display = Vec::with_capacity(model_channels * th * tw);
    for p in planes {
        let resized = bilinear_resize(&Map2::from_vec(h, w, p)?, th, tw)?;
        display.extend(resized.data);
    }
    let display = Tensor4::from_vec([1, model_channels, th, tw], display)?;
    let mut input = display.clone();
    for c in 0..model_channels {
        let (m, s) = (Normalization::for_channel(&norm.mean, c), Normalization::for_channel(&norm.std, c));
        input.channel_mut(c).iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    Ok(Preprocessed { input, display })
}

pub fn load_and_preprocess(
    path: &Path,
    target_hw: (usize, usize),
    model_channels: usize,
    norm: &Normalization,
) -> AppResult<Preprocessed> {
    preprocess(&read_png(path)?, target_hw, model_channels, norm)
}
