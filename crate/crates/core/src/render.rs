//! Heatmap colouring, overlays, captions, frame naming and the fixed GIF
//! palette.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::font;
use crate::tensor::{Map2, Tensor4};

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = core::iter::repeat(rgb).take(width * height).flatten().collect();
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!("{} bytes for a {width}x{height} RGB image", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.data[i..i + 3].copy_from_slice(&rgb);
        }
    }
}

const JET: [(f64, [f64; 3]); 6] = [
    (0.0, [0.0, 0.0, 128.0]),
    (0.125, [0.0, 0.0, 255.0]),
    (0.375, [0.0, 255.0, 255.0]),
    (0.625, [255.0, 255.0, 0.0]),
    (0.875, [255.0, 0.0, 0.0]),
    (1.0, [128.0, 0.0, 0.0]),
];

fn half_up(v: f64) -> u8 {
    libm::floor(v + 0.5).clamp(0.0, 255.0) as u8
}

/// Jet-style colour for one value in `[0, 1]`.
pub fn jet(value: f64) -> Result<[u8; 3]> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::Range(format!("colormap input {value} outside [0, 1]")));
    }
    let seg = JET.windows(2).find(|w| value <= w[1].0).expect("value within control range");
    let (x0, c0) = seg[0];
    let (x1, c1) = seg[1];
    let t = (value - x0) / (x1 - x0);
    Ok([0, 1, 2].map(|i| half_up(c0[i] + t * (c1[i] - c0[i]))))
}

pub fn apply_colormap(map: &Map2) -> Result<RgbImage> {
    let mut data = Vec::with_capacity(map.data.len() * 3);
    for &v in &map.data {
        data.extend_from_slice(&jet(v)?);
    }
    RgbImage::from_raw(map.width, map.height, data)
}

/// `alpha · heatmap + (1 - alpha) · base` per channel, rounded half-up.
pub fn blend(heatmap: &RgbImage, base: &RgbImage, alpha: f64) -> Result<RgbImage> {
    if heatmap.width != base.width || heatmap.height != base.height {
        return Err(Error::Dimension(format!(
            "heatmap {}x{} vs base {}x{}",
            heatmap.width, heatmap.height, base.width, base.height
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Range(format!("alpha {alpha} outside [0, 1]")));
    }
    let data = heatmap
        .data
        .iter()
        .zip(&base.data)
        .map(|(&h, &b)| half_up(alpha * h as f64 + (1.0 - alpha) * b as f64))
        .collect();
    RgbImage::from_raw(base.width, base.height, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormMode {
    Local,
    Global,
}

impl NormMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NormMode::Local => "local",
            NormMode::Global => "global",
        }
    }
}

/// One rendered animation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CamFrame {
    pub rgb: RgbImage,
    pub layer_name: String,
    pub exec_index: usize,
    pub norm_mode: NormMode,
}

pub const CAPTION_HEIGHT: usize = font::GLYPH_HEIGHT + 2;

/// Blends `heatmap` onto `base`, optionally appending a caption strip.
pub fn overlay(
    heatmap: &RgbImage,
    base: &RgbImage,
    alpha: f64,
    layer_name: &str,
    exec_index: usize,
    norm_mode: NormMode,
    caption: bool,
) -> Result<CamFrame> {
    let mut rgb = blend(heatmap, base, alpha)?;
    if caption {
        rgb = with_caption(&rgb, &format!("{exec_index} {layer_name}"));
    }
    Ok(CamFrame { rgb, layer_name: layer_name.into(), exec_index, norm_mode })
}

/// Appends a black strip with white text below the image; text is clipped
/// at the right edge.
pub fn with_caption(image: &RgbImage, text: &str) -> RgbImage {
    let mut out = RgbImage::new(image.width, image.height + CAPTION_HEIGHT);
    out.data[..image.data.len()].copy_from_slice(&image.data);
    let y0 = image.height + 1;
    font::draw_text(text, 1, y0, |x, y| out.put(x, y, [255, 255, 255]));
    out
}

/// Layer names become file-name safe: anything but ASCII alphanumerics and
/// `-` turns into `_`.
pub fn sanitize_layer_name(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn frame_filename(exec_index: usize, layer_name: &str) -> String {
    format!("frame_{exec_index:04}_{}.png", sanitize_layer_name(layer_name))
}

/// Per-frame GIF delay in centiseconds.
pub fn gif_delay_cs(fps: f64) -> Result<u16> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::Range(format!("fps {fps} must be positive")));
    }
    Ok(libm::round(100.0 / fps).clamp(1.0, u16::MAX as f64) as u16)
}

pub const CUBE_LEVELS: [usize; 3] = [6, 7, 6];

fn level_values(n: usize) -> Vec<u8> {
    (0..n).map(|i| libm::round(i as f64 * 255.0 / (n - 1) as f64) as u8).collect()
}

/// 6×7×6 RGB cube padded to 256 entries with black, flattened `r g b`.
pub fn cube_palette() -> Vec<u8> {
    let (r, g, b) = (level_values(6), level_values(7), level_values(6));
    let mut pal = Vec::with_capacity(256 * 3);
    for &rv in &r {
        for &gv in &g {
            for &bv in &b {
                pal.extend_from_slice(&[rv, gv, bv]);
            }
        }
    }
    pal.resize(256 * 3, 0);
    pal
}

fn nearest_level(levels: &[u8], v: u8) -> usize {
    let mut best = 0;
    for (i, &l) in levels.iter().enumerate() {
        if (l as i32 - v as i32).abs() < (levels[best] as i32 - v as i32).abs() {
            best = i;
        }
    }
    best
}

/// Palette indices into [`cube_palette`] (Euclidean nearest colour; the cube
/// is separable so each channel is matched independently).
pub fn quantize_to_cube(image: &RgbImage) -> Vec<u8> {
    let (r, g, b) = (level_values(6), level_values(7), level_values(6));
    image
        .data
        .chunks_exact(3)
        .map(|px| (nearest_level(&r, px[0]) * 42 + nearest_level(&g, px[1]) * 6 + nearest_level(&b, px[2])) as u8)
        .collect()
}

/// Grayscale or RGB `[0, 1]` image tensor to bytes (first batch entry).
pub fn tensor_to_rgb(image: &Tensor4) -> Result<RgbImage> {
    let [_, c, h, w] = image.shape();
    if c != 1 && c != 3 {
        return Err(Error::Dimension(format!("cannot display {c}-channel image")));
    }
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|i| half_up(image.get(0, if c == 1 { 0 } else { i }, y, x).clamp(0.0, 1.0) * 255.0));
            out.put(x, y, px);
        }
    }
    Ok(out)
}
