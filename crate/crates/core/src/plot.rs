//! Minimal line-plot rasterizer for ybROAD series.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::font;
use crate::render::RgbImage;

/// Vertical padding added above and below the data range.
pub const Y_PADDING: f64 = 0.05;

const MARGIN_LEFT: usize = 44;
const MARGIN_RIGHT: usize = 16;
const MARGIN_TOP: usize = 20;
const MARGIN_BOTTOM: usize = 24;

const BLACK: [u8; 3] = [0, 0, 0];
const GRAY: [u8; 3] = [190, 190, 190];
const LINE: [u8; 3] = [31, 119, 180];
const HIGHLIGHT: [u8; 3] = [214, 39, 40];

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub image: RgbImage,
    /// Series positions that carry an x tick.
    pub x_ticks: Vec<usize>,
    pub y_min: f64,
    pub y_max: f64,
    pub max_index: usize,
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), rgb: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            if x >= 0 && y >= 0 {
                self.img.put(x as usize, y as usize, rgb);
            }
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn disc(&mut self, (cx, cy): (i64, i64), r: i64, rgb: [u8; 3]) {
        for y in -r..=r {
            for x in -r..=r {
                if x * x + y * y <= r * r && cx + x >= 0 && cy + y >= 0 {
                    self.img.put((cx + x) as usize, (cy + y) as usize, rgb);
                }
            }
        }
    }

    fn text(&mut self, s: &str, x: usize, y: usize, rgb: [u8; 3]) {
        let img = &mut self.img;
        font::draw_text(s, x, y, |px, py| img.put(px, py, rgb));
    }
}

/// Renders `values` against their series position, annotating the first
/// maximum.
pub fn plot_series(values: &[f64], width: usize, height: usize) -> Result<Plot> {
    if values.is_empty() {
        return Err(Error::EmptySequence);
    }
    if width < MARGIN_LEFT + MARGIN_RIGHT + 10 || height < MARGIN_TOP + MARGIN_BOTTOM + 10 {
        return Err(Error::Dimension(format!("plot canvas {width}x{height} too small")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Range("series contains non-finite values".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (y_min, y_max) = (lo - Y_PADDING, hi + Y_PADDING);
    let mut max_index = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[max_index] {
            max_index = i;
        }
    }

    let (left, right) = (MARGIN_LEFT as i64, (width - MARGIN_RIGHT) as i64);
    let (top, bottom) = (MARGIN_TOP as i64, (height - MARGIN_BOTTOM) as i64);
    let n = values.len();
    let px = |i: usize| -> i64 {
        if n == 1 {
            (left + right) / 2
        } else {
            left + libm::round(i as f64 * (right - left) as f64 / (n - 1) as f64) as i64
        }
    };
    let py = |v: f64| -> i64 { bottom - libm::round((v - y_min) / (y_max - y_min) * (bottom - top) as f64) as i64 };

    let mut c = Canvas { img: RgbImage::filled(width, height, [255, 255, 255]) };
    if y_min < 0.0 && y_max > 0.0 {
        let zy = py(0.0);
        for x in (left..=right).step_by(4) {
            c.line((x, zy), ((x + 1).min(right), zy), GRAY);
        }
    }
    c.line((left, top), (left, bottom), BLACK);
    c.line((left, bottom), (right, bottom), BLACK);

    let stride = (n + 19) / 20;
    let x_ticks: Vec<usize> = (0..n).step_by(stride.max(1)).collect();
    for &i in &x_ticks {
        let x = px(i);
        c.line((x, bottom), (x, bottom + 3), BLACK);
        let label = format!("{i}");
        let lx = (x - font::text_width(&label) as i64 / 2).max(0) as usize;
        c.text(&label, lx, (bottom + 6) as usize, BLACK);
    }
    for v in [y_min, (y_min + y_max) / 2.0, y_max] {
        let y = py(v);
        c.line((left - 3, y), (left, y), BLACK);
        let label = format!("{v:.2}");
        let lx = (left as usize).saturating_sub(font::text_width(&label) + 5);
        c.text(&label, lx, (y - 2).max(0) as usize, BLACK);
    }
    c.text("layer", (right as usize).saturating_sub(font::text_width("layer")), height - 8, BLACK);
    c.text("road", 2, 4, BLACK);

    for i in 1..n {
        c.line((px(i - 1), py(values[i - 1])), (px(i), py(values[i])), LINE);
    }
    for (i, &v) in values.iter().enumerate() {
        c.disc((px(i), py(v)), 2, LINE);
    }
    let (mx, my) = (px(max_index), py(values[max_index]));
    c.disc((mx, my), 4, HIGHLIGHT);
    let label = format!("max {:.3} at {}", values[max_index], max_index);
    let lx = (mx as usize).min(width.saturating_sub(font::text_width(&label) + 2));
    c.text(&label, lx, (my - 12).max(1) as usize, HIGHLIGHT);

    Ok(Plot { image: c.img, x_ticks, y_min, y_max, max_index })
}
