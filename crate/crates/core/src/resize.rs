//! Bilinear resampling with half-pixel centres (corner alignment off).

use alloc::format;

use crate::error::{Error, Result};
use crate::tensor::Map2;

/// Sample positions and blend weights along one axis.
fn axis(src: usize, dst: usize, i: usize) -> (usize, usize, f64) {
    let scale = src as f64 / dst as f64;
    let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (libm::floor(pos) as usize).min(src - 1);
    let i1 = (i0 + 1).min(src - 1);
    (i0, i1, pos - i0 as f64)
}

/// Resizes in either direction. Both extents must be non-zero.
pub fn bilinear_resize(map: &Map2, height: usize, width: usize) -> Result<Map2> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!("cannot resize to {height}x{width}")));
    }
    if map.height == 0 || map.width == 0 {
        return Err(Error::Dimension("cannot resize an empty map".into()));
    }
    if map.height == height && map.width == width {
        return Ok(map.clone());
    }
    let mut out = Map2::zeros(height, width);
    for y in 0..height {
        let (y0, y1, ly) = axis(map.height, height, y);
        for x in 0..width {
            let (x0, x1, lx) = axis(map.width, width, x);
            let top = map.get(y0, x0) * (1.0 - lx) + map.get(y0, x1) * lx;
            let bottom = map.get(y1, x0) * (1.0 - lx) + map.get(y1, x1) * lx;
            out.data[y * width + x] = top * (1.0 - ly) + bottom * ly;
        }
    }
    Ok(out)
}

/// Upsamples a layer map to the input resolution.
pub fn upsample_to_input(map: &Map2, height: usize, width: usize) -> Result<Map2> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!("zero-sized target {height}x{width}")));
    }
    if height < map.height || width < map.width {
        return Err(Error::Dimension(format!(
            "target {height}x{width} is smaller than source {}x{}",
            map.height, map.width
        )));
    }
    bilinear_resize(map, height, width)
}
