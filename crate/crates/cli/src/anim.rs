//! GIF89a assembly over the fixed 6×7×6 colour cube.

use std::borrow::Cow;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use camanim_core::render::{cube_palette, gif_delay_cs, quantize_to_cube, RgbImage};

use crate::error::{AppError, AppResult};

/// Writes `frames` in order as an infinitely looping GIF with a global palette.
pub fn write_gif(path: &Path, frames: &[RgbImage], fps: f64) -> AppResult<()> {
    let first = frames.first().ok_or(camanim_core::Error::EmptyAnimation)?;
    let (w, h) = (first.width, first.height);
    if frames.iter().any(|f| f.width != w || f.height != h) {
        return Err(camanim_core::Error::Dimension("animation frames differ in size".into()).into());
    }
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(camanim_core::Error::Dimension(format!("{w}x{h} exceeds the GIF size limit")).into());
    }
    let delay = gif_delay_cs(fps)?;
    let encode_err = |e: gif::EncodingError| AppError::Encode { path: path.to_path_buf(), message: e.to_string() };
    let file = File::create(path).map_err(AppError::io(path))?;
    let mut encoder = gif::Encoder::new(BufWriter::new(file), w as u16, h as u16, &cube_palette()).map_err(encode_err)?;
    encoder.set_repeat(gif::Repeat::Infinite).map_err(encode_err)?;
    for image in frames {
        let frame = gif::Frame {
            width: w as u16,
            height: h as u16,
            delay,
            buffer: Cow::Owned(quantize_to_cube(image)),
            ..gif::Frame::default()
        };
        encoder.write_frame(&frame).map_err(encode_err)?;
    }
    Ok(())
}

/// Decoded animation: per-frame palette indices and delays.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedGif {
    pub width: usize,
    pub height: usize,
    pub infinite_loop: bool,
    pub frames: Vec<(Vec<u8>, u16)>,
}

pub fn read_gif(path: &Path) -> AppResult<DecodedGif> {
    let decode_err = |e: gif::DecodingError| AppError::Decode { path: path.to_path_buf(), message: e.to_string() };
    let file = File::open(path).map_err(AppError::io(path))?;
    let mut options = gif::DecodeOptions::new();
    options.set_color_output(gif::ColorOutput::Indexed);
    let mut decoder = options.read_info(file).map_err(decode_err)?;
    let (width, height) = (decoder.width() as usize, decoder.height() as usize);
    let mut frames = Vec::new();
    while let Some(frame) = decoder.read_next_frame().map_err(decode_err)? {
        frames.push((frame.buffer.to_vec(), frame.delay));
    }
    let infinite_loop = decoder.repeat() == gif::Repeat::Infinite;
    Ok(DecodedGif { width, height, infinite_loop, frames })
}
