use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::Image;
use crate::{Error, Result};

fn decode_err(e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) => Error::Io(io),
        other => Error::UnsupportedFormat(other.to_string()),
    }
}

/// Loads an 8-bit grayscale or RGB PNG (palette images without transparency
/// are expanded to RGB). Byte `v` maps to `v / 255`.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let file = BufReader::new(File::open(path)?);
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(decode_err)?;

    let info = reader.info();
    let (src_color, src_depth) = (info.color_type, info.bit_depth);
    let has_trns = info.trns.is_some();
    match src_color {
        ColorType::Indexed if has_trns => {
            return Err(Error::UnsupportedFormat("palette PNG with alpha".into()))
        }
        ColorType::Indexed => {}
        ColorType::Grayscale | ColorType::Rgb if src_depth == BitDepth::Eight && !has_trns => {}
        ColorType::Grayscale | ColorType::Rgb if src_depth == BitDepth::Sixteen => {
            return Err(Error::UnsupportedFormat("16-bit PNG".into()))
        }
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{other:?} at {src_depth:?} bits"
            )))
        }
    }

    let mut buf = vec![
        0u8;
        reader
            .output_buffer_size()
            .ok_or_else(|| { Error::UnsupportedFormat("PNG too large".into()) })?
    ];
    let frame = reader.next_frame(&mut buf).map_err(decode_err)?;
    let channels = match frame.color_type {
        ColorType::Grayscale => 1,
        ColorType::Rgb => 3,
        other => return Err(Error::UnsupportedFormat(format!("decoded as {other:?}"))),
    };
    if frame.bit_depth != BitDepth::Eight {
        return Err(Error::UnsupportedFormat(
            "decoded bit depth is not 8".into(),
        ));
    }
    let (w, h) = (frame.width as usize, frame.height as usize);
    let stride = frame.line_size;
    Ok(Image::from_fn(channels, h, w, |c, y, x| {
        f64::from(buf[y * stride + x * channels + c]) / 255.0
    }))
}

/// Writes a 1-channel image as grayscale or a 3-channel image as RGB. Values
/// are clamped to [0, 1] and rounded to the nearest 8-bit level.
pub fn save_png(x: &Image, path: impl AsRef<Path>) -> Result<()> {
    let color = match x.channels() {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        c => {
            return Err(Error::UnsupportedFormat(format!(
                "cannot write a {c}-channel image as PNG"
            )))
        }
    };
    let (c, h, w) = x.shape();
    let mut bytes = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                bytes.push(quantize(x.get(ch, y, xx)));
            }
        }
    }
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, w as u32, h as u32);
    encoder.set_color(color);
    encoder.set_depth(BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    writer
        .finish()
        .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    Ok(())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
