//! PNG and binary PGM ingestion and PNG output.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use super::IoError;
use crate::pipeline::ImageBuffer;

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Loads a PNG or binary PGM (P5) file as grayscale.
///
/// Color PNGs are converted with luma weights 0.299, 0.587, 0.114,
/// rounded half up. Alpha is ignored.
pub fn load_image(path: &Path) -> Result<ImageBuffer, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::from_io(path, e))?;
    if bytes.starts_with(PNG_MAGIC) {
        decode_png(&bytes).map_err(|detail| IoError::Corrupt {
            path: path.to_owned(),
            detail,
        })
    } else if bytes.starts_with(b"P5") {
        decode_pgm(&bytes).map_err(|detail| IoError::Corrupt {
            path: path.to_owned(),
            detail,
        })
    } else {
        Err(IoError::UnsupportedFormat {
            path: path.to_owned(),
        })
    }
}

fn luma(r: u8, g: u8, b: u8) -> u8 {
    // integer form of 0.299 R + 0.587 G + 0.114 B, rounded half up
    ((299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b) + 500) / 1000) as u8
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageBuffer, String> {
    let decoded =
        image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| e.to_string())?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let samples = match decoded {
        DynamicImage::ImageLuma8(gray) => gray.into_raw(),
        DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => decoded.to_luma8().into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma(p[0], p[1], p[2]))
            .collect(),
    };
    ImageBuffer::new(width, height, samples).map_err(|e| e.to_string())
}

/// Parses a binary PGM with maxval up to 255; smaller maxvals are
/// rescaled to the full 8-bit range.
pub fn decode_pgm(bytes: &[u8]) -> Result<ImageBuffer, String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated PGM header".to_owned()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("malformed PGM header at byte {start}"))?;
    }
    let [width, height, maxval] = fields;
    if !(1..=255).contains(&maxval) {
        return Err(format!("unsupported PGM maxval {maxval}"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after PGM header".to_owned());
    }
    pos += 1;
    let count = width
        .checked_mul(height)
        .ok_or_else(|| "PGM dimensions overflow".to_owned())?;
    let data = bytes
        .get(pos..pos + count)
        .ok_or_else(|| format!("PGM raster truncated: expected {count} bytes"))?;
    let samples = if maxval == 255 {
        data.to_vec()
    } else {
        data.iter()
            .map(|&v| {
                let v = usize::from(v).min(maxval);
                ((v * 255 * 2 + maxval) / (2 * maxval)) as u8
            })
            .collect()
    };
    ImageBuffer::new(width, height, samples).map_err(|e| e.to_string())
}

pub fn encode_pgm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.samples());
    out
}

pub fn encode_png(img: &ImageBuffer) -> Vec<u8> {
    let gray = image::GrayImage::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.samples().to_vec(),
    )
    .expect("buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    gray.write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding to memory does not fail");
    out.into_inner()
}

pub fn save_png(img: &ImageBuffer, path: &Path) -> Result<(), IoError> {
    fs::write(path, encode_png(img)).map_err(|e| IoError::from_io(path, e))
}
