use std::fs;
use std::path::Path;

use super::HeaderReader;
use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Reads binary (P5) PGM with maxval up to 255. Values are rescaled to 0..=255.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    decode(&fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    fs::write(path, encode(image))?;
    Ok(())
}

pub(crate) fn encode(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Result<GrayImage> {
    let mut header = HeaderReader::new(bytes, true);
    let magic = header.token("magic")?;
    if magic != "P5" {
        return Err(Error::parse(0, format!("expected P5 magic, found '{magic}'")));
    }
    let dims_at = header.offset();
    let width: usize = header.number("width")?;
    let height: usize = header.number("height")?;
    if width == 0 || height == 0 {
        return Err(Error::parse(dims_at, "zero-size PGM"));
    }
    let max_at = header.offset();
    let maxval: u32 = header.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(max_at, format!("unsupported maxval {maxval}")));
    }
    let start = header.end_of_header()?;
    let count = width * height;
    let payload = &bytes[start..];
    if payload.len() < count {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated PGM payload: need {count} bytes, have {}", payload.len()),
        ));
    }
    let data = if maxval == 255 {
        payload[..count].to_vec()
    } else {
        payload[..count]
            .iter()
            .map(|&v| ((v as u32).min(maxval) * 255 / maxval) as u8)
            .collect()
    };
    GrayImage::new(width, height, data)
}
