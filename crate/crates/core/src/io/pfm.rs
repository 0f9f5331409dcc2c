use std::fs;
use std::path::Path;

use super::HeaderReader;
use crate::error::{Error, Result};

/// Decoded PFM payload. `data` is row-major top-to-bottom with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<PfmImage> {
    decode(&fs::read(path)?)
}

/// Writes little-endian (negative scale) PFM.
pub fn write_pfm(path: impl AsRef<Path>, image: &PfmImage) -> Result<()> {
    fs::write(path, encode(image)?)?;
    Ok(())
}

pub(crate) fn encode(image: &PfmImage) -> Result<Vec<u8>> {
    let magic = match image.channels {
        1 => "Pf",
        3 => "PF",
        n => return Err(Error::Input(format!("PFM supports 1 or 3 channels, got {n}"))),
    };
    let row_len = image.width * image.channels;
    if image.data.len() != row_len * image.height {
        return Err(Error::Input("PFM payload does not match dimensions".into()));
    }
    let mut out = format!("{magic}\n{} {}\n-1.0\n", image.width, image.height).into_bytes();
    out.reserve(image.data.len() * 4);
    for row in image.data.chunks(row_len.max(1)).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<PfmImage> {
    let mut header = HeaderReader::new(bytes, false);
    let channels = match header.token("magic")? {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::parse(0, format!("unknown PFM magic '{other}'"))),
    };
    let dims_at = header.offset();
    let width: usize = header.number("width")?;
    let height: usize = header.number("height")?;
    if width == 0 || height == 0 {
        return Err(Error::parse(dims_at, "zero-size PFM"));
    }
    let scale_at = header.offset();
    let scale: f32 = header.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::parse(scale_at, "PFM scale must be finite and nonzero"));
    }
    let little_endian = scale < 0.0;
    let start = header.end_of_header()?;

    let count = width * height * channels;
    let payload = &bytes[start..];
    if payload.len() < count * 4 {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated PFM payload: need {} bytes, have {}", count * 4, payload.len()),
        ));
    }
    let row_len = width * channels;
    let mut data = vec![0.0f32; count];
    for (file_row, chunk) in payload[..count * 4].chunks_exact(row_len * 4).enumerate() {
        let y = height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let raw = [b[0], b[1], b[2], b[3]];
            data[y * row_len + i] = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }
    Ok(PfmImage {
        width,
        height,
        channels,
        data,
    })
}
