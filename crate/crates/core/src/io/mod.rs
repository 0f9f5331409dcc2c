//! File formats: PFM for float maps, binary PGM for images and masks.

mod pfm;
mod pgm;

pub use pfm::{read_pfm, write_pfm, PfmImage};
pub use pgm::{read_pgm, write_pgm};

use std::path::Path;

use crate::disparity::{DisparityMap, Resolution};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Mask};

/// Byte cursor over a header, tracking the offset for error reporting.
pub(crate) struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    allow_comments: bool,
}

impl<'a> HeaderReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], allow_comments: bool) -> Self {
        Self {
            bytes,
            pos: 0,
            allow_comments,
        }
    }

    /// Offset of the next token.
    pub(crate) fn offset(&mut self) -> usize {
        self.skip_space();
        self.pos
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if self.allow_comments && b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    pub(crate) fn token(&mut self, what: &str) -> Result<&'a str> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::parse(start, format!("non-ascii {what}")))
    }

    pub(crate) fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let start = self.offset();
        let tok = self.token(what)?;
        tok.parse()
            .map_err(|_| Error::parse(start, format!("invalid {what} '{tok}'")))
    }

    /// Consumes the single whitespace byte separating header from payload.
    pub(crate) fn end_of_header(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::parse(self.pos, "expected whitespace after header")),
        }
    }
}

pub fn read_disparity(path: impl AsRef<Path>, resolution: Resolution) -> Result<DisparityMap> {
    let pfm = read_pfm(path)?;
    if pfm.channels != 1 {
        return Err(Error::Input(format!(
            "expected single-channel PFM, found {} channels",
            pfm.channels
        )));
    }
    DisparityMap::from_nan_encoded(pfm.width, pfm.height, resolution, pfm.data)
}

pub fn write_disparity(path: impl AsRef<Path>, map: &DisparityMap) -> Result<()> {
    let pfm = PfmImage {
        width: map.width(),
        height: map.height(),
        channels: 1,
        data: map.to_nan_encoded(),
    };
    write_pfm(path, &pfm)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Ok(Mask::from_gray(&read_pgm(path)?))
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    write_pgm(path, &mask.to_gray())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    read_pgm(path)
}
