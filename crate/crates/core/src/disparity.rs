//! Dense disparity maps with a validity mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit of the stored disparities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Quarter-resolution feature grid.
    Feature,
    /// Input image resolution.
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    resolution: Resolution,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl DisparityMap {
    pub fn new(
        width: usize,
        height: usize,
        resolution: Resolution,
        values: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::Input(format!(
                "disparity buffers do not match {width}x{height}"
            )));
        }
        Ok(Self {
            width,
            height,
            resolution,
            values,
            valid,
        })
    }

    pub fn invalid(width: usize, height: usize, resolution: Resolution) -> Self {
        Self {
            width,
            height,
            resolution,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Builds a map where NaN or infinite values mark invalid pixels.
    pub fn from_nan_encoded(
        width: usize,
        height: usize,
        resolution: Resolution,
        raw: Vec<f32>,
    ) -> Result<Self> {
        let valid: Vec<bool> = raw.iter().map(|v| v.is_finite()).collect();
        let values = raw
            .into_iter()
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .collect();
        Self::new(width, height, resolution, values, valid)
    }

    /// Values with NaN in place of invalid pixels.
    pub fn to_nan_encoded(&self) -> Vec<f32> {
        self.values
            .iter()
            .zip(&self.valid)
            .map(|(&v, &ok)| if ok { v } else { f32::NAN })
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.values[i])
    }

    pub fn value(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: Option<f32>) {
        let i = y * self.width + x;
        match value {
            Some(v) => {
                self.values[i] = v;
                self.valid[i] = true;
            }
            None => {
                self.values[i] = 0.0;
                self.valid[i] = false;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Bilinear upsampling of a feature-resolution map to `width`x`height`,
    /// scaling values by `factor`. Invalid samples are dropped from the
    /// interpolation weights; a pixel with no valid support stays invalid.
    pub fn upsample(&self, width: usize, height: usize, factor: usize) -> DisparityMap {
        let scale = factor as f32;
        let mut values = vec![0.0f32; width * height];
        let mut valid = vec![false; width * height];
        let max_x = (self.width - 1) as f32;
        let max_y = (self.height - 1) as f32;
        for v in 0..height {
            let sy = ((v as f32 + 0.5) / scale - 0.5).clamp(0.0, max_y);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = sy - y0 as f32;
            for u in 0..width {
                let sx = ((u as f32 + 0.5) / scale - 0.5).clamp(0.0, max_x);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = sx - x0 as f32;
                let taps = [
                    (x0, y0, (1.0 - wx) * (1.0 - wy)),
                    (x1, y0, wx * (1.0 - wy)),
                    (x0, y1, (1.0 - wx) * wy),
                    (x1, y1, wx * wy),
                ];
                let mut acc = 0.0f32;
                let mut wsum = 0.0f32;
                for (x, y, w) in taps {
                    let i = y * self.width + x;
                    if self.valid[i] && w > 0.0 {
                        acc += w * self.values[i];
                        wsum += w;
                    }
                }
                if wsum > 0.0 {
                    let o = v * width + u;
                    values[o] = acc / wsum * scale;
                    valid[o] = true;
                }
            }
        }
        DisparityMap {
            width,
            height,
            resolution: Resolution::Full,
            values,
            valid,
        }
    }
}
