//! Per-pixel disparity intervals from ray marching the visual hull.

use std::path::Path;

use rayon::prelude::*;

use super::camera::{StereoRig, MIN_DEPTH};
use super::hull::VisualHull;
use crate::error::{Error, Result};
use crate::io::{read_pfm, write_pfm, PfmImage};

/// Feature grid is a quarter of the input resolution.
pub const FEATURE_SCALE: f64 = 0.25;

/// Disparity interval per feature pixel, in feature-resolution units.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundsMap {
    width: usize,
    height: usize,
    b_min: Vec<f32>,
    b_max: Vec<f32>,
    valid: Vec<bool>,
}

impl BoundsMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            b_min: vec![0.0; width * height],
            b_max: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(b_min, b_max)` at a pixel, `None` where no hull was hit.
    pub fn get(&self, x: usize, y: usize) -> Option<(f32, f32)> {
        let i = y * self.width + x;
        self.valid[i].then(|| (self.b_min[i], self.b_max[i]))
    }

    /// Sets an interval, clamped to `[0, width]`. `None` marks the pixel invalid.
    pub fn set(&mut self, x: usize, y: usize, interval: Option<(f32, f32)>) {
        let i = y * self.width + x;
        match interval {
            Some((lo, hi)) => {
                let cap = self.width as f32;
                let lo = lo.clamp(0.0, cap);
                self.b_min[i] = lo;
                self.b_max[i] = hi.clamp(lo, cap);
                self.valid[i] = true;
            }
            None => {
                self.b_min[i] = 0.0;
                self.b_max[i] = 0.0;
                self.valid[i] = false;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Three-channel PFM: `b_min`, `b_max`, validity (1 or 0). Invalid
    /// pixels carry NaN in both interval channels.
    pub fn to_pfm(&self) -> PfmImage {
        let mut data = Vec::with_capacity(self.width * self.height * 3);
        for i in 0..self.width * self.height {
            if self.valid[i] {
                data.extend_from_slice(&[self.b_min[i], self.b_max[i], 1.0]);
            } else {
                data.extend_from_slice(&[f32::NAN, f32::NAN, 0.0]);
            }
        }
        PfmImage {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub fn from_pfm(pfm: &PfmImage) -> Result<Self> {
        if pfm.channels != 3 {
            return Err(Error::Input(format!(
                "bounds PFM must have 3 channels, found {}",
                pfm.channels
            )));
        }
        let mut map = Self::invalid(pfm.width, pfm.height);
        for (i, px) in pfm.data.chunks_exact(3).enumerate() {
            let (x, y) = (i % pfm.width, i / pfm.width);
            let ok = px[2] > 0.5 && px[0].is_finite() && px[1].is_finite();
            map.set(x, y, ok.then_some((px[0], px[1])));
        }
        Ok(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_pfm(path, &self.to_pfm())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_pfm(&read_pfm(path)?)
    }
}

/// Size of the feature grid for an input dimension.
pub fn feature_dim(full: usize, scale: f64) -> usize {
    (full as f64 * scale).ceil() as usize
}

/// Depth interval `[z_near, z_far]` covered by Inside leaves along the ray
/// through full-resolution coordinate `(u, v)` of the left camera.
pub fn ray_depth_interval(hull: &VisualHull, rig: &StereoRig, u: f64, v: f64) -> Option<(f64, f64)> {
    let cam = &rig.left;
    let origin = cam.center();
    let dir = cam.ray_direction(u, v);

    // Slab test against the root cube, parametrized by camera depth.
    let root = hull.root();
    let mut t0 = MIN_DEPTH;
    let mut t1 = f64::INFINITY;
    for axis in 0..3 {
        let lo = root.center[axis] - root.half;
        let hi = root.center[axis] + root.half;
        if dir[axis].abs() < 1e-15 {
            if origin[axis] < lo || origin[axis] >= hi {
                return None;
            }
            continue;
        }
        let a = (lo - origin[axis]) / dir[axis];
        let b = (hi - origin[axis]) / dir[axis];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    if t0 >= t1 {
        return None;
    }

    let step = 0.5 * hull.finest_edge() / dir.norm();
    let mut first = None;
    let mut last = None;
    let mut i = 0u64;
    loop {
        let z = t0 + i as f64 * step;
        if z > t1 {
            break;
        }
        if hull.contains(&(origin + dir * z)) {
            first.get_or_insert(z);
            last = Some(z);
        }
        i += 1;
    }
    // The true transitions lie within one step outside the sampled hits,
    // and never beyond the root cube.
    Some(((first? - step).max(t0), (last? + step).min(t1)))
}

/// Casts one ray per feature pixel center of the left view and converts the
/// hull's depth extent along it into a disparity interval at `feature_scale`.
pub fn compute_bounds(hull: &VisualHull, rig: &StereoRig, feature_scale: f64) -> BoundsMap {
    let width = feature_dim(rig.width(), feature_scale);
    let height = feature_dim(rig.height(), feature_scale);
    let mut map = BoundsMap::invalid(width, height);
    if hull.is_empty() {
        return map;
    }
    let focal = feature_scale * rig.fx() * rig.baseline;
    let rows: Vec<Vec<Option<(f32, f32)>>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let v = (y as f64 + 0.5) / feature_scale - 0.5;
            (0..width)
                .map(|x| {
                    let u = (x as f64 + 0.5) / feature_scale - 0.5;
                    ray_depth_interval(hull, rig, u, v)
                        .map(|(near, far)| ((focal / far) as f32, (focal / near) as f32))
                })
                .collect()
        })
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, interval) in row.into_iter().enumerate() {
            map.set(x, y, interval);
        }
    }
    map
}
