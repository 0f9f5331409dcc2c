//! Deterministic per-pixel descriptors at quarter resolution.
//!
//! Each feature pixel summarizes the 16x16 full-resolution patch centered on
//! its 4x4 footprint: census bits comparing ring samples against the patch
//! center (mapped to +1/-1), followed by 16 mean-removed, contrast-normalized
//! block intensities. The concatenation is L2-normalized so that the inner
//! product of two descriptors is a matching cost in [-1, 1].

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Input pixels per feature pixel along each axis.
pub const DOWNSAMPLE: usize = 4;
const PATCH: usize = 16;
/// Offset from a footprint origin to its patch origin.
const PATCH_OFFSET: isize = 6;
const TAPS: usize = 16;
const TAP_BLOCK: usize = 4;
/// Keeps contrast normalization finite on flat patches, in gray levels.
const CONTRAST_EPS: f32 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub channels: usize,
    pub groups: usize,
    /// Radius of the outermost census ring in pixels.
    pub census_radius: f32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            groups: 8,
            census_radius: 7.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels <= TAPS + 2 {
            return Err(Error::Config(format!(
                "feature channels must exceed {}, got {}",
                TAPS + 2,
                self.channels
            )));
        }
        if self.groups == 0 || !self.channels.is_multiple_of(self.groups) {
            return Err(Error::Config(format!(
                "{} channels cannot be split into {} groups",
                self.channels, self.groups
            )));
        }
        if !(self.census_radius >= 1.0 && self.census_radius <= 7.5) {
            return Err(Error::Config(format!(
                "census radius must lie in [1, 7.5], got {}",
                self.census_radius
            )));
        }
        Ok(())
    }

    pub fn census_bits(&self) -> usize {
        self.channels - TAPS
    }
}

/// Census sample positions in patch coordinates: three concentric rings
/// holding 1/6, 1/3 and 1/2 of the samples.
fn census_pattern(bits: usize, radius: f32) -> Vec<(usize, usize)> {
    let inner = bits / 6;
    let middle = bits / 3;
    let rings = [
        (inner, radius / 3.0),
        (middle, radius * 2.0 / 3.0),
        (bits - inner - middle, radius),
    ];
    let center = (PATCH as f32 - 1.0) * 0.5;
    let mut out = Vec::with_capacity(bits);
    for (ring, &(count, r)) in rings.iter().enumerate() {
        for i in 0..count {
            let phase = if ring % 2 == 1 { 0.5 } else { 0.0 };
            let angle = std::f32::consts::TAU * (i as f32 + phase) / count as f32;
            let px = (center + r * angle.cos()).round().clamp(0.0, (PATCH - 1) as f32);
            let py = (center + r * angle.sin()).round().clamp(0.0, (PATCH - 1) as f32);
            out.push((px as usize, py as usize));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    groups: usize,
    /// Unit-norm descriptors.
    values: Vec<f32>,
    /// Same descriptors with each channel group normalized on its own.
    grouped: Vec<f32>,
}

/// Writes `v / |v|` into `out`; a zero vector maps to the uniform unit vector.
fn normalize_into(v: &[f32], out: &mut [f32]) {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for (o, &x) in out.iter_mut().zip(v) {
            *o = (f64::from(x) / norm) as f32;
        }
    } else {
        out.fill((1.0 / (v.len() as f64).sqrt()) as f32);
    }
}

/// Inner product accumulated in channel order.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn describe(image: &GrayImage, fx: usize, fy: usize, pattern: &[(usize, usize)], raw: &mut [f32]) {
    let ox = (fx * DOWNSAMPLE) as isize - PATCH_OFFSET;
    let oy = (fy * DOWNSAMPLE) as isize - PATCH_OFFSET;
    let px = |x: usize, y: usize| f32::from(image.get_clamped(ox + x as isize, oy + y as isize));

    let mid = PATCH / 2;
    let center = (px(mid - 1, mid - 1) + px(mid, mid - 1) + px(mid - 1, mid) + px(mid, mid)) * 0.25;
    let bits = pattern.len();
    for (slot, &(x, y)) in raw[..bits].iter_mut().zip(pattern) {
        *slot = if px(x, y) > center { 1.0 } else { -1.0 };
    }

    let taps = &mut raw[bits..];
    let per_row = PATCH / TAP_BLOCK;
    for (i, tap) in taps.iter_mut().enumerate() {
        let (bx, by) = ((i % per_row) * TAP_BLOCK, (i / per_row) * TAP_BLOCK);
        let mut sum = 0.0;
        for y in by..by + TAP_BLOCK {
            for x in bx..bx + TAP_BLOCK {
                sum += px(x, y);
            }
        }
        *tap = sum / (TAP_BLOCK * TAP_BLOCK) as f32;
    }
    let mean = taps.iter().sum::<f32>() / TAPS as f32;
    let var = taps.iter().map(|t| (t - mean) * (t - mean)).sum::<f32>() / TAPS as f32;
    let scale = 1.0 / (var.sqrt() + CONTRAST_EPS);
    for t in taps.iter_mut() {
        *t = (*t - mean) * scale;
    }
}

/// Descriptor grid of `ceil(w / 4) x ceil(h / 4)` pixels.
pub fn extract_features(image: &GrayImage, config: &FeatureConfig) -> Result<FeatureMap> {
    config.validate()?;
    if image.width() < PATCH || image.height() < PATCH {
        return Err(Error::Config(format!(
            "image must be at least {PATCH}x{PATCH}, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let width = image.width().div_ceil(DOWNSAMPLE);
    let height = image.height().div_ceil(DOWNSAMPLE);
    let c = config.channels;
    let group_len = c / config.groups;
    let pattern = census_pattern(config.census_bits(), config.census_radius);

    let mut values = vec![0.0f32; width * height * c];
    let mut grouped = vec![0.0f32; width * height * c];
    values
        .par_chunks_mut(width * c)
        .zip(grouped.par_chunks_mut(width * c))
        .enumerate()
        .for_each(|(y, (vrow, grow))| {
            let mut raw = vec![0.0f32; c];
            for x in 0..width {
                describe(image, x, y, &pattern, &mut raw);
                let span = x * c..(x + 1) * c;
                normalize_into(&raw, &mut vrow[span.clone()]);
                for (src, dst) in raw
                    .chunks_exact(group_len)
                    .zip(grow[span].chunks_exact_mut(group_len))
                {
                    normalize_into(src, dst);
                }
            }
        });
    Ok(FeatureMap {
        width,
        height,
        channels: c,
        groups: config.groups,
        values,
        grouped,
    })
}

/// Per-group correlations of one pixel pair.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupCostVector(pub Vec<f32>);

impl GroupCostVector {
    pub fn mean(&self) -> f32 {
        self.0.iter().sum::<f32>() / self.0.len() as f32
    }
}

impl FeatureMap {
    /// Builds a map from raw descriptors, normalizing them.
    pub fn from_raw(
        width: usize,
        height: usize,
        channels: usize,
        groups: usize,
        raw: &[f32],
    ) -> Result<Self> {
        Self::build(width, height, channels, groups, raw, true)
    }

    /// `normalize = false` keeps `raw` verbatim as the full descriptors
    /// (they are already unit-norm when reloaded from a dump).
    fn build(width: usize, height: usize, channels: usize, groups: usize, raw: &[f32], normalize: bool) -> Result<Self> {
        if raw.len() != width * height * channels {
            return Err(Error::Input("feature buffer does not match dimensions".into()));
        }
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "{channels} channels cannot be split into {groups} groups"
            )));
        }
        let group_len = channels / groups;
        let mut values = vec![0.0f32; raw.len()];
        let mut grouped = vec![0.0f32; raw.len()];
        for ((src, v), g) in raw
            .chunks_exact(channels)
            .zip(values.chunks_exact_mut(channels))
            .zip(grouped.chunks_exact_mut(channels))
        {
            if normalize {
                normalize_into(src, v);
            } else {
                v.copy_from_slice(src);
            }
            for (s, d) in src.chunks_exact(group_len).zip(g.chunks_exact_mut(group_len)) {
                normalize_into(s, d);
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            groups,
            values,
            grouped,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let o = (y * self.width + x) * self.channels;
        &self.values[o..o + self.channels]
    }

    pub fn grouped_pixel(&self, x: usize, y: usize) -> &[f32] {
        let o = (y * self.width + x) * self.channels;
        &self.grouped[o..o + self.channels]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
            && self.groups == other.groups
    }

    /// Raw little-endian dump: width, height, channels, magic (u32 each),
    /// then the unit-norm descriptors as f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.values.len() * 4);
        for v in [self.width as u32, self.height as u32, self.channels as u32, DUMP_MAGIC] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], groups: usize) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::parse(bytes.len(), "truncated feature dump header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap());
        if word(3) != DUMP_MAGIC {
            return Err(Error::parse(12, "bad feature dump magic"));
        }
        let (w, h, c) = (word(0) as usize, word(1) as usize, word(2) as usize);
        let need = 16 + w * h * c * 4;
        if bytes.len() != need {
            return Err(Error::parse(bytes.len(), format!("feature dump needs {need} bytes")));
        }
        let raw: Vec<f32> = bytes[16..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::build(w, h, c, groups, &raw, false)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

const DUMP_MAGIC: u32 = u32::from_le_bytes(*b"HSFM");

fn check_pair(f: &FeatureMap, g: &FeatureMap, x: usize, y: usize, d: usize) -> Result<()> {
    if !f.same_shape(g) {
        return Err(Error::Input("feature maps differ in shape".into()));
    }
    if x >= f.width || y >= f.height {
        return Err(Error::Input(format!("pixel ({x}, {y}) outside feature map")));
    }
    if d > x {
        return Err(Error::OutOfRange {
            x,
            y,
            disparity: d as i64,
        });
    }
    Ok(())
}

/// Matching cost `f_p . g_(p - d)`.
pub fn cost(f: &FeatureMap, g: &FeatureMap, x: usize, y: usize, d: usize) -> Result<f32> {
    check_pair(f, g, x, y, d)?;
    Ok(dot(f.pixel(x, y), g.pixel(x - d, y)))
}

/// Group-wise costs over contiguous, separately normalized channel slices.
pub fn group_cost(
    f: &FeatureMap,
    g: &FeatureMap,
    x: usize,
    y: usize,
    d: usize,
) -> Result<GroupCostVector> {
    check_pair(f, g, x, y, d)?;
    let mut out = vec![0.0f32; f.groups];
    group_cost_into(f, g, x, y, d, &mut out);
    Ok(GroupCostVector(out))
}

/// Unchecked group-wise cost into `out` (length = groups).
#[inline]
pub(crate) fn group_cost_into(
    f: &FeatureMap,
    g: &FeatureMap,
    x: usize,
    y: usize,
    d: usize,
    out: &mut [f32],
) {
    let len = f.channels / f.groups;
    let a = f.grouped_pixel(x, y);
    let b = g.grouped_pixel(x - d, y);
    for ((o, sa), sb) in out.iter_mut().zip(a.chunks_exact(len)).zip(b.chunks_exact(len)) {
        *o = dot(sa, sb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random())
    }

    #[test]
    fn pattern_has_requested_size_and_stays_in_patch() {
        let p = census_pattern(48, 7.0);
        assert_eq!(p.len(), 48);
        assert!(p.iter().all(|&(x, y)| x < PATCH && y < PATCH));
    }

    #[test]
    fn descriptors_are_unit_norm() {
        let img = noise_image(50, 37, 3);
        let f = extract_features(&img, &FeatureConfig::default()).unwrap();
        assert_eq!((f.width(), f.height()), (13, 10));
        for y in 0..f.height() {
            for x in 0..f.width() {
                let n: f32 = f.pixel(x, y).iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn constant_image_gives_identical_descriptors() {
        let img = GrayImage::filled(64, 64, 90);
        let f = extract_features(&img, &FeatureConfig::default()).unwrap();
        let first = f.pixel(0, 0).to_vec();
        for y in 0..f.height() {
            for x in 0..f.width() {
                assert_eq!(f.pixel(x, y), first.as_slice());
            }
        }
        // Every census comparison is a tie, resolved to -1.
        let bits = FeatureConfig::default().census_bits();
        assert!(first[..bits].iter().all(|&v| v < 0.0));
    }

    #[test]
    fn self_cost_is_one() {
        let img = noise_image(64, 48, 9);
        let f = extract_features(&img, &FeatureConfig::default()).unwrap();
        for y in 0..f.height() {
            for x in 0..f.width() {
                assert!((cost(&f, &f, x, y, 0).unwrap() - 1.0).abs() < 1e-5);
                let g = group_cost(&f, &f, x, y, 0).unwrap();
                assert!(g.0.iter().all(|v| (v - 1.0).abs() < 1e-5));
            }
        }
    }

    #[test]
    fn eight_pixel_shift_peaks_at_two() {
        let left = noise_image(96, 64, 21);
        let right = left.shifted(8);
        let cfg = FeatureConfig::default();
        let f = extract_features(&left, &cfg).unwrap();
        let g = extract_features(&right, &cfg).unwrap();
        for y in 2..f.height() - 2 {
            for x in 8..f.width() - 4 {
                let best = (0..=x.min(6))
                    .max_by(|&a, &b| {
                        let ca = cost(&f, &g, x, y, a).unwrap();
                        let cb = cost(&f, &g, x, y, b).unwrap();
                        ca.total_cmp(&cb).then(b.cmp(&a))
                    })
                    .unwrap();
                assert_eq!(best, 2, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn out_of_range_disparity_is_an_error() {
        let img = noise_image(32, 32, 1);
        let f = extract_features(&img, &FeatureConfig::default()).unwrap();
        assert!(matches!(cost(&f, &f, 2, 1, 3), Err(Error::OutOfRange { .. })));
        assert!(cost(&f, &f, 2, 1, 2).is_ok());
    }

    #[test]
    fn small_image_is_rejected() {
        let img = GrayImage::filled(15, 40, 0);
        assert!(matches!(
            extract_features(&img, &FeatureConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn orthogonal_and_random_costs() {
        let mut a = vec![0.0f32; 16];
        let mut b = vec![0.0f32; 16];
        a[0] = 1.0;
        b[1] = 1.0;
        let mut raw = a.clone();
        raw.extend(&b);
        let f = FeatureMap::from_raw(2, 1, 16, 2, &raw).unwrap();
        assert_eq!(cost(&f, &f, 1, 0, 1).unwrap(), 0.0);
        assert_eq!(cost(&f, &f, 1, 0, 0).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw: Vec<f32> = (0..2 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = FeatureMap::from_raw(2, 1, 16, 4, &raw).unwrap();
        let norm = |v: &[f32]| -> Vec<f64> {
            let n = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            v.iter().map(|&x| f64::from(x) / n).collect()
        };
        let (p, q) = (norm(&raw[16..]), norm(&raw[..16]));
        let expect: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        assert!((f64::from(cost(&f, &f, 1, 0, 1).unwrap()) - expect).abs() < 1e-6);
        let groups = group_cost(&f, &f, 1, 0, 1).unwrap();
        for (i, gv) in groups.0.iter().enumerate() {
            let (p, q) = (norm(&raw[16 + 4 * i..20 + 4 * i]), norm(&raw[4 * i..4 * i + 4]));
            let expect: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
            assert!((f64::from(*gv) - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn single_group_matches_slice_cost() {
        let img = noise_image(40, 40, 8);
        let cfg = FeatureConfig {
            groups: 1,
            ..FeatureConfig::default()
        };
        let f = extract_features(&img, &cfg).unwrap();
        let g = extract_features(&img.shifted(3), &cfg).unwrap();
        let c = cost(&f, &g, 5, 5, 1).unwrap();
        let gc = group_cost(&f, &g, 5, 5, 1).unwrap();
        assert_eq!(gc.0.len(), 1);
        assert!((gc.0[0] - c).abs() < 1e-6);
    }

    #[test]
    fn cost_is_symmetric_in_operands() {
        let l = extract_features(&noise_image(48, 32, 2), &FeatureConfig::default()).unwrap();
        let r = extract_features(&noise_image(48, 32, 4), &FeatureConfig::default()).unwrap();
        let a = dot(l.pixel(7, 3), r.pixel(5, 3));
        let b = dot(r.pixel(5, 3), l.pixel(7, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn dump_round_trip() {
        let f = extract_features(&noise_image(32, 20, 6), &FeatureConfig::default()).unwrap();
        let back = FeatureMap::from_bytes(&f.to_bytes(), 8).unwrap();
        assert_eq!((back.width(), back.height(), back.channels()), (8, 5, 64));
        for (a, b) in back.values.iter().zip(&f.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
