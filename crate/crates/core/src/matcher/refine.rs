//! Iterative refinement with just-in-time local correlation windows.
//!
//! Each iteration evaluates `2r+1` group-wise costs around the rounded
//! current estimate, biases their group mean with the hull flag, and moves
//! the estimate to the softmax-weighted offset inside the window. An
//! edge-aware weighted average over a small neighborhood follows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disparity::DisparityMap;
use crate::error::{Error, Result};
use crate::features::{group_cost_into, FeatureMap, DOWNSAMPLE};
use crate::geometry::BoundsMap;
use crate::image::GrayImage;
use crate::memstat::{track, MemTracker, Strategy};

/// Cost reported for window offsets whose match leaves the image.
pub const SENTINEL_COST: f32 = -1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub radius: usize,
    pub iterations: usize,
    pub tau_init: f32,
    pub tau_update: f32,
    pub lambda_flag: f32,
    /// Neighborhood radius of the smoothing pass; 0 disables it.
    pub smoothing_radius: usize,
    /// Intensity sigma of the smoothing weights, in unit-range gray levels.
    pub smoothing_sigma: f32,
    /// Scale of the confidence weights: a neighbor whose best window score
    /// is `s` counts with `exp((s - 1) / sigma)`. 0 disables them.
    pub smoothing_confidence_sigma: f32,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            radius: 4,
            iterations: 16,
            tau_init: 0.1,
            tau_update: 0.25,
            lambda_flag: 0.5,
            smoothing_radius: 2,
            smoothing_sigma: 0.1,
            smoothing_confidence_sigma: 0.05,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius == 0 {
            return Err(Error::Config("refinement radius must be at least 1".into()));
        }
        if !(self.tau_init > 0.0 && self.tau_update > 0.0) {
            return Err(Error::Config("softmax temperatures must be positive".into()));
        }
        if !(self.lambda_flag >= 0.0) {
            return Err(Error::Config("lambda_flag must be non-negative".into()));
        }
        if !(self.smoothing_sigma > 0.0) {
            return Err(Error::Config("smoothing sigma must be positive".into()));
        }
        if !(self.smoothing_confidence_sigma >= 0.0) {
            return Err(Error::Config("smoothing confidence sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        2 * self.radius + 1
    }
}

/// Window center for an estimate: round half up.
pub fn window_center(estimate: f32) -> i64 {
    (f64::from(estimate) + 0.5).floor() as i64
}

/// Group costs at disparities `center - r ..= center + r`, row-major by offset.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationWindow {
    pub center: i64,
    pub radius: usize,
    pub groups: usize,
    pub values: Vec<f32>,
}

impl CorrelationWindow {
    /// Costs for offset `j` in `[-r, r]`.
    pub fn at(&self, j: i64) -> &[f32] {
        let row = (j + self.radius as i64) as usize;
        &self.values[row * self.groups..(row + 1) * self.groups]
    }
}

fn fill_window(f: &FeatureMap, g: &FeatureMap, x: usize, y: usize, center: i64, radius: usize, out: &mut [f32]) {
    let groups = f.groups();
    for (row, slot) in out.chunks_exact_mut(groups).enumerate() {
        let d = center + row as i64 - radius as i64;
        if d < 0 || d > x as i64 {
            slot.fill(SENTINEL_COST);
        } else {
            group_cost_into(f, g, x, y, d as usize, slot);
        }
    }
}

/// Correlation window around `round(estimate)` at pixel `(x, y)`.
pub fn local_correlation(
    f: &FeatureMap,
    g: &FeatureMap,
    x: usize,
    y: usize,
    estimate: f32,
    radius: usize,
) -> Result<CorrelationWindow> {
    if !f.same_shape(g) {
        return Err(Error::Input("feature maps differ in shape".into()));
    }
    if x >= f.width() || y >= f.height() {
        return Err(Error::Input(format!("pixel ({x}, {y}) outside feature map")));
    }
    let center = window_center(estimate);
    let mut values = vec![0.0f32; (2 * radius + 1) * f.groups()];
    fill_window(f, g, x, y, center, radius, &mut values);
    Ok(CorrelationWindow {
        center,
        radius,
        groups: f.groups(),
        values,
    })
}

/// Hull membership flags aligned with a correlation window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriorFlagWindow(pub Vec<i8>);

/// +1 where the window disparity lies in `[floor(b_min), ceil(b_max)]`, -1
/// elsewhere, and 0 everywhere when the pixel has no hull interval.
pub fn prior_flags(estimate: f32, radius: usize, interval: Option<(f32, f32)>) -> PriorFlagWindow {
    let center = window_center(estimate);
    let r = radius as i64;
    let flags = match interval {
        None => vec![0; 2 * radius + 1],
        Some((b_min, b_max)) => {
            let lo = f64::from(b_min).floor();
            let hi = f64::from(b_max).ceil();
            (-r..=r)
                .map(|j| {
                    let d = (center + j) as f64;
                    if lo <= d && d <= hi {
                        1
                    } else {
                        -1
                    }
                })
                .collect()
        }
    };
    PriorFlagWindow(flags)
}

/// Softmax expectation of `values` (indices 0..n) at temperature `tau`.
pub(crate) fn softmax_expectation(positions: impl Iterator<Item = f64> + Clone, scores: &[f32], tau: f32) -> f64 {
    let tau = f64::from(tau);
    let max = scores.iter().fold(f32::NEG_INFINITY, |m, &s| m.max(s));
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (pos, &s) in positions.zip(scores) {
        let w = ((f64::from(s) - f64::from(max)) / tau).exp();
        num += pos * w;
        den += w;
    }
    num / den
}

/// Intensity guide for the smoothing pass, at feature resolution.
#[derive(Clone, Debug)]
pub struct Guide {
    width: usize,
    values: Vec<f32>,
}

impl Guide {
    /// Mean of each 4x4 footprint, in unit-range gray levels.
    pub fn new(image: &GrayImage) -> Self {
        let width = image.width().div_ceil(DOWNSAMPLE);
        let height = image.height().div_ceil(DOWNSAMPLE);
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let mut sum = 0.0f32;
                for dy in 0..DOWNSAMPLE {
                    for dx in 0..DOWNSAMPLE {
                        let px = (x * DOWNSAMPLE + dx) as isize;
                        let py = (y * DOWNSAMPLE + dy) as isize;
                        sum += f32::from(image.get_clamped(px, py));
                    }
                }
                values.push(sum / (DOWNSAMPLE * DOWNSAMPLE * 255) as f32);
            }
        }
        Self { width, values }
    }

    fn at(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Output of one refinement iteration.
pub struct RefineOutput {
    /// `D^i + Delta`, before smoothing and clamping.
    pub unsmoothed: DisparityMap,
    pub refined: DisparityMap,
}

fn check_shapes(current: &DisparityMap, f: &FeatureMap, g: &FeatureMap, bounds: Option<&BoundsMap>, guide: &Guide) -> Result<()> {
    let (w, h) = (f.width(), f.height());
    if !f.same_shape(g) || current.width() != w || current.height() != h {
        return Err(Error::Input("refinement inputs differ in shape".into()));
    }
    if bounds.is_some_and(|b| b.width() != w || b.height() != h) {
        return Err(Error::Input("bounds do not match the feature grid".into()));
    }
    if guide.width != w || guide.values.len() != w * h {
        return Err(Error::Input("guide image does not match the feature grid".into()));
    }
    Ok(())
}

/// One refinement iteration.
pub fn refine_step(
    current: &DisparityMap,
    f: &FeatureMap,
    g: &FeatureMap,
    bounds: Option<&BoundsMap>,
    cfg: &RefineConfig,
    guide: &Guide,
) -> Result<DisparityMap> {
    refine_step_traced(current, f, g, bounds, cfg, guide, None).map(|o| o.refined)
}

pub(crate) fn refine_step_traced(
    current: &DisparityMap,
    f: &FeatureMap,
    g: &FeatureMap,
    bounds: Option<&BoundsMap>,
    cfg: &RefineConfig,
    guide: &Guide,
    tracker: Option<&MemTracker>,
) -> Result<RefineOutput> {
    cfg.validate()?;
    check_shapes(current, f, g, bounds, guide)?;
    let (w, h) = (f.width(), f.height());
    let r = cfg.radius;
    let groups = f.groups();
    let stride = cfg.window_len() * groups;

    // Correlation state for this iteration: one window per pixel.
    let mut windows = vec![0.0f32; w * h * stride];
    let window_bytes = track(tracker, Strategy::JitWindow, &windows);
    windows.par_chunks_mut(w * stride).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            if current.is_valid(x, y) {
                let center = window_center(current.value(x, y));
                fill_window(f, g, x, y, center, r, &mut row[x * stride..(x + 1) * stride]);
            }
        }
    });

    let mut stepped = current.clone();
    let rows: Vec<Vec<Option<(f32, f32)>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut scores = vec![0.0f32; cfg.window_len()];
            (0..w)
                .map(|x| {
                    let estimate = current.get(x, y)?;
                    let window = &windows[(y * w + x) * stride..(y * w + x + 1) * stride];
                    let interval = bounds.and_then(|b| b.get(x, y));
                    let flags = prior_flags(estimate, r, interval);
                    let mut best = f32::NEG_INFINITY;
                    for ((score, costs), &flag) in scores
                        .iter_mut()
                        .zip(window.chunks_exact(groups))
                        .zip(&flags.0)
                    {
                        let mean = costs.iter().sum::<f32>() / groups as f32;
                        best = best.max(mean);
                        *score = mean + cfg.lambda_flag * f32::from(flag);
                    }
                    let center = window_center(estimate);
                    let offset = softmax_expectation(
                        (-(r as i64)..=r as i64).map(|j| j as f64),
                        &scores,
                        cfg.tau_update,
                    );
                    let target = center as f64 + offset;
                    let delta = (target - f64::from(estimate)).clamp(-(r as f64), r as f64);
                    Some(((f64::from(estimate) + delta) as f32, best))
                })
                .collect()
        })
        .collect();
    drop(window_bytes);
    drop(windows);
    let mut confidence = vec![0.0f32; w * h];
    for (y, row) in rows.into_iter().enumerate() {
        for (x, v) in row.into_iter().enumerate() {
            stepped.set(x, y, v.map(|(d, _)| d));
            if let Some((_, best)) = v {
                confidence[y * w + x] = if cfg.smoothing_confidence_sigma > 0.0 {
                    ((best - 1.0) / cfg.smoothing_confidence_sigma).exp()
                } else {
                    1.0
                };
            }
        }
    }

    let refined = smooth(&stepped, &confidence, guide, cfg);
    Ok(RefineOutput {
        unsmoothed: stepped,
        refined,
    })
}

/// Weighted average over the neighborhood: intensity similarity to the
/// center times each neighbor's match confidence. Then clamp to `[0, x]`.
fn smooth(map: &DisparityMap, confidence: &[f32], guide: &Guide, cfg: &RefineConfig) -> DisparityMap {
    let (w, h) = (map.width(), map.height());
    let s = cfg.smoothing_radius as isize;
    let inv = 1.0 / (2.0 * cfg.smoothing_sigma * cfg.smoothing_sigma);
    let rows: Vec<Vec<Option<f32>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let own = map.get(x, y)?;
                    let value = if s == 0 {
                        own
                    } else {
                        let gi = guide.at(x, y);
                        let mut acc = 0.0f32;
                        let mut wsum = 0.0f32;
                        for qy in (y as isize - s).max(0)..=(y as isize + s).min(h as isize - 1) {
                            for qx in (x as isize - s).max(0)..=(x as isize + s).min(w as isize - 1) {
                                let (qx, qy) = (qx as usize, qy as usize);
                                let Some(v) = map.get(qx, qy) else { continue };
                                let diff = guide.at(qx, qy) - gi;
                                let wt = (-diff * diff * inv).exp() * confidence[qy * w + qx];
                                acc += wt * v;
                                wsum += wt;
                            }
                        }
                        if wsum > 0.0 {
                            acc / wsum
                        } else {
                            own
                        }
                    };
                    Some(value.clamp(0.0, x as f32))
                })
                .collect()
        })
        .collect();
    let mut out = map.clone();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, v) in row.into_iter().enumerate() {
            out.set(x, y, v);
        }
    }
    out
}
