//! Memory model for correlation storage, plus allocation accounting hooks.
//!
//! Only correlation state is counted: the dense cost volume, the sparse kNN
//! volume, and the per-iteration local correlation windows. Images and
//! feature maps are excluded.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_features, DOWNSAMPLE};
use crate::image::GrayImage;
use crate::matcher::{dense_volume, match_stereo_with, HullMode, MatchConfig, MatchHooks};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Dense,
    SparseKnn,
    JitWindow,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Dense, Strategy::SparseKnn, Strategy::JitWindow];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Dense => "dense",
            Strategy::SparseKnn => "sparse_knn",
            Strategy::JitWindow => "jit_window",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Parameters of the closed-form model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub k: usize,
    pub radius: usize,
    pub groups: usize,
    pub bytes_per_value: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            k: 8,
            radius: 4,
            groups: 8,
            bytes_per_value: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryProfile {
    pub strategy: Strategy,
    pub width: usize,
    pub height: usize,
    pub params: ModelParams,
    pub peak_bytes: u64,
}

/// Closed-form peak correlation bytes for an input of `width` x `height`.
///
/// The feature grid is `ceil(w/4) x ceil(h/4)`; the dense volume spans one
/// candidate per feature column, kNN stores `k` (disparity, cost) pairs, and
/// a refinement iteration holds `2r+1` windows of `G` group costs.
pub fn model_memory(strategy: Strategy, width: usize, height: usize, params: ModelParams) -> Result<MemoryProfile> {
    if width == 0 || height == 0 {
        return Err(Error::Config("memory model needs positive dimensions".into()));
    }
    let fw = width.div_ceil(DOWNSAMPLE) as u64;
    let fh = height.div_ceil(DOWNSAMPLE) as u64;
    let b = params.bytes_per_value as u64;
    let per_pixel = match strategy {
        Strategy::Dense => fw,
        Strategy::SparseKnn => params.k as u64 * 2,
        Strategy::JitWindow => (2 * params.radius as u64 + 1) * params.groups as u64,
    };
    Ok(MemoryProfile {
        strategy,
        width,
        height,
        params,
        peak_bytes: fw * fh * per_pixel * b,
    })
}

/// Least-squares slope of `ln(peak)` against `ln(width)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x.ln(), b + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = points.iter().fold((0.0, 0.0), |(num, den), &(x, y)| {
        let dx = x.ln() - mx;
        (num + dx * (y.ln() - my), den + dx * dx)
    });
    num / den
}

#[derive(Debug, Default)]
struct Counter {
    current: AtomicUsize,
    peak: AtomicUsize,
}

/// Atomic per-strategy byte counters. Read peaks after the run has finished.
#[derive(Debug, Default)]
pub struct MemTracker {
    counters: [Counter; 3],
}

/// Live accounting for one buffer; releases its bytes on drop.
#[must_use]
pub struct Allocation<'a> {
    tracker: &'a MemTracker,
    strategy: Strategy,
    bytes: usize,
}

impl Drop for Allocation<'_> {
    fn drop(&mut self) {
        self.tracker.counters[self.strategy.index()]
            .current
            .fetch_sub(self.bytes, Ordering::SeqCst);
    }
}

impl MemTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn allocate(&self, strategy: Strategy, bytes: usize) -> Allocation<'_> {
        let c = &self.counters[strategy.index()];
        let now = c.current.fetch_add(bytes, Ordering::SeqCst) + bytes;
        c.peak.fetch_max(now, Ordering::SeqCst);
        Allocation {
            tracker: self,
            strategy,
            bytes,
        }
    }

    pub fn peak(&self, strategy: Strategy) -> usize {
        self.counters[strategy.index()].peak.load(Ordering::SeqCst)
    }

    pub fn current(&self, strategy: Strategy) -> usize {
        self.counters[strategy.index()].current.load(Ordering::SeqCst)
    }
}

/// Modeled and observed peak of one strategy at one input size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakComparison {
    pub strategy: Strategy,
    pub modeled_bytes: u64,
    pub observed_bytes: u64,
}

impl PeakComparison {
    /// `|observed - modeled| / modeled`.
    pub fn relative_error(&self) -> f64 {
        (self.observed_bytes as f64 - self.modeled_bytes as f64).abs() / self.modeled_bytes as f64
    }
}

/// Runs the matcher (one refinement iteration, no hull) and the dense
/// baseline on a seeded noise pair of the given size with a tracker attached,
/// and reports observed peaks next to the model.
pub fn instrument_run(width: usize, height: usize, params: ModelParams, seed: u64) -> Result<Vec<PeakComparison>> {
    if params.bytes_per_value != std::mem::size_of::<f32>() {
        return Err(Error::Unsupported(format!(
            "instrumented runs store 4-byte values, model asks for {}",
            params.bytes_per_value
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let left = GrayImage::from_fn(width, height, |_, _| rng.random());
    let right = left.shifted(4);
    let mut cfg = MatchConfig {
        k: params.k,
        hull_mode: HullMode::None,
        ..MatchConfig::default()
    };
    cfg.features.groups = params.groups;
    cfg.refine.radius = params.radius;
    cfg.refine.iterations = 1;

    let tracker = MemTracker::new();
    let hooks = MatchHooks {
        tracker: Some(&tracker),
        observer: None,
    };
    match_stereo_with(&left, &right, None, &cfg, hooks)?;
    let f = extract_features(&left, &cfg.features)?;
    let g = extract_features(&right, &cfg.features)?;
    dense_volume(&f, &g, Some(&tracker))?;

    Strategy::ALL
        .iter()
        .map(|&strategy| {
            Ok(PeakComparison {
                strategy,
                modeled_bytes: model_memory(strategy, width, height, params)?.peak_bytes,
                observed_bytes: tracker.peak(strategy) as u64,
            })
        })
        .collect()
}

/// Accounts a buffer if a tracker is attached.
pub(crate) fn track<'a, T>(tracker: Option<&'a MemTracker>, strategy: Strategy, buf: &[T]) -> Option<Allocation<'a>> {
    tracker.map(|t| t.allocate(strategy, std::mem::size_of_val(buf)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peak(s: Strategy, w: usize, h: usize) -> u64 {
        model_memory(s, w, h, ModelParams::default()).unwrap().peak_bytes
    }

    #[test]
    fn dense_scales_quadratically_in_width() {
        assert_eq!(peak(Strategy::Dense, 1024, 320), 4 * peak(Strategy::Dense, 512, 320));
    }

    #[test]
    fn sparse_and_window_scale_linearly() {
        assert_eq!(peak(Strategy::SparseKnn, 1024, 320), 2 * peak(Strategy::SparseKnn, 512, 320));
        assert_eq!(peak(Strategy::JitWindow, 1024, 320), 2 * peak(Strategy::JitWindow, 512, 320));
    }

    #[test]
    fn dense_to_sparse_ratio() {
        // (w/4) / (2k) = 256 / 16.
        let ratio = peak(Strategy::Dense, 1024, 320) as f64 / peak(Strategy::SparseKnn, 1024, 320) as f64;
        assert_eq!(ratio, 16.0);
        assert_eq!(peak(Strategy::SparseKnn, 1024, 320), 256 * 80 * 8 * 2 * 4);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [256.0, 512.0, 1024.0].iter().map(|&w| (w, 3.0 * w * w)).collect();
        assert!((loglog_slope(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tracker_records_peak_not_sum() {
        let t = MemTracker::new();
        {
            let _a = t.allocate(Strategy::JitWindow, 100);
        }
        {
            let _b = t.allocate(Strategy::JitWindow, 60);
        }
        assert_eq!(t.peak(Strategy::JitWindow), 100);
        assert_eq!(t.current(Strategy::JitWindow), 0);
        assert_eq!(t.peak(Strategy::Dense), 0);
    }

    #[test]
    fn zero_size_is_rejected() {
        assert!(model_memory(Strategy::Dense, 0, 10, ModelParams::default()).is_err());
    }

    #[test]
    fn instrumented_peaks_equal_model() {
        let peaks = instrument_run(64, 48, ModelParams::default(), 3).unwrap();
        assert_eq!(peaks.len(), 3);
        for p in peaks {
            assert_eq!(p.observed_bytes, p.modeled_bytes, "{:?}", p.strategy);
        }
    }

    #[test]
    fn non_f32_width_is_unsupported() {
        let params = ModelParams {
            bytes_per_value: 2,
            ..ModelParams::default()
        };
        assert!(matches!(instrument_run(32, 32, params, 0), Err(Error::Unsupported(_))));
    }
}
