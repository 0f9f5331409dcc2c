//! Hull-restricted sparse initialization and iterative sparse-dense refinement.

mod refine;
mod volume;

pub use refine::{
    local_correlation, prior_flags, refine_step, window_center, CorrelationWindow, Guide,
    PriorFlagWindow, RefineConfig, SENTINEL_COST,
};
pub use volume::{
    candidate_range, dense_group_volume, dense_volume, knn_volume, select_top_k, Candidate,
    SparseCostVolume, MAX_K,
};

use serde::{Deserialize, Serialize};

use crate::disparity::{DisparityMap, Resolution};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureConfig, DOWNSAMPLE};
use crate::geometry::BoundsMap;
use crate::image::GrayImage;
use crate::memstat::MemTracker;

/// Which stages receive the hull bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HullMode {
    /// Bounds ignored everywhere.
    None,
    /// Bounds restrict the kNN candidates only.
    InitialOnly,
    /// Bounds drive the refinement flags only.
    UpdateOnly,
    #[default]
    Both,
}

impl HullMode {
    pub const ALL: [HullMode; 4] = [HullMode::None, HullMode::InitialOnly, HullMode::UpdateOnly, HullMode::Both];

    pub fn name(self) -> &'static str {
        match self {
            HullMode::None => "none",
            HullMode::InitialOnly => "initial_only",
            HullMode::UpdateOnly => "update_only",
            HullMode::Both => "both",
        }
    }

    pub fn knn(self) -> bool {
        matches!(self, HullMode::InitialOnly | HullMode::Both)
    }

    pub fn flags(self) -> bool {
        matches!(self, HullMode::UpdateOnly | HullMode::Both)
    }
}

impl std::str::FromStr for HullMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HullMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown hull mode '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub features: FeatureConfig,
    /// Candidates kept per pixel in the sparse volume.
    pub k: usize,
    /// Largest disparity searched without bounds, in feature pixels.
    /// `None` means half the feature width.
    pub d_threshold: Option<usize>,
    pub refine: RefineConfig,
    pub hull_mode: HullMode,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            k: 8,
            d_threshold: None,
            refine: RefineConfig::default(),
            hull_mode: HullMode::Both,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.refine.validate()?;
        if !(1..=MAX_K).contains(&self.k) {
            return Err(Error::Config(format!("k must lie in [1, {MAX_K}], got {}", self.k)));
        }
        Ok(())
    }

    pub fn threshold_for(&self, feature_width: usize) -> usize {
        self.d_threshold.unwrap_or(feature_width / 2)
    }
}

/// Softmax-weighted mean of each pixel's stored disparities.
pub fn initial_disparity(volume: &SparseCostVolume, tau_init: f32) -> DisparityMap {
    let (w, h) = (volume.width(), volume.height());
    let mut map = DisparityMap::invalid(w, h, Resolution::Feature);
    let mut costs = Vec::with_capacity(volume.k());
    for y in 0..h {
        for x in 0..w {
            let cands = volume.candidates(x, y);
            if cands.is_empty() {
                continue;
            }
            costs.clear();
            costs.extend(cands.iter().map(|c| c.cost));
            let d = refine::softmax_expectation(
                cands.iter().map(|c| f64::from(c.disparity)),
                &costs,
                tau_init,
            );
            map.set(x, y, Some(d as f32));
        }
    }
    map
}

/// Receives intermediate maps during [`match_stereo_with`].
pub trait MatchObserver {
    fn initial(&mut self, _d0: &DisparityMap) {}

    /// `unsmoothed` is `before + Delta` ahead of the smoothing pass.
    fn iteration(&mut self, _index: usize, _before: &DisparityMap, _unsmoothed: &DisparityMap, _after: &DisparityMap) {}
}

/// Optional instrumentation for a match run.
#[derive(Default)]
pub struct MatchHooks<'a> {
    pub tracker: Option<&'a MemTracker>,
    pub observer: Option<&'a mut dyn MatchObserver>,
}

/// Full pipeline at default instrumentation: features, kNN initialization,
/// refinement, and x4 bilinear upsampling to input resolution.
pub fn match_stereo(
    left: &GrayImage,
    right: &GrayImage,
    bounds: Option<&BoundsMap>,
    cfg: &MatchConfig,
) -> Result<DisparityMap> {
    match_stereo_with(left, right, bounds, cfg, MatchHooks::default())
}

pub fn match_stereo_with(
    left: &GrayImage,
    right: &GrayImage,
    bounds: Option<&BoundsMap>,
    cfg: &MatchConfig,
    mut hooks: MatchHooks<'_>,
) -> Result<DisparityMap> {
    let feature = match_feature_resolution(left, right, bounds, cfg, &mut hooks)?;
    Ok(feature.upsample(left.width(), left.height(), DOWNSAMPLE))
}

/// As [`match_stereo_with`] but stops before upsampling.
pub fn match_feature_resolution(
    left: &GrayImage,
    right: &GrayImage,
    bounds: Option<&BoundsMap>,
    cfg: &MatchConfig,
    hooks: &mut MatchHooks<'_>,
) -> Result<DisparityMap> {
    cfg.validate()?;
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::Input(format!(
            "stereo images differ in size: {}x{} vs {}x{}",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    let f = extract_features(left, &cfg.features)?;
    let g = extract_features(right, &cfg.features)?;
    let knn_bounds = bounds.filter(|_| cfg.hull_mode.knn());
    let flag_bounds = bounds.filter(|_| cfg.hull_mode.flags());

    let threshold = cfg.threshold_for(f.width());
    let mut current = {
        let (volume, _bytes) =
            volume::knn_volume_tracked(&f, &g, knn_bounds, cfg.k, threshold, hooks.tracker)?;
        initial_disparity(&volume, cfg.refine.tau_init)
    };
    if let Some(obs) = hooks.observer.as_deref_mut() {
        obs.initial(&current);
    }

    let guide = Guide::new(left);
    for i in 0..cfg.refine.iterations {
        let out = refine::refine_step_traced(&current, &f, &g, flag_bounds, &cfg.refine, &guide, hooks.tracker)?;
        if let Some(obs) = hooks.observer.as_deref_mut() {
            obs.iteration(i, &current, &out.unsmoothed, &out.refined);
        }
        current = out.refined;
    }
    Ok(current)
}
