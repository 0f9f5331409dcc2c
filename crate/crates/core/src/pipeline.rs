//! End-to-end driver: capture, hull, bounds, match, metrics.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::disparity::DisparityMap;
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, MetricReport};
use crate::geometry::{carve_hull, compute_bounds, BoundsMap, FEATURE_SCALE};
use crate::image::Mask;
use crate::io::write_disparity;
use crate::matcher::{match_stereo, MatchConfig};
use crate::synth::{synthesize, Capture, Scene, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HullConfig {
    pub max_depth: u32,
    /// Root cube = stage grown by this fraction.
    pub root_margin: f64,
}

impl Default for HullConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            root_margin: 0.1,
        }
    }
}

/// Carves the hull from `masks` (paired with the capture's ring cameras)
/// and extracts feature-resolution bounds for the left view.
pub fn hull_bounds(capture: &Capture, masks: &[Mask], stage: &Stage, cfg: &HullConfig) -> Result<BoundsMap> {
    let silhouettes = capture.silhouettes_from(masks)?;
    let hull = carve_hull(&silhouettes, stage.hull_root(cfg.root_margin), cfg.max_depth)?;
    Ok(compute_bounds(&hull, &capture.cameras.rig, FEATURE_SCALE))
}

/// Resolved pipeline parameters; written next to every run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Existing scene directory to ingest instead of synthesizing.
    pub scene_dir: Option<PathBuf>,
    pub use_hull: bool,
    pub hull: HullConfig,
    pub matcher: MatchConfig,
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scene_dir: None,
            use_hull: true,
            hull: HullConfig::default(),
            matcher: MatchConfig::default(),
            threads: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PipelineStage {
    Synth,
    Hull,
    Match,
    Eval,
    Output,
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineStage::Synth => "synth",
            PipelineStage::Hull => "hull",
            PipelineStage::Match => "match",
            PipelineStage::Eval => "eval",
            PipelineStage::Output => "output",
        })
    }
}

/// A pipeline failure tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed")]
pub struct StageError {
    pub stage: PipelineStage,
    #[source]
    pub source: Error,
}

trait Tag<T> {
    fn stage(self, stage: PipelineStage) -> std::result::Result<T, StageError>;
}

impl<T> Tag<T> for Result<T> {
    fn stage(self, stage: PipelineStage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub disparity: DisparityMap,
    pub bounds: Option<BoundsMap>,
    /// Present when the capture carries ground truth.
    pub report: Option<MetricReport>,
}

/// Runs every stage in memory; nothing is written.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<PipelineOutput, StageError> {
    cfg.matcher.validate().stage(PipelineStage::Match)?;
    let (capture, stage) = match &cfg.scene_dir {
        Some(dir) => {
            let capture = Capture::load(dir).stage(PipelineStage::Synth)?;
            let scene_file = dir.join("scene.json");
            let stage = if scene_file.exists() {
                Scene::load(scene_file).stage(PipelineStage::Synth)?.stage
            } else {
                Stage::default()
            };
            (capture, stage)
        }
        None => {
            let (scene, capture) = synthesize(cfg.seed);
            (capture, scene.stage)
        }
    };

    let bounds = if cfg.use_hull {
        let masks = capture
            .masks
            .as_deref()
            .ok_or_else(|| Error::Config("hull requested but the capture has no masks".into()))
            .stage(PipelineStage::Hull)?;
        Some(hull_bounds(&capture, masks, &stage, &cfg.hull).stage(PipelineStage::Hull)?)
    } else {
        None
    };

    let disparity = match_stereo(&capture.left, &capture.right, bounds.as_ref(), &cfg.matcher)
        .stage(PipelineStage::Match)?;
    let report = capture
        .gt_disparity
        .as_ref()
        .map(|gt| compute_metrics(&disparity, gt, capture.occlusion.as_ref(), None))
        .transpose()
        .stage(PipelineStage::Eval)?;
    Ok(PipelineOutput {
        disparity,
        bounds,
        report,
    })
}

/// Writes `disp.pfm`, `report.json` (when evaluated), `bounds.pfm` (when
/// carved) and `resolved_config.json` into `out`.
pub fn write_pipeline_outputs(out: &Path, cfg: &PipelineConfig, result: &PipelineOutput) -> Result<()> {
    fs::create_dir_all(out)?;
    write_disparity(out.join("disp.pfm"), &result.disparity)?;
    if let Some(bounds) = &result.bounds {
        bounds.save(out.join("bounds.pfm"))?;
    }
    if let Some(report) = &result.report {
        fs::write(out.join("report.json"), serde_json::to_string_pretty(report)?)?;
    }
    fs::write(out.join("resolved_config.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}
