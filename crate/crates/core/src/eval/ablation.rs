use std::fs;
use std::path::Path;

use log::warn;
use serde::Serialize;

use super::metrics::{compute_metrics, MetricReport};
use crate::error::{Error, Result};
use crate::matcher::{match_stereo, HullMode, MatchConfig};
use crate::pipeline::{hull_bounds, HullConfig};
use crate::synth::{Capture, Scene, Stage};

/// One CSV line of an ablation table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub scene: String,
    pub mode: HullMode,
    pub epe_all: f64,
    pub epe_noc: f64,
    pub gt4_all: f64,
    pub d1_all: f64,
}

impl AblationRow {
    pub fn new(scene: impl Into<String>, mode: HullMode, r: &MetricReport) -> Self {
        Self {
            scene: scene.into(),
            mode,
            epe_all: r.epe_all,
            epe_noc: r.epe_noc,
            gt4_all: r.gt4_all,
            d1_all: r.d1_all,
        }
    }
}

/// Matches one capture under each hull routing mode. Bounds are carved once.
pub fn evaluate_modes(
    capture: &Capture,
    stage: &Stage,
    modes: &[HullMode],
    hull: &HullConfig,
    matcher: &MatchConfig,
) -> Result<Vec<(HullMode, MetricReport)>> {
    let gt = capture
        .gt_disparity
        .as_ref()
        .ok_or_else(|| Error::Input("capture has no ground truth".into()))?;
    let masks = capture
        .masks
        .as_deref()
        .ok_or_else(|| Error::Input("capture has no masks".into()))?;
    let bounds = hull_bounds(capture, masks, stage, hull)?;
    modes
        .iter()
        .map(|&mode| {
            let cfg = MatchConfig {
                hull_mode: mode,
                ..matcher.clone()
            };
            let pred = match_stereo(&capture.left, &capture.right, Some(&bounds), &cfg)?;
            Ok((mode, compute_metrics(&pred, gt, capture.occlusion.as_ref(), None)?))
        })
        .collect()
}

/// Runs every scene subdirectory of `dataset` (sorted by name) through
/// `modes`. Scenes lacking ground truth or masks are skipped with a warning.
pub fn ablation_run(
    dataset: &Path,
    modes: &[HullMode],
    hull: &HullConfig,
    matcher: &MatchConfig,
) -> Result<Vec<AblationRow>> {
    let mut dirs: Vec<_> = fs::read_dir(dataset)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut rows = Vec::new();
    for dir in dirs {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let capture = match Capture::load(&dir) {
            Ok(c) => c,
            Err(e) => {
                warn!("skipping scene {name}: {e}");
                continue;
            }
        };
        if capture.gt_disparity.is_none() || capture.masks.is_none() {
            warn!("skipping scene {name}: missing ground truth or masks");
            continue;
        }
        let scene_file = dir.join("scene.json");
        let stage = if scene_file.exists() {
            Scene::load(scene_file)?.stage
        } else {
            Stage::default()
        };
        for (mode, report) in evaluate_modes(&capture, &stage, modes, hull, matcher)? {
            rows.push(AblationRow::new(name.clone(), mode, &report));
        }
    }
    Ok(rows)
}

/// Columns: scene, mode, epe_all, epe_noc, gt4_all, d1_all.
pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
