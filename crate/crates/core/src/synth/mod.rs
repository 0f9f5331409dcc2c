//! Procedural capture-stage scenes rendered to stereo pairs, ground truth
//! disparity, occlusion masks and ring-camera silhouettes.

mod obj;
mod render;
mod scene;

pub use obj::{load_obj, parse_obj};
pub use render::{depth_buffer, dot_pattern, render, rig_projector, surface_depth, DepthBuffer, RenderOutput};
pub use scene::{generate_scene, Scene, SceneObject, Shape, Stage, MAX_OBJECTS};

use std::fs;
use std::path::{Path, PathBuf};

use crate::disparity::{DisparityMap, Resolution};
use crate::error::{Error, Result};
use crate::geometry::{desk_rig, ring_cameras, CameraSet, Point3, SilhouetteMask};
use crate::image::{GrayImage, Mask};
use crate::io::{read_disparity, read_image, read_mask, write_disparity, write_mask, write_pgm};

pub const RING_SIZE: usize = 12;
pub const RING_RADIUS: f64 = 2.5;
pub const RING_ELEVATION: f64 = 0.5;

/// Default rig plus 12 silhouette cameras circling the stage.
pub fn desk_cameras(stage: &Stage) -> CameraSet {
    let rig = desk_rig();
    let ring = ring_cameras(
        RING_SIZE,
        Point3::from(stage.center),
        RING_RADIUS,
        RING_ELEVATION,
        rig.left.intrinsics(),
        rig.width(),
        rig.height(),
    )
    .expect("static ring parameters are valid");
    CameraSet { rig, ring }
}

/// A rendered or loaded capture, as stored in a scene directory.
#[derive(Clone, Debug)]
pub struct Capture {
    pub cameras: CameraSet,
    pub left: GrayImage,
    pub right: GrayImage,
    pub gt_disparity: Option<DisparityMap>,
    pub occlusion: Option<Mask>,
    /// One per ring camera; `None` when the directory has no masks.
    pub masks: Option<Vec<Mask>>,
}

/// Generates and renders the scene for `seed` with the default cameras.
pub fn synthesize(seed: u64) -> (Scene, Capture) {
    let scene = generate_scene(seed);
    let cameras = desk_cameras(&scene.stage);
    let out = render(&scene, &cameras.rig, &cameras.ring, seed);
    let capture = Capture {
        cameras,
        left: out.left,
        right: out.right,
        gt_disparity: Some(out.gt_disparity),
        occlusion: Some(out.occlusion),
        masks: Some(out.masks),
    };
    (scene, capture)
}

pub fn mask_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("masks").join(format!("cam_{index:02}.pgm"))
}

impl Capture {
    /// Silhouettes paired with their ring cameras.
    pub fn silhouettes(&self) -> Result<Vec<SilhouetteMask>> {
        self.silhouettes_from(self.masks.as_deref().ok_or_else(|| {
            Error::Config("capture has no silhouette masks".into())
        })?)
    }

    /// Pairs replacement masks (e.g. perturbed ones) with the ring cameras.
    pub fn silhouettes_from(&self, masks: &[Mask]) -> Result<Vec<SilhouetteMask>> {
        if masks.len() != self.cameras.ring.len() {
            return Err(Error::Config(format!(
                "{} masks for {} ring cameras",
                masks.len(),
                self.cameras.ring.len()
            )));
        }
        masks
            .iter()
            .zip(&self.cameras.ring)
            .map(|(m, c)| SilhouetteMask::new(m.clone(), c.clone()))
            .collect()
    }

    /// Writes `left.pgm`, `right.pgm`, `gt.pfm`, `occ.pgm`,
    /// `masks/cam_NN.pgm` and `cameras.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_pgm(dir.join("left.pgm"), &self.left)?;
        write_pgm(dir.join("right.pgm"), &self.right)?;
        if let Some(gt) = &self.gt_disparity {
            write_disparity(dir.join("gt.pfm"), gt)?;
        }
        if let Some(occ) = &self.occlusion {
            write_mask(dir.join("occ.pgm"), occ)?;
        }
        if let Some(masks) = &self.masks {
            fs::create_dir_all(dir.join("masks"))?;
            for (i, m) in masks.iter().enumerate() {
                write_mask(mask_path(dir, i), m)?;
            }
        }
        self.cameras.save(dir.join("cameras.json"))
    }

    /// Loads a scene directory. Ground truth, occlusion and masks are optional;
    /// masks count as present only if every ring camera has one.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cameras = CameraSet::load(dir.join("cameras.json"))?;
        let left = read_image(dir.join("left.pgm"))?;
        let right = read_image(dir.join("right.pgm"))?;
        let optional = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        let gt_disparity = optional("gt.pfm")
            .map(|p| read_disparity(p, Resolution::Full))
            .transpose()?;
        let occlusion = optional("occ.pgm").map(read_mask).transpose()?;
        let all_masks = !cameras.ring.is_empty()
            && (0..cameras.ring.len()).all(|i| mask_path(dir, i).exists());
        let masks = if all_masks {
            Some(
                (0..cameras.ring.len())
                    .map(|i| read_mask(mask_path(dir, i)))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self {
            cameras,
            left,
            right,
            gt_disparity,
            occlusion,
            masks,
        })
    }
}
