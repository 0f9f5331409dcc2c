//! Cameras, rectified stereo geometry, visual hull carving and disparity bounds.

mod bounds;
mod camera;
mod hull;

pub use bounds::{compute_bounds, feature_dim, ray_depth_interval, BoundsMap, FEATURE_SCALE};
pub use camera::{
    desk_rig, ring_cameras, CameraSet, PinholeCamera, Point3, SilhouetteMask, StereoRig, MIN_DEPTH,
};
pub use hull::{carve_hull, Cube, Occupancy, VisualHull, MAX_OCTREE_DEPTH};
