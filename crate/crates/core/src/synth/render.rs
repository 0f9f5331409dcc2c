//! Depth buffers, projected-pattern shading, ground truth and occlusion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::scene::{Scene, Shape};
use crate::disparity::{DisparityMap, Resolution};
use crate::geometry::{PinholeCamera, Point3, StereoRig};
use crate::image::{GrayImage, Mask};

/// Triangles with a vertex closer than this to the camera plane are skipped.
const NEAR_PLANE: f64 = 0.01;
/// Projector pattern lattice spacing in projector pixels.
const PATTERN_CELL: f64 = 3.0;
const NOISE_SIGMA: f64 = 0.01;
const AMBIENT: f64 = 0.08;
const BACKGROUND: f64 = 0.02;
/// Depth slack for projector shadowing, in meters.
const SHADOW_TOLERANCE: f64 = 0.005;
/// Disparity slack for right-view occlusion, in pixels.
const OCCLUSION_TOLERANCE: f64 = 0.5;

/// Per-pixel nearest surface seen by a camera.
#[derive(Clone, Debug)]
pub struct DepthBuffer {
    pub width: usize,
    pub height: usize,
    /// Camera-frame depth, infinite on background.
    pub depth: Vec<f64>,
    /// World-frame unit normal facing the camera.
    pub normal: Vec<Point3>,
    pub object: Vec<u32>,
}

impl DepthBuffer {
    fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; width * height],
            normal: vec![Point3::zeros(); width * height],
            object: vec![u32::MAX; width * height],
        }
    }

    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn foreground(&self) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| self.depth_at(x, y).is_finite())
    }
}

/// Ray parameter (= camera depth, since `dir` has unit camera z) and normal
/// of the first hit with `t > 0`.
fn intersect(shape: &Shape, origin: &Point3, dir: &Point3) -> Option<(f64, Point3)> {
    match shape {
        Shape::Sphere { center, radius } => {
            let oc = origin - Point3::from(*center);
            let a = dir.dot(dir);
            let b = oc.dot(dir);
            let c = oc.dot(&oc) - radius * radius;
            let disc = b * b - a * c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t = [(-b - sq) / a, (-b + sq) / a]
                .into_iter()
                .find(|&t| t > NEAR_PLANE)?;
            let n = (origin + dir * t - Point3::from(*center)) / *radius;
            Some((t, n))
        }
        Shape::Box {
            center,
            half_extents,
        } => {
            let mut t0 = f64::NEG_INFINITY;
            let mut t1 = f64::INFINITY;
            let mut axis0 = 0;
            let mut axis1 = 0;
            for i in 0..3 {
                let lo = center[i] - half_extents[i];
                let hi = center[i] + half_extents[i];
                if dir[i].abs() < 1e-15 {
                    if origin[i] < lo || origin[i] > hi {
                        return None;
                    }
                    continue;
                }
                let a = (lo - origin[i]) / dir[i];
                let b = (hi - origin[i]) / dir[i];
                let (near, far) = if a < b { (a, b) } else { (b, a) };
                if near > t0 {
                    t0 = near;
                    axis0 = i;
                }
                if far < t1 {
                    t1 = far;
                    axis1 = i;
                }
            }
            if t0 > t1 {
                return None;
            }
            let (t, axis) = if t0 > NEAR_PLANE {
                (t0, axis0)
            } else if t1 > NEAR_PLANE {
                (t1, axis1)
            } else {
                return None;
            };
            let mut n = Point3::zeros();
            n[axis] = -dir[axis].signum();
            Some((t, n))
        }
        Shape::Mesh { vertices, faces } => {
            let mut best: Option<(f64, Point3)> = None;
            for face in faces {
                let [a, b, c] = face.map(|i| Point3::from(vertices[i as usize]));
                if let Some(t) = ray_triangle(origin, dir, &a, &b, &c) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        let mut n = (b - a).cross(&(c - a)).normalize();
                        if n.dot(dir) > 0.0 {
                            n = -n;
                        }
                        best = Some((t, n));
                    }
                }
            }
            best
        }
    }
}

/// Moller-Trumbore; returns the ray parameter of a hit beyond the near plane.
fn ray_triangle(origin: &Point3, dir: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > NEAR_PLANE).then_some(t)
}

/// Camera depth of the first surface along the ray through continuous pixel
/// coordinate `(u, v)`, or `None` for background.
pub fn surface_depth(scene: &Scene, camera: &PinholeCamera, u: f64, v: f64) -> Option<f64> {
    let origin = camera.center();
    let dir = camera.ray_direction(u, v);
    scene
        .objects
        .iter()
        .filter_map(|obj| intersect(&obj.shape, &origin, &dir).map(|(t, _)| t))
        .min_by(f64::total_cmp)
}

fn rasterize_mesh(
    buffer: &mut DepthBuffer,
    camera: &PinholeCamera,
    object: u32,
    vertices: &[[f64; 3]],
    faces: &[[u32; 3]],
) {
    let eye = camera.center();
    for face in faces {
        let world = face.map(|i| Point3::from(vertices[i as usize]));
        let cam = world.map(|p| camera.to_camera(&p));
        if cam.iter().any(|p| p.z < NEAR_PLANE) {
            continue;
        }
        let uv = cam.map(|p| (camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy));
        let area = (uv[1].0 - uv[0].0) * (uv[2].1 - uv[0].1) - (uv[2].0 - uv[0].0) * (uv[1].1 - uv[0].1);
        if area.abs() < 1e-12 {
            continue;
        }
        let mut normal = (world[1] - world[0]).cross(&(world[2] - world[0])).normalize();
        if normal.dot(&(eye - world[0])) < 0.0 {
            normal = -normal;
        }
        let umin = uv.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let umax = uv.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).floor().min((buffer.width - 1) as f64);
        let vmin = uv.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let vmax = uv.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).floor().min((buffer.height - 1) as f64);
        if umin > umax || vmin > vmax {
            continue;
        }
        let edge = |a: (f64, f64), b: (f64, f64), p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        for y in vmin as usize..=vmax as usize {
            for x in umin as usize..=umax as usize {
                let p = (x as f64, y as f64);
                let w0 = edge(uv[1], uv[2], p) / area;
                let w1 = edge(uv[2], uv[0], p) / area;
                let w2 = edge(uv[0], uv[1], p) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // Perspective-correct depth: 1/z is affine in screen space.
                let z = 1.0 / (w0 / cam[0].z + w1 / cam[1].z + w2 / cam[2].z);
                let i = y * buffer.width + x;
                if z < buffer.depth[i] {
                    buffer.depth[i] = z;
                    buffer.normal[i] = normal;
                    buffer.object[i] = object;
                }
            }
        }
    }
}

/// Analytic ray casting for spheres and boxes, z-buffered rasterization for meshes.
pub fn depth_buffer(scene: &Scene, camera: &PinholeCamera) -> DepthBuffer {
    let (w, h) = (camera.width, camera.height);
    let mut buffer = DepthBuffer::empty(w, h);
    let origin = camera.center();
    let rows: Vec<Vec<(f64, Point3, u32)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let dir = camera.ray_direction(x as f64, y as f64);
                    let mut best = (f64::INFINITY, Point3::zeros(), u32::MAX);
                    for (i, obj) in scene.objects.iter().enumerate() {
                        if let Some((t, n)) = intersect(&obj.shape, &origin, &dir) {
                            if t < best.0 {
                                best = (t, n, i as u32);
                            }
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (z, n, o)) in row.into_iter().enumerate() {
            let i = y * w + x;
            buffer.depth[i] = z;
            buffer.normal[i] = n;
            buffer.object[i] = o;
        }
    }
    for (i, obj) in scene.objects.iter().enumerate() {
        if let Shape::Mesh { vertices, faces } = &obj.shape {
            rasterize_mesh(&mut buffer, camera, i as u32, vertices, faces);
        }
    }
    buffer
}

fn hash64(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = hash64(seed ^ hash64((ix as u64).wrapping_mul(0x1F1F_1F1F) ^ hash64(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Thresholded value noise: soft-edged dots of a few projector pixels.
pub fn dot_pattern(seed: u64, u: f64, v: f64) -> f64 {
    let (gx, gy) = (u / PATTERN_CELL, v / PATTERN_CELL);
    let (ix, iy) = (gx.floor() as i64, gy.floor() as i64);
    let (fx, fy) = (smoothstep(0.0, 1.0, gx - ix as f64), smoothstep(0.0, 1.0, gy - iy as f64));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let value = (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy;
    0.1 + 0.9 * smoothstep(0.42, 0.58, value)
}

fn albedo(texture_seed: u64) -> f64 {
    0.6 + 0.4 * (hash64(texture_seed) >> 11) as f64 / (1u64 << 53) as f64
}

/// A projector at the middle of the baseline, sharing the left intrinsics.
pub fn rig_projector(rig: &StereoRig) -> PinholeCamera {
    let mut p = rig.left.clone();
    p.translation = (rig.left.translation + rig.right.translation) * 0.5;
    p
}

struct Illumination<'a> {
    scene: &'a Scene,
    projector: &'a PinholeCamera,
    shadow: &'a DepthBuffer,
    seed: u64,
}

impl Illumination<'_> {
    fn shade(&self, camera: &PinholeCamera, buffer: &DepthBuffer, x: usize, y: usize) -> f64 {
        let i = y * buffer.width + x;
        let z = buffer.depth[i];
        if !z.is_finite() {
            return BACKGROUND;
        }
        let point = camera.center() + camera.ray_direction(x as f64, y as f64) * z;
        let rho = albedo(self.scene.objects[buffer.object[i] as usize].texture_seed);
        let Some((u, v, pz)) = self.projector.project(&point) else {
            return rho * AMBIENT;
        };
        let lit = self.projector.pixel_at(u, v).is_some_and(|(px, py)| {
            pz <= self.shadow.depth_at(px, py) + SHADOW_TOLERANCE
        });
        if !lit {
            return rho * AMBIENT;
        }
        let to_light = (self.projector.center() - point).normalize();
        let lambert = buffer.normal[i].dot(&to_light).max(0.0);
        rho * (AMBIENT + (1.0 - AMBIENT) * lambert * dot_pattern(self.seed, u, v))
    }

    fn image(&self, camera: &PinholeCamera, buffer: &DepthBuffer, stream: u64) -> GrayImage {
        let (w, h) = (buffer.width, buffer.height);
        let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
        let values: Vec<f32> = (0..h)
            .into_par_iter()
            .flat_map_iter(|y| {
                let mut rng = ChaCha8Rng::seed_from_u64(hash64(self.seed ^ hash64(stream) ^ hash64(y as u64 + 1)));
                (0..w)
                    .map(|x| (self.shade(camera, buffer, x, y) + noise.sample(&mut rng)) as f32)
                    .collect::<Vec<_>>()
            })
            .collect();
        GrayImage::from_unit_floats(w, h, &values).expect("buffer sized to camera")
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub left: GrayImage,
    pub right: GrayImage,
    /// Full-resolution left-view disparity; background invalid.
    pub gt_disparity: DisparityMap,
    /// Left pixels hidden or out of view in the right camera.
    pub occlusion: Mask,
    /// Foreground silhouettes of the ring cameras, in order.
    pub masks: Vec<Mask>,
}

/// Renders the stereo pair, ground truth, occlusion and ring silhouettes.
pub fn render(scene: &Scene, rig: &StereoRig, ring: &[PinholeCamera], pattern_seed: u64) -> RenderOutput {
    let projector = rig_projector(rig);
    let (left_buf, right_buf, shadow) = {
        let cams = [&rig.left, &rig.right, &projector];
        let mut bufs: Vec<DepthBuffer> = cams.par_iter().map(|c| depth_buffer(scene, c)).collect();
        let shadow = bufs.pop().unwrap();
        let right = bufs.pop().unwrap();
        (bufs.pop().unwrap(), right, shadow)
    };
    let light = Illumination {
        scene,
        projector: &projector,
        shadow: &shadow,
        seed: pattern_seed,
    };
    let (left, right) = rayon::join(
        || light.image(&rig.left, &left_buf, 0),
        || light.image(&rig.right, &right_buf, 1),
    );

    let (w, h) = (rig.width(), rig.height());
    let focal = rig.fx() * rig.baseline;
    let mut gt_disparity = DisparityMap::invalid(w, h, Resolution::Full);
    let mut occlusion = Mask::filled(w, h, false);
    let mut occ = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let z = left_buf.depth_at(x, y);
            if !z.is_finite() {
                continue;
            }
            let d = focal / z;
            gt_disparity.set(x, y, Some(d as f32));
            let xr = (x as f64 - d + 0.5).floor();
            occ[y * w + x] = if xr < 0.0 {
                true
            } else {
                let zr = right_buf.depth_at(xr as usize, y);
                zr.is_finite() && focal / zr > d + OCCLUSION_TOLERANCE
            };
        }
    }
    if occ.iter().any(|&o| o) {
        occlusion = Mask::new(w, h, occ).expect("sized to image");
    }

    let masks = ring
        .par_iter()
        .map(|cam| depth_buffer(scene, cam).foreground())
        .collect();
    RenderOutput {
        left,
        right,
        gt_disparity,
        occlusion,
        masks,
    }
}
