use hullstereo::eval::{perturb_masks, MorphOp};
use hullstereo::geometry::{
    carve_hull, compute_bounds, ring_cameras, Cube, PinholeCamera, Point3, SilhouetteMask, StereoRig, VisualHull,
};
use hullstereo::image::Mask;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

const W: usize = 640;
const H: usize = 480;

fn sphere_center() -> Point3 {
    Point3::new(0.0, 0.0, 2.0)
}

/// Whether the ray from `eye` through `p` passes within `radius` of `center`,
/// i.e. `p` lies in the sphere's silhouette cone seen from `eye`.
fn in_cone(eye: &Point3, p: &Point3, center: &Point3, radius: f64) -> bool {
    let to_center = center - eye;
    let dist = to_center.norm();
    let dir = (p - eye).normalize();
    let cos = dir.dot(&to_center) / dist;
    cos >= (1.0 - (radius / dist).powi(2)).sqrt()
}

fn sphere_mask(camera: &PinholeCamera, center: &Point3, radius: f64) -> Mask {
    let eye = camera.center();
    Mask::from_fn(camera.width, camera.height, |x, y| {
        let dir = camera.ray_direction(x as f64, y as f64);
        in_cone(&eye, &(eye + dir), center, radius)
    })
}

fn ring(radius: f64) -> Vec<PinholeCamera> {
    ring_cameras(12, sphere_center(), radius, 0.5, [500.0, 500.0, 319.5, 239.5], W, H).unwrap()
}

fn silhouettes(cameras: &[PinholeCamera], masks: &[Mask]) -> Vec<SilhouetteMask> {
    masks
        .iter()
        .zip(cameras)
        .map(|(m, c)| SilhouetteMask::new(m.clone(), c.clone()).unwrap())
        .collect()
}

fn carve(cameras: &[PinholeCamera], masks: &[Mask], root: Cube, depth: u32) -> VisualHull {
    carve_hull(&silhouettes(cameras, masks), root, depth).unwrap()
}

fn probe_grid(root: &Cube, n: usize) -> impl Iterator<Item = Point3> + '_ {
    let step = 2.0 * root.half / n as f64;
    (0..n * n * n).map(move |i| {
        let (ix, iy, iz) = (i % n, (i / n) % n, i / (n * n));
        let lo = root.center - Vector3::repeat(root.half);
        lo + Vector3::new(ix as f64 + 0.5, iy as f64 + 0.5, iz as f64 + 0.5) * step
    })
}

#[test]
fn sphere_hull_matches_cone_intersection_on_probe_grid() {
    let radius = 0.5;
    let cameras = ring(4.0);
    let masks: Vec<Mask> = cameras.iter().map(|c| sphere_mask(c, &sphere_center(), radius)).collect();
    let root = Cube::new(sphere_center(), 1.5);
    let hull = carve(&cameras, &masks, root, 8);
    let eyes: Vec<Point3> = cameras.iter().map(|c| c.center()).collect();
    let oracle = |p: &Point3| eyes.iter().all(|e| in_cone(e, p, &sphere_center(), radius));
    let diag = hull.finest_edge() * 3f64.sqrt();

    let (mut disagreements, mut near_boundary) = (0, 0);
    for p in probe_grid(&root, 64) {
        let d = (p - sphere_center()).norm();
        if d <= 0.45 {
            assert!(hull.contains(&p), "interior point {p:?} carved away");
        }
        if (p.y - sphere_center().y).abs() < 1e-9 && d >= radius + 0.6 {
            assert!(!hull.contains(&p), "far ring-plane point {p:?} kept");
        }
        if hull.contains(&p) != oracle(&p) {
            // Only allowed within one leaf diagonal of the oracle boundary.
            let boundary = (0..27).filter(|&k| k != 13).any(|k| {
                let o = Vector3::new((k % 3) as f64 - 1.0, ((k / 3) % 3) as f64 - 1.0, (k / 9) as f64 - 1.0);
                oracle(&(p + o.normalize() * diag)) != oracle(&p)
            });
            if boundary {
                near_boundary += 1;
            } else {
                disagreements += 1;
            }
        }
    }
    assert_eq!(disagreements, 0, "{near_boundary} boundary disagreements were tolerated");
}

#[test]
fn dilated_masks_widen_hull_and_bounds() {
    let cameras = ring(2.5);
    let masks: Vec<Mask> = cameras.iter().map(|c| sphere_mask(c, &sphere_center(), 0.3)).collect();
    let dilated = perturb_masks(&masks, MorphOp::Dilate, 3);
    let root = Cube::new(sphere_center(), 0.6);
    let hull = carve(&cameras, &masks, root, 7);
    let wide = carve(&cameras, &dilated, root, 7);
    for p in probe_grid(&root, 48) {
        if hull.contains(&p) {
            assert!(wide.contains(&p), "dilation removed {p:?}");
        }
    }

    let rig = hullstereo::geometry::desk_rig();
    let b = compute_bounds(&hull, &rig, 0.25);
    let bw = compute_bounds(&wide, &rig, 0.25);
    let mut compared = 0;
    for y in 0..b.height() {
        for x in 0..b.width() {
            if let Some((lo, hi)) = b.get(x, y) {
                let (lo2, hi2) = bw.get(x, y).expect("dilated bounds valid wherever original are");
                assert!(lo2 <= lo && hi2 >= hi, "({x}, {y}): [{lo}, {hi}] vs [{lo2}, {hi2}]");
                compared += 1;
            }
        }
    }
    assert!(compared > 100);
}

#[test]
fn analytic_sphere_bounds_at_principal_pixel() {
    // Principal point on the center of feature pixel (80, 60).
    let left = PinholeCamera::new([400.0, 400.0, 321.5, 241.5], Matrix3::identity(), Vector3::zeros(), W, H).unwrap();
    let rig = StereoRig::from_left(left, 0.2).unwrap();
    let cameras = ring(2.5);
    let masks: Vec<Mask> = cameras.iter().map(|c| sphere_mask(c, &sphere_center(), 0.5)).collect();
    let hull = carve(&cameras, &masks, Cube::new(sphere_center(), 0.75), 8);
    let (b_min, b_max) = compute_bounds(&hull, &rig, 0.25).get(80, 60).expect("ray hits the hull");
    assert!(f64::from(b_max) >= 400.0 * 0.2 / 1.5 * 0.25, "b_max {b_max}");
    assert!(f64::from(b_min) <= 400.0 * 0.2 / 2.5 * 0.25, "b_min {b_min}");
}

#[test]
fn bounds_are_deterministic() {
    let cameras = ring(2.5);
    let masks: Vec<Mask> = cameras.iter().map(|c| sphere_mask(c, &sphere_center(), 0.4)).collect();
    let root = Cube::new(sphere_center(), 0.6);
    let rig = hullstereo::geometry::desk_rig();
    let a = compute_bounds(&carve(&cameras, &masks, root, 6), &rig, 0.25);
    let b = compute_bounds(&carve(&cameras, &masks, root, 6), &rig, 0.25);
    let bits = |m: &hullstereo::geometry::BoundsMap| m.to_pfm().data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

proptest! {
    #[test]
    fn exactly_one_child_contains_each_point(
        fx in 0.0f64..1.0, fy in 0.0f64..1.0, fz in 0.0f64..1.0, half in 0.01f64..10.0,
    ) {
        let cube = Cube::new(Point3::new(0.3, -1.0, 2.0), half);
        let lo = cube.center - Vector3::repeat(half);
        let p = lo + Vector3::new(fx, fy, fz) * (2.0 * half);
        prop_assume!(cube.contains(&p));
        let holders = (0..8).filter(|&i| cube.child(i).contains(&p)).count();
        prop_assert_eq!(holders, 1);
    }

    #[test]
    fn depth_disparity_round_trip(z in 0.05f64..1e4) {
        let rig = hullstereo::geometry::desk_rig();
        let d = rig.disparity_from_depth(z).unwrap();
        let back = rig.depth_from_disparity(d).unwrap();
        prop_assert!((back - z).abs() <= 1e-9 * z);
    }

    #[test]
    fn hull_serialization_round_trips(depth in 1u32..5, r in 0.1f64..0.5) {
        let cameras = ring(2.5);
        let masks: Vec<Mask> = cameras.iter().map(|c| sphere_mask(c, &sphere_center(), r)).collect();
        let hull = carve(&cameras, &masks, Cube::new(sphere_center(), 0.6), depth);
        let back = VisualHull::from_bytes(&hull.to_bytes()).unwrap();
        prop_assert_eq!(back, hull);
    }
}
