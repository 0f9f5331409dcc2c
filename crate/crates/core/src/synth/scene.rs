//! Procedural scenes of analytic primitives and small meshes.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Cube, Point3};

pub const MAX_OBJECTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Axis-aligned box.
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
    Mesh {
        vertices: Vec<[f64; 3]>,
        faces: Vec<[u32; 3]>,
    },
}

impl Shape {
    pub fn translated(&self, by: &Vector3<f64>) -> Shape {
        let shift = |p: &[f64; 3]| [p[0] + by.x, p[1] + by.y, p[2] + by.z];
        match self {
            Shape::Sphere { center, radius } => Shape::Sphere {
                center: shift(center),
                radius: *radius,
            },
            Shape::Box {
                center,
                half_extents,
            } => Shape::Box {
                center: shift(center),
                half_extents: *half_extents,
            },
            Shape::Mesh { vertices, faces } => Shape::Mesh {
                vertices: vertices.iter().map(shift).collect(),
                faces: faces.clone(),
            },
        }
    }

    /// Center and radius of a sphere enclosing the shape.
    pub fn bounding_sphere(&self) -> (Point3, f64) {
        match self {
            Shape::Sphere { center, radius } => (Point3::from(*center), *radius),
            Shape::Box {
                center,
                half_extents,
            } => (Point3::from(*center), Vector3::from(*half_extents).norm()),
            Shape::Mesh { vertices, .. } => {
                if vertices.is_empty() {
                    return (Point3::zeros(), 0.0);
                }
                let (lo, hi) = vertices.iter().fold(
                    (Point3::repeat(f64::INFINITY), Point3::repeat(f64::NEG_INFINITY)),
                    |(lo, hi), v| {
                        let p = Point3::from(*v);
                        (lo.inf(&p), hi.sup(&p))
                    },
                );
                let c = (lo + hi) * 0.5;
                let r = vertices
                    .iter()
                    .map(|v| (Point3::from(*v) - c).norm())
                    .fold(0.0, f64::max);
                (c, r)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    /// Drives the object's albedo.
    pub texture_seed: u64,
}

/// Cubic capture volume.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub center: [f64; 3],
    pub half_extent: f64,
}

impl Default for Stage {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0, 2.0],
            half_extent: 0.5,
        }
    }
}

impl Stage {
    /// Root cube for carving: the stage grown by `margin` (fractional).
    pub fn hull_root(&self, margin: f64) -> Cube {
        Cube::new(Point3::from(self.center), self.half_extent * (1.0 + margin))
    }

    pub fn encloses(&self, center: &Point3, radius: f64) -> bool {
        (0..3).all(|i| (center[i] - self.center[i]).abs() + radius <= self.half_extent + 1e-12)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub stage: Stage,
    pub seed: u64,
}

impl Scene {
    /// Checks the object count and stage containment.
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_OBJECTS).contains(&self.objects.len()) {
            return Err(Error::Config(format!(
                "scene must hold 1 to {MAX_OBJECTS} objects, found {}",
                self.objects.len()
            )));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            let (c, r) = obj.shape.bounding_sphere();
            if !self.stage.encloses(&c, r) {
                return Err(Error::Config(format!("object {i} leaves the stage")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Regular octahedron with per-axis radii, rotated by `rotation`.
fn octahedron(center: Point3, radii: Vector3<f64>, rotation: &UnitQuaternion<f64>) -> Shape {
    let axes = [
        Vector3::new(radii.x, 0.0, 0.0),
        Vector3::new(-radii.x, 0.0, 0.0),
        Vector3::new(0.0, radii.y, 0.0),
        Vector3::new(0.0, -radii.y, 0.0),
        Vector3::new(0.0, 0.0, radii.z),
        Vector3::new(0.0, 0.0, -radii.z),
    ];
    let vertices = axes
        .iter()
        .map(|a| {
            let p = center + rotation * a;
            [p.x, p.y, p.z]
        })
        .collect();
    let faces = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    Shape::Mesh { vertices, faces }
}

/// Random arrangement of 1 to 10 spheres, boxes and octahedra on the default
/// stage, fully determined by `seed`.
pub fn generate_scene(seed: u64) -> Scene {
    let stage = Stage::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(1..=MAX_OBJECTS);
    let stage_center = Point3::from(stage.center);
    let objects = (0..count)
        .map(|_| {
            let shape = match rng.random_range(0..3u8) {
                0 => Shape::Sphere {
                    center: [0.0; 3],
                    radius: rng.random_range(0.08..0.2),
                },
                1 => Shape::Box {
                    center: [0.0; 3],
                    half_extents: [
                        rng.random_range(0.05..0.15),
                        rng.random_range(0.05..0.15),
                        rng.random_range(0.05..0.15),
                    ],
                },
                _ => {
                    let radii = Vector3::new(
                        rng.random_range(0.08..0.18),
                        rng.random_range(0.08..0.18),
                        rng.random_range(0.08..0.18),
                    );
                    let axis = Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    let angle = rng.random_range(0.0..std::f64::consts::PI);
                    let rotation = Unit::try_new(axis, 1e-9)
                        .map(|a| UnitQuaternion::from_axis_angle(&a, angle))
                        .unwrap_or_else(UnitQuaternion::identity);
                    octahedron(Point3::zeros(), radii, &rotation)
                }
            };
            let (_, radius) = shape.bounding_sphere();
            let slack = stage.half_extent - radius;
            let offset = Vector3::new(
                rng.random_range(-slack..=slack),
                rng.random_range(-slack..=slack),
                rng.random_range(-slack..=slack),
            );
            SceneObject {
                shape: shape.translated(&(stage_center + offset)),
                texture_seed: rng.random(),
            }
        })
        .collect();
    Scene {
        objects,
        stage,
        seed,
    }
}
