//! Minimal Wavefront OBJ reader: `v` and `f` records only.

use std::path::Path;

use super::scene::Shape;
use crate::error::{Error, Result};

/// Parses vertices and faces; polygons are fan-triangulated and
/// `v/vt/vn` index forms and negative indices are accepted.
pub fn parse_obj(text: &str) -> Result<Shape> {
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for slot in &mut xyz {
                    *slot = parts
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::parse(at, "vertex needs three coordinates"))?;
                }
                vertices.push(xyz);
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|tok| {
                        let head = tok.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|_| Error::parse(at, format!("bad face index '{tok}'")))?;
                        let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        if resolved < 0 || resolved >= vertices.len() as i64 {
                            return Err(Error::parse(at, format!("face index {i} out of range")));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(at, "face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(Error::Input("OBJ contains no faces".into()));
    }
    Ok(Shape::Mesh { vertices, faces })
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<Shape> {
    parse_obj(&std::fs::read_to_string(path)?)
}
