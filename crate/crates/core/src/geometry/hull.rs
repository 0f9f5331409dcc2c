//! Octree visual hull carved from multi-view silhouettes.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::camera::{Point3, SilhouetteMask};
use crate::error::{Error, Result};
use crate::image::Mask;

pub const MAX_OCTREE_DEPTH: u32 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Occupancy {
    Inside,
    Outside,
}

/// Axis-aligned cube. Membership is half-open, `[lo, hi)` per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cube {
    pub center: Point3,
    pub half: f64,
}

impl Cube {
    pub fn new(center: Point3, half: f64) -> Self {
        Self { center, half }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| {
            let lo = self.center[i] - self.half;
            let hi = self.center[i] + self.half;
            p[i] >= lo && p[i] < hi
        })
    }

    pub fn corners(&self) -> [Point3; 8] {
        std::array::from_fn(|i| self.child_offset(i, self.half))
    }

    /// Child octant `i`: bit 0 selects +x, bit 1 +y, bit 2 +z.
    pub fn child(&self, i: usize) -> Cube {
        let half = self.half * 0.5;
        Cube {
            center: self.child_offset(i, half),
            half,
        }
    }

    fn child_offset(&self, i: usize, d: f64) -> Point3 {
        let s = |bit: usize| if i & bit != 0 { d } else { -d };
        self.center + Point3::new(s(1), s(2), s(4))
    }

    fn octant_of(&self, p: &Point3) -> usize {
        (p.x >= self.center.x) as usize
            | ((p.y >= self.center.y) as usize) << 1
            | ((p.z >= self.center.z) as usize) << 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Node {
    Leaf(Occupancy),
    /// Index of the first of eight consecutive children.
    Branch(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisualHull {
    root: Cube,
    max_depth: u32,
    nodes: Vec<Node>,
}

/// Summed-area table over a mask for O(1) rectangle foreground counts.
struct MaskIntegral {
    width: usize,
    height: usize,
    sums: Vec<u32>,
}

impl MaskIntegral {
    fn new(mask: &Mask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let stride = w + 1;
        let mut sums = vec![0u32; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += mask.get(x, y) as u32;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self {
            width: w,
            height: h,
            sums,
        }
    }

    /// Foreground count over inclusive pixel rectangle.
    fn count(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u32 {
        let s = self.width + 1;
        self.sums[(y1 + 1) * s + x1 + 1] + self.sums[y0 * s + x0]
            - self.sums[y0 * s + x1 + 1]
            - self.sums[(y1 + 1) * s + x0]
    }
}

/// What one silhouette says about a cube.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Verdict {
    Background,
    Foreground,
    Mixed,
    Uninformative,
}

struct View<'a> {
    silhouette: &'a SilhouetteMask,
    integral: MaskIntegral,
}

impl View<'_> {
    fn classify(&self, cube: &Cube) -> Verdict {
        let cam = self.silhouette.camera();
        let (mut umin, mut vmin) = (f64::INFINITY, f64::INFINITY);
        let (mut umax, mut vmax) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for corner in cube.corners() {
            let Some((u, v, _)) = cam.project(&corner) else {
                return Verdict::Uninformative;
            };
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        let (w, h) = (self.integral.width as f64, self.integral.height as f64);
        // Pixel i covers [i - 0.5, i + 0.5).
        let x0 = (umin + 0.5).floor();
        let x1 = (umax + 0.5).floor();
        let y0 = (vmin + 0.5).floor();
        let y1 = (vmax + 0.5).floor();
        let cx0 = x0.max(0.0);
        let cy0 = y0.max(0.0);
        let cx1 = x1.min(w - 1.0);
        let cy1 = y1.min(h - 1.0);
        if cx0 > cx1 || cy0 > cy1 {
            return Verdict::Background;
        }
        let clipped = cx0 != x0 || cy0 != y0 || cx1 != x1 || cy1 != y1;
        let (cx0, cy0, cx1, cy1) = (cx0 as usize, cy0 as usize, cx1 as usize, cy1 as usize);
        let fg = self.integral.count(cx0, cy0, cx1, cy1);
        let area = ((cx1 - cx0 + 1) * (cy1 - cy0 + 1)) as u32;
        match fg {
            0 => Verdict::Background,
            n if n == area && !clipped => Verdict::Foreground,
            _ => Verdict::Mixed,
        }
    }

    /// Center-point test for undecided finest leaves. `None` = uninformative.
    fn point_foreground(&self, p: &Point3) -> Option<bool> {
        let cam = self.silhouette.camera();
        let (u, v, _) = cam.project(p)?;
        Some(match cam.pixel_at(u, v) {
            Some((x, y)) => self.silhouette.mask().get(x, y),
            None => false,
        })
    }
}

fn classify(views: &[View<'_>], cube: &Cube) -> Verdict {
    let mut all_foreground = true;
    for view in views {
        match view.classify(cube) {
            Verdict::Background => return Verdict::Background,
            Verdict::Mixed => all_foreground = false,
            Verdict::Foreground | Verdict::Uninformative => {}
        }
    }
    if all_foreground {
        Verdict::Foreground
    } else {
        Verdict::Mixed
    }
}

fn center_occupancy(views: &[View<'_>], cube: &Cube) -> Occupancy {
    let inside = views
        .iter()
        .all(|v| v.point_foreground(&cube.center).unwrap_or(true));
    if inside {
        Occupancy::Inside
    } else {
        Occupancy::Outside
    }
}

/// Carves the visual hull of `masks` inside `root`.
///
/// A cube is Outside as soon as one view sees its projected corner box only
/// over background (or off-screen), Inside when every informative view sees
/// it fully over foreground, and is split otherwise. Cubes still undecided at
/// `max_depth` take the state of their center point.
pub fn carve_hull(masks: &[SilhouetteMask], root: Cube, max_depth: u32) -> Result<VisualHull> {
    if masks.len() < 2 {
        return Err(Error::Config(format!(
            "visual hull needs at least 2 masks, got {}",
            masks.len()
        )));
    }
    if !(root.half > 0.0) || !root.center.iter().all(|c| c.is_finite()) {
        return Err(Error::Config(format!("degenerate root cube, half-extent {}", root.half)));
    }
    if !(1..=MAX_OCTREE_DEPTH).contains(&max_depth) {
        return Err(Error::Config(format!(
            "octree depth must lie in [1, {MAX_OCTREE_DEPTH}], got {max_depth}"
        )));
    }
    let views: Vec<View<'_>> = masks
        .iter()
        .map(|m| View {
            silhouette: m,
            integral: MaskIntegral::new(m.mask()),
        })
        .collect();

    let mut nodes = vec![Node::Leaf(Occupancy::Outside)];
    // (node index, cube) pairs awaiting classification at the current depth.
    let mut frontier = vec![(0usize, root)];
    for depth in 0..=max_depth {
        let states: Vec<Option<Occupancy>> = frontier
            .par_iter()
            .map(|(_, cube)| match classify(&views, cube) {
                Verdict::Background => Some(Occupancy::Outside),
                Verdict::Foreground => Some(Occupancy::Inside),
                _ if depth == max_depth => Some(center_occupancy(&views, cube)),
                _ => None,
            })
            .collect();
        let mut next = Vec::new();
        for ((index, cube), state) in frontier.into_iter().zip(states) {
            match state {
                Some(occ) => nodes[index] = Node::Leaf(occ),
                None => {
                    let first = nodes.len();
                    nodes[index] = Node::Branch(first as u32);
                    for octant in 0..8 {
                        nodes.push(Node::Leaf(Occupancy::Outside));
                        next.push((first + octant, cube.child(octant)));
                    }
                }
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    Ok(VisualHull {
        root,
        max_depth,
        nodes,
    })
}

const FILE_MAGIC: &[u8; 4] = b"HSOT";

impl VisualHull {
    /// A hull consisting of one leaf.
    pub fn uniform(root: Cube, max_depth: u32, state: Occupancy) -> Self {
        Self {
            root,
            max_depth,
            nodes: vec![Node::Leaf(state)],
        }
    }

    pub fn root(&self) -> Cube {
        self.root
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    /// Edge length of a cube at `max_depth`.
    pub fn finest_edge(&self) -> f64 {
        2.0 * self.root.half / f64::from(1u32 << self.max_depth)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, p: &Point3) -> bool {
        self.occupancy(p) == Occupancy::Inside
    }

    /// State of the leaf containing `p`; Outside beyond the root cube.
    pub fn occupancy(&self, p: &Point3) -> Occupancy {
        if !self.root.contains(p) {
            return Occupancy::Outside;
        }
        let mut cube = self.root;
        let mut index = 0usize;
        loop {
            match self.nodes[index] {
                Node::Leaf(state) => return state,
                Node::Branch(first) => {
                    let octant = cube.octant_of(p);
                    cube = cube.child(octant);
                    index = first as usize + octant;
                }
            }
        }
    }

    /// `true` when no leaf is Inside.
    pub fn is_empty(&self) -> bool {
        !self
            .nodes
            .iter()
            .any(|n| matches!(n, Node::Leaf(Occupancy::Inside)))
    }

    /// Every leaf as `(cube, depth, state)` in depth-first order.
    pub fn leaves(&self) -> Vec<(Cube, u32, Occupancy)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, self.root, 0u32)];
        while let Some((index, cube, depth)) = stack.pop() {
            match self.nodes[index] {
                Node::Leaf(state) => out.push((cube, depth, state)),
                Node::Branch(first) => {
                    for octant in (0..8).rev() {
                        stack.push((first as usize + octant, cube.child(octant), depth + 1));
                    }
                }
            }
        }
        out
    }

    /// Binary layout: magic, center (3 x f64 LE), half (f64), max depth (u32),
    /// node count (u64), then one byte per node in storage order:
    /// 0 = Outside leaf, 1 = Inside leaf, 2 = branch. Branch children are
    /// assigned consecutively in the order branches appear.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + self.nodes.len());
        out.extend_from_slice(FILE_MAGIC);
        for c in self.root.center.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&self.root.half.to_le_bytes());
        out.extend_from_slice(&self.max_depth.to_le_bytes());
        out.extend_from_slice(&(self.nodes.len() as u64).to_le_bytes());
        out.extend(self.nodes.iter().map(|n| match n {
            Node::Leaf(Occupancy::Outside) => 0u8,
            Node::Leaf(Occupancy::Inside) => 1,
            Node::Branch(_) => 2,
        }));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 4 + 24 + 8 + 4 + 8;
        if bytes.len() < HEADER {
            return Err(Error::parse(bytes.len(), "truncated octree header"));
        }
        if &bytes[..4] != FILE_MAGIC {
            return Err(Error::parse(0, "bad octree magic"));
        }
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let center = Point3::new(f64_at(4), f64_at(12), f64_at(20));
        let half = f64_at(28);
        let max_depth = u32::from_le_bytes(bytes[36..40].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[40..48].try_into().unwrap()) as usize;
        if !(1..=MAX_OCTREE_DEPTH).contains(&max_depth) || !(half > 0.0) {
            return Err(Error::parse(28, "invalid octree root parameters"));
        }
        let body = &bytes[HEADER..];
        if body.len() != count || count == 0 {
            return Err(Error::parse(bytes.len(), "octree node count mismatch"));
        }
        let mut nodes = Vec::with_capacity(count);
        let mut next_child = 1usize;
        for (i, &tag) in body.iter().enumerate() {
            nodes.push(match tag {
                0 => Node::Leaf(Occupancy::Outside),
                1 => Node::Leaf(Occupancy::Inside),
                2 => {
                    let first = next_child;
                    next_child += 8;
                    Node::Branch(first as u32)
                }
                _ => return Err(Error::parse(HEADER + i, format!("bad node tag {tag}"))),
            });
        }
        if next_child != count {
            return Err(Error::parse(bytes.len(), "octree branch structure is inconsistent"));
        }
        Ok(Self {
            root: Cube::new(center, half),
            max_depth,
            nodes,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
