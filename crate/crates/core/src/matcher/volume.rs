//! Sparse top-k cost volume and the dense reference volume.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{dot, group_cost_into, FeatureMap};
use crate::geometry::BoundsMap;
use crate::memstat::{track, MemTracker, Strategy};
use super::refine::SENTINEL_COST;

/// Upper limit on candidates kept per pixel.
pub const MAX_K: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub disparity: u32,
    pub cost: f32,
}

/// Descending cost, then ascending disparity.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.cost
        .total_cmp(&a.cost)
        .then_with(|| a.disparity.cmp(&b.disparity))
}

/// Per-pixel top-k (disparity, cost) pairs, sorted by descending cost.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCostVolume {
    width: usize,
    height: usize,
    k: usize,
    counts: Vec<u8>,
    pairs: Vec<Candidate>,
}

impl SparseCostVolume {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn candidates(&self, x: usize, y: usize) -> &[Candidate] {
        let i = y * self.width + x;
        &self.pairs[i * self.k..i * self.k + self.counts[i] as usize]
    }

    /// Bytes held by the pair storage.
    pub fn storage_bytes(&self) -> usize {
        std::mem::size_of_val(self.pairs.as_slice())
    }
}

/// Inclusive disparity range searched at column `x`.
///
/// With a valid hull interval the range is `[floor(b_min), ceil(b_max)]`,
/// otherwise `[0, d_threshold]`; both are cut to `[0, x]`.
pub fn candidate_range(x: usize, interval: Option<(f32, f32)>, d_threshold: usize) -> Option<(usize, usize)> {
    let (lo, hi) = match interval {
        Some((b_min, b_max)) => (b_min.floor().max(0.0) as usize, b_max.ceil().max(0.0) as usize),
        None => (0, d_threshold),
    };
    let hi = hi.min(x);
    (lo <= hi).then_some((lo, hi))
}

/// Keeps the `k` best of `(disparity, cost)` items fed in ascending disparity.
pub fn select_top_k(items: impl IntoIterator<Item = (u32, f32)>, k: usize, out: &mut Vec<Candidate>) {
    out.clear();
    for (disparity, cost) in items {
        let cand = Candidate { disparity, cost };
        if out.len() == k {
            // Later disparities lose ties, so only a strictly better cost enters.
            if cost.total_cmp(&out[k - 1].cost) != Ordering::Greater {
                continue;
            }
            out.pop();
        }
        let pos = out.partition_point(|c| rank(c, &cand) == Ordering::Less);
        out.insert(pos, cand);
    }
}

fn check_inputs(f: &FeatureMap, g: &FeatureMap, bounds: Option<&BoundsMap>) -> Result<()> {
    if !f.same_shape(g) {
        return Err(Error::Input("left and right feature maps differ in shape".into()));
    }
    if let Some(b) = bounds {
        if b.width() != f.width() || b.height() != f.height() {
            return Err(Error::Input(format!(
                "bounds are {}x{} but features are {}x{}",
                b.width(),
                b.height(),
                f.width(),
                f.height()
            )));
        }
    }
    Ok(())
}

/// Top-k disparities per pixel over the (optionally hull-restricted) candidate set.
/// Disparities outside the set are never evaluated.
pub fn knn_volume(
    f: &FeatureMap,
    g: &FeatureMap,
    bounds: Option<&BoundsMap>,
    k: usize,
    d_threshold: usize,
) -> Result<SparseCostVolume> {
    knn_volume_tracked(f, g, bounds, k, d_threshold, None).map(|(v, _)| v)
}

pub(crate) fn knn_volume_tracked<'t>(
    f: &FeatureMap,
    g: &FeatureMap,
    bounds: Option<&BoundsMap>,
    k: usize,
    d_threshold: usize,
    tracker: Option<&'t MemTracker>,
) -> Result<(SparseCostVolume, Option<crate::memstat::Allocation<'t>>)> {
    if !(1..=MAX_K).contains(&k) {
        return Err(Error::Config(format!("k must lie in [1, {MAX_K}], got {k}")));
    }
    check_inputs(f, g, bounds)?;
    let (w, h) = (f.width(), f.height());
    let empty = Candidate {
        disparity: 0,
        cost: 0.0,
    };
    let mut pairs = vec![empty; w * h * k];
    let guard = track(tracker, Strategy::SparseKnn, &pairs);
    let mut counts = vec![0u8; w * h];
    pairs
        .par_chunks_mut(w * k)
        .zip(counts.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, row_counts))| {
            let mut best = Vec::with_capacity(k + 1);
            for x in 0..w {
                let interval = bounds.and_then(|b| b.get(x, y));
                let Some((lo, hi)) = candidate_range(x, interval, d_threshold) else {
                    continue;
                };
                let fp = f.pixel(x, y);
                select_top_k(
                    (lo..=hi).map(|d| (d as u32, dot(fp, g.pixel(x - d, y)))),
                    k,
                    &mut best,
                );
                row[x * k..x * k + best.len()].copy_from_slice(&best);
                row_counts[x] = best.len() as u8;
            }
        });
    Ok((
        SparseCostVolume {
            width: w,
            height: h,
            k,
            counts,
            pairs,
        },
        guard,
    ))
}

/// Full `w x h x w` volume of costs; entries with `d > x` are NaN.
/// Used as the memory baseline.
pub fn dense_volume(f: &FeatureMap, g: &FeatureMap, tracker: Option<&MemTracker>) -> Result<Vec<f32>> {
    check_inputs(f, g, None)?;
    let (w, h) = (f.width(), f.height());
    let mut volume = vec![f32::NAN; w * h * w];
    let _guard = track(tracker, Strategy::Dense, &volume);
    volume.par_chunks_mut(w * w).enumerate().for_each(|(y, plane)| {
        for x in 0..w {
            let fp = f.pixel(x, y);
            for d in 0..=x {
                plane[x * w + d] = dot(fp, g.pixel(x - d, y));
            }
        }
    });
    Ok(volume)
}

/// Group-wise costs for every `(x, y, d)`, laid out `[y][x][d][group]`;
/// entries with `d > x` hold the refinement sentinel.
pub fn dense_group_volume(f: &FeatureMap, g: &FeatureMap) -> Result<Vec<f32>> {
    check_inputs(f, g, None)?;
    let (w, h, groups) = (f.width(), f.height(), f.groups());
    let mut volume = vec![SENTINEL_COST; w * h * w * groups];
    volume.par_chunks_mut(w * w * groups).enumerate().for_each(|(y, plane)| {
        for x in 0..w {
            for d in 0..=x {
                let at = (x * w + d) * groups;
                group_cost_into(f, g, x, y, d, &mut plane[at..at + groups]);
            }
        }
    });
    Ok(volume)
}

#[cfg(test)]
impl SparseCostVolume {
    pub(crate) fn override_pixel(&mut self, x: usize, y: usize, cands: &[(u32, f32)]) {
        let i = y * self.width + x;
        assert!(cands.len() <= self.k);
        for (slot, &(disparity, cost)) in self.pairs[i * self.k..].iter_mut().zip(cands) {
            *slot = Candidate { disparity, cost };
        }
        self.counts[i] = cands.len() as u8;
    }
}
