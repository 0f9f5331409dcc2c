use serde::{Deserialize, Serialize};

use crate::image::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphOp {
    Dilate,
    Erode,
}

/// Binary morphology with a disc of `radius` pixels. Erosion ignores
/// the part of the disc that falls outside the image.
pub fn perturb_mask(mask: &Mask, op: MorphOp, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    // Row prefix counts of foreground (dilate) or background (erode).
    let target = op == MorphOp::Erode;
    let stride = w + 1;
    let mut prefix = vec![0u32; stride * h];
    for y in 0..h {
        for x in 0..w {
            prefix[y * stride + x + 1] = prefix[y * stride + x] + ((mask.get(x, y) != target) as u32);
        }
    }
    let r = radius as isize;
    let spans: Vec<(isize, isize)> = (-r..=r)
        .map(|dy| (dy, (((r * r - dy * dy) as f64).sqrt()).floor() as isize))
        .collect();
    Mask::from_fn(w, h, |x, y| {
        let hit = spans.iter().any(|&(dy, hw)| {
            let yy = y as isize + dy;
            if yy < 0 || yy >= h as isize {
                return false;
            }
            let x0 = (x as isize - hw).max(0) as usize;
            let x1 = (x as isize + hw).min(w as isize - 1) as usize;
            let row = yy as usize * stride;
            prefix[row + x1 + 1] > prefix[row + x0]
        });
        match op {
            MorphOp::Dilate => hit,
            MorphOp::Erode => !hit,
        }
    })
}

pub fn perturb_masks(masks: &[Mask], op: MorphOp, radius: usize) -> Vec<Mask> {
    masks.iter().map(|m| perturb_mask(m, op, radius)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> Mask {
        Mask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            dx * dx + dy * dy <= r * r
        })
    }

    #[test]
    fn zero_radius_is_identity() {
        let m = disc(40, 30, 20.0, 15.0, 6.0);
        assert_eq!(perturb_mask(&m, MorphOp::Dilate, 0), m);
        assert_eq!(perturb_mask(&m, MorphOp::Erode, 0), m);
    }

    #[test]
    fn dilation_is_superset_and_erosion_subset() {
        let m = disc(40, 30, 20.0, 15.0, 6.0);
        let d = perturb_mask(&m, MorphOp::Dilate, 3);
        let e = perturb_mask(&m, MorphOp::Erode, 3);
        assert!(m.is_subset_of(&d));
        assert!(e.is_subset_of(&m));
        assert!(d.count() > m.count() && e.count() < m.count());
    }

    #[test]
    fn single_pixel_dilates_to_disc() {
        let mut px = vec![false; 15 * 15];
        px[7 * 15 + 7] = true;
        let m = Mask::new(15, 15, px).unwrap();
        let d = perturb_mask(&m, MorphOp::Dilate, 3);
        assert_eq!(d, disc(15, 15, 7.0, 7.0, 3.0));
    }

    #[test]
    fn large_erosion_empties_object() {
        let m = disc(40, 40, 20.0, 20.0, 4.5);
        assert_eq!(perturb_mask(&m, MorphOp::Erode, 5).count(), 0);
    }
}
