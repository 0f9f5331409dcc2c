use serde::{Deserialize, Serialize};

use crate::disparity::DisparityMap;
use crate::error::{Error, Result};
use crate::image::Mask;

/// Outlier threshold for the >4px rate.
pub const BAD_THRESHOLD: f32 = 4.0;
/// D1 outlier: error above 3 px and above 5% of the true disparity.
pub const D1_ABSOLUTE: f32 = 3.0;
pub const D1_RELATIVE: f32 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub epe_all: f64,
    /// Zero when no non-occluded pixel is valid.
    pub epe_noc: f64,
    /// Percent of pixels with error above 4 px.
    pub gt4_all: f64,
    /// Percent of D1 outliers.
    pub d1_all: f64,
    pub pixels_all: usize,
    pub pixels_noc: usize,
}

/// Metrics over pixels with valid ground truth (and inside `valid`, if given).
/// A pixel the prediction leaves invalid is scored as a prediction of 0.
pub fn compute_metrics(
    pred: &DisparityMap,
    gt: &DisparityMap,
    occlusion: Option<&Mask>,
    valid: Option<&Mask>,
) -> Result<MetricReport> {
    let (w, h) = (gt.width(), gt.height());
    let same = |mw: usize, mh: usize| mw == w && mh == h;
    if !same(pred.width(), pred.height())
        || occlusion.is_some_and(|m| !same(m.width(), m.height()))
        || valid.is_some_and(|m| !same(m.width(), m.height()))
    {
        return Err(Error::Input("metric inputs differ in shape".into()));
    }
    let mut sum_all = 0.0f64;
    let mut sum_noc = 0.0f64;
    let (mut n_all, mut n_noc, mut bad, mut d1) = (0usize, 0usize, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let Some(truth) = gt.get(x, y) else { continue };
            if valid.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            let estimate = pred.get(x, y).unwrap_or(0.0);
            let err = (estimate - truth).abs();
            n_all += 1;
            sum_all += f64::from(err);
            bad += (err > BAD_THRESHOLD) as usize;
            d1 += (err > D1_ABSOLUTE && err > D1_RELATIVE * truth.abs()) as usize;
            if !occlusion.is_some_and(|m| m.get(x, y)) {
                n_noc += 1;
                sum_noc += f64::from(err);
            }
        }
    }
    if n_all == 0 {
        return Err(Error::EmptyReport);
    }
    let pct = |n: usize| 100.0 * n as f64 / n_all as f64;
    Ok(MetricReport {
        epe_all: sum_all / n_all as f64,
        epe_noc: if n_noc > 0 { sum_noc / n_noc as f64 } else { 0.0 },
        gt4_all: pct(bad),
        d1_all: pct(d1),
        pixels_all: n_all,
        pixels_noc: n_noc,
    })
}
