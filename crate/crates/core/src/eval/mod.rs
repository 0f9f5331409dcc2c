//! Disparity metrics, mask perturbation and the hull ablation harness.

mod ablation;
mod metrics;
mod morph;

pub use ablation::{ablation_run, evaluate_modes, median, write_ablation_csv, AblationRow};
pub use metrics::{compute_metrics, MetricReport, BAD_THRESHOLD, D1_ABSOLUTE, D1_RELATIVE};
pub use morph::{perturb_mask, perturb_masks, MorphOp};
