//! Loss, accuracy, calibration and spatial-correlation formulas.

pub mod accuracy;
pub mod calibration;
pub mod moran;
pub mod nll;

pub use accuracy::{accuracy, pearson, Accuracy, EvalReport, R2Kind};
pub use calibration::{
    coverage, coverage_by_bin, total_std, z_scores, BinCoverage, UncertaintyTriple,
};
pub use moran::{morans_i, Grid, Weights};
pub use nll::{
    gaussian_nll, is_valid_target, masked_loss, MaskedLoss, MaskedTarget, PixelPrediction,
};

/// Pairwise (cascade) summation in a fixed order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if v.len() <= LEAF {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

pub fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| pairwise_sum(v) / v.len() as f64)
}
