//! Uncertainty composition, z-scores and coverage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aleatoric, epistemic and total standard deviation of one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyTriple {
    pub sigma_data: f64,
    pub sigma_model: f64,
    pub sigma_total: f64,
}

impl UncertaintyTriple {
    pub fn new(sigma_data: f64, sigma_model: f64) -> Self {
        Self {
            sigma_data,
            sigma_model,
            sigma_total: total_std(sigma_data, sigma_model),
        }
    }
}

/// `sqrt(sigma_data^2 + sigma_model^2)`.
#[inline]
pub fn total_std(sigma_data: f64, sigma_model: f64) -> f64 {
    sigma_data.hypot(sigma_model)
}

/// `(y - mu) / sigma_total`; NaN wherever any input is NaN.
pub fn z_scores(pred: &[f64], obs: &[f64], sigma_total: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != obs.len() || pred.len() != sigma_total.len() {
        return Err(Error::InvalidArgument("z_scores: length mismatch".into()));
    }
    let mut out = Vec::with_capacity(pred.len());
    for ((&y, &mu), &s) in pred.iter().zip(obs).zip(sigma_total) {
        if y.is_nan() || mu.is_nan() || s.is_nan() {
            out.push(f64::NAN);
            continue;
        }
        if !(s > 0.0) {
            return Err(Error::NonPositiveVariance(s));
        }
        out.push((y - mu) / s);
    }
    Ok(out)
}

/// Fraction of finite `|z|` strictly below each threshold. NaN entries are skipped.
pub fn coverage(z: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let finite: Vec<f64> = z.iter().copied().filter(|v| !v.is_nan()).collect();
    thresholds
        .iter()
        .map(|&t| {
            if finite.is_empty() {
                return f64::NAN;
            }
            finite.iter().filter(|v| v.abs() < t).count() as f64 / finite.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCoverage {
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub coverage_1sd: f64,
    pub coverage_2sd: f64,
}

/// Coverage grouped by observed value into half-open bins `[edges[i], edges[i+1])`.
pub fn coverage_by_bin(z: &[f64], obs: &[f64], edges: &[f64]) -> Result<Vec<BinCoverage>> {
    if z.len() != obs.len() {
        return Err(Error::InvalidArgument(
            "coverage_by_bin: length mismatch".into(),
        ));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "bin edges must be strictly increasing".into(),
        ));
    }
    Ok(edges
        .windows(2)
        .map(|e| {
            let zs: Vec<f64> = z
                .iter()
                .zip(obs)
                .filter(|(zv, o)| !zv.is_nan() && **o >= e[0] && **o < e[1])
                .map(|(zv, _)| *zv)
                .collect();
            let c = coverage(&zs, &[1.0, 2.0]);
            BinCoverage {
                lower: e[0],
                upper: e[1],
                n: zs.len(),
                coverage_1sd: c[0],
                coverage_2sd: c[1],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pythagorean() {
        assert_eq!(total_std(3.0, 4.0), 5.0);
        assert_eq!(total_std(2.5, 0.0), 2.5);
        let t = UncertaintyTriple::new(0.3, 0.4);
        assert!((t.sigma_total - 0.5).abs() < 1e-15);
    }

    #[test]
    fn z_fixtures() {
        let z = z_scores(&[10.0, 4.0, f64::NAN], &[9.0, 4.0, 1.0], &[0.5, 1.0, 1.0]).unwrap();
        assert_eq!(z[0], 2.0);
        assert_eq!(z[1], 0.0);
        assert!(z[2].is_nan());
        assert!(z_scores(&[1.0], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn coverage_counts() {
        assert_eq!(coverage(&[0.0; 5], &[1.0, 2.0]), vec![1.0, 1.0]);
        assert_eq!(
            coverage(&[0.5, 1.5, 2.5, -0.2], &[1.0, 2.0]),
            vec![0.5, 0.75]
        );
        assert_eq!(coverage(&[0.5, f64::NAN], &[1.0]), vec![1.0]);
    }

    #[test]
    fn bins_partition_pairs() {
        let z = [0.5, 1.5, 0.1, 3.0];
        let obs = [6.5, 6.7, 8.0, 11.0];
        let bins = coverage_by_bin(&z, &obs, &[6.0, 7.0, 9.0, 12.0]).unwrap();
        assert_eq!(bins.iter().map(|b| b.n).collect::<Vec<_>>(), vec![2, 1, 1]);
        assert_eq!(bins[0].coverage_1sd, 0.5);
        assert_eq!(bins[2].coverage_2sd, 0.0);
    }
}
