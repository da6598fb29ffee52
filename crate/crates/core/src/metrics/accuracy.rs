use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::pairwise_sum;

/// Which quantity `r2` reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R2Kind {
    /// `1 - SS_res / SS_tot` about the observed mean.
    #[default]
    Determination,
    /// Squared Pearson correlation between predictions and observations.
    SquaredPearson,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    /// `None` when the observations are constant.
    pub r2: Option<f64>,
    pub rmse: f64,
    /// `mean(pred - obs)`; negative means underprediction.
    pub bias: f64,
    pub n: usize,
}

/// Flat validation summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub r2: Option<f64>,
    pub rmse: f64,
    pub bias: f64,
    pub n: usize,
    pub coverage_1sd: f64,
    pub coverage_2sd: f64,
}

pub fn accuracy(pred: &[f64], obs: &[f64], kind: R2Kind) -> Result<Accuracy> {
    if pred.len() != obs.len() {
        return Err(Error::InvalidArgument(format!(
            "accuracy: {} predictions vs {} observations",
            pred.len(),
            obs.len()
        )));
    }
    let n = pred.len();
    if n == 0 {
        return Err(Error::InvalidArgument("accuracy: no pairs".into()));
    }
    let nf = n as f64;
    let diffs: Vec<f64> = pred.iter().zip(obs).map(|(p, o)| p - o).collect();
    let sq: Vec<f64> = diffs.iter().map(|d| d * d).collect();
    let bias = pairwise_sum(&diffs) / nf;
    let ss_res = pairwise_sum(&sq);
    let rmse = (ss_res / nf).sqrt();
    let r2 = if n < 2 {
        None
    } else {
        match kind {
            R2Kind::Determination => {
                let mo = pairwise_sum(obs) / nf;
                let dev: Vec<f64> = obs.iter().map(|o| (o - mo) * (o - mo)).collect();
                let ss_tot = pairwise_sum(&dev);
                (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
            }
            R2Kind::SquaredPearson => pearson(pred, obs).map(|r| r * r),
        }
    };
    Ok(Accuracy { r2, rmse, bias, n })
}

/// Pearson correlation; `None` if either series is constant or shorter than 2.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if a.len() != b.len() || a.len() < 2 || constant(a) || constant(b) {
        return None;
    }
    let n = a.len() as f64;
    let ma = pairwise_sum(a) / n;
    let mb = pairwise_sum(b) / n;
    let cross: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let va: Vec<f64> = a.iter().map(|x| (x - ma) * (x - ma)).collect();
    let vb: Vec<f64> = b.iter().map(|y| (y - mb) * (y - mb)).collect();
    let (sa, sb) = (pairwise_sum(&va), pairwise_sum(&vb));
    (sa > 0.0 && sb > 0.0).then(|| pairwise_sum(&cross) / (sa * sb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let obs = [6.0, 7.5, 9.0, 11.0];
        let a = accuracy(&obs, &obs, R2Kind::Determination).unwrap();
        assert_eq!(a.r2, Some(1.0));
        assert_eq!(a.rmse, 0.0);
        assert_eq!(a.bias, 0.0);
    }

    #[test]
    fn constant_offset() {
        let obs = [6.0, 7.5, 9.0, 11.0];
        let pred: Vec<f64> = obs.iter().map(|o| o + 0.5).collect();
        let a = accuracy(&pred, &obs, R2Kind::Determination).unwrap();
        assert!((a.bias - 0.5).abs() < 1e-12);
        assert!((a.rmse - 0.5).abs() < 1e-12);
        // An offset does not change the correlation.
        let p = accuracy(&pred, &obs, R2Kind::SquaredPearson).unwrap();
        assert!((p.r2.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_observations_have_no_r2() {
        let a = accuracy(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0], R2Kind::Determination).unwrap();
        assert_eq!(a.r2, None);
    }

    #[test]
    fn mean_predictor_scores_zero() {
        let obs = [1.0, 2.0, 3.0, 6.0];
        let pred = [3.0; 4];
        let a = accuracy(&pred, &obs, R2Kind::Determination).unwrap();
        assert!(a.r2.unwrap().abs() < 1e-12);
    }

    #[test]
    fn report_json_keys() {
        let r = EvalReport {
            r2: None,
            rmse: 0.5,
            bias: -0.02,
            n: 3,
            coverage_1sd: 0.7,
            coverage_2sd: 0.95,
        };
        let v = serde_json::to_value(r).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            ["bias", "coverage_1sd", "coverage_2sd", "n", "r2", "rmse"]
        );
        assert!(v["r2"].is_null());
    }
}
