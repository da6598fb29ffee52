//! Heteroscedastic Gaussian negative log-likelihood, masked to observed pixels.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::metrics::pairwise_sum;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Predicted mean `y` and aleatoric variance `sigma2` for one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPrediction {
    pub y: f64,
    pub sigma2: f64,
}

/// An observed target value; invalid unless finite and strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedTarget {
    pub mu: f64,
}

impl MaskedTarget {
    #[inline]
    pub fn is_valid(self) -> bool {
        is_valid_target(self.mu)
    }
}

#[inline]
pub fn is_valid_target(mu: f64) -> bool {
    mu.is_finite() && mu > 0.0
}

/// `1/2 log(2 pi sigma2) + (y - mu)^2 / (2 sigma2)`.
pub fn gaussian_nll(pred: PixelPrediction, mu: f64) -> Result<f64> {
    if !(pred.sigma2 > 0.0) {
        return Err(Error::NonPositiveVariance(pred.sigma2));
    }
    let r = pred.y - mu;
    Ok(0.5 * (2.0 * PI * pred.sigma2).ln() + r * r / (2.0 * pred.sigma2))
}

#[derive(Debug, Clone)]
pub struct MaskedLoss<T> {
    pub value: f64,
    pub valid: usize,
    /// Gradient with respect to the prediction tensor; zero at invalid pixels.
    pub grad: Tensor<T>,
}

/// Mean NLL over valid target pixels.
///
/// `pred` is `B x 2 x H x W` (mean, variance); `target` is `B x 1 x H x W`
/// with NaN or non-positive values marking missing observations.
pub fn masked_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<MaskedLoss<T>> {
    let [b, c, h, w] = pred.shape();
    if c != 2 {
        return Err(Error::shape(
            "masked_loss",
            crate::error::Axis::Channel,
            2,
            c,
        ));
    }
    let expected = Tensor::<T>::zeros([b, 1, h, w]);
    expected.expect_same_shape("masked_loss", target)?;
    let hw = h * w;
    let mut terms = Vec::new();
    let mut grad = Tensor::zeros(pred.shape());
    let mut valid_idx = Vec::new();
    for bi in 0..b {
        let tgt = target.plane_slice(bi, 0);
        let mean = pred.plane_slice(bi, 0);
        let var = pred.plane_slice(bi, 1);
        for i in 0..hw {
            let mu = tgt[i].to_f64_lossy();
            if !is_valid_target(mu) {
                continue;
            }
            let p = PixelPrediction {
                y: mean[i].to_f64_lossy(),
                sigma2: var[i].to_f64_lossy(),
            };
            terms.push(gaussian_nll(p, mu)?);
            valid_idx.push((bi, i, p, mu));
        }
    }
    if terms.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let n = terms.len() as f64;
    for (bi, i, p, mu) in valid_idx {
        let r = p.y - mu;
        let dy = r / p.sigma2 / n;
        let ds = (0.5 / p.sigma2 - r * r / (2.0 * p.sigma2 * p.sigma2)) / n;
        grad.plane_slice_mut(bi, 0)[i] = T::of(dy);
        grad.plane_slice_mut(bi, 1)[i] = T::of(ds);
    }
    Ok(MaskedLoss {
        value: pairwise_sum(&terms) / n,
        valid: terms.len(),
        grad,
    })
}
