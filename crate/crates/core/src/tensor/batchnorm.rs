//! Per-channel batch normalisation with running statistics.

use crate::error::{Axis, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{lane_dot, lane_sum, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update(&mut self, batch: &BatchStats<T>, momentum: T) {
        let keep = T::one() - momentum;
        for c in 0..self.mean.len() {
            self.mean[c] = keep * self.mean[c] + momentum * batch.mean[c];
            self.var[c] = keep * self.var[c] + momentum * batch.unbiased_var[c];
        }
    }

    pub fn cast<U: Scalar>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.iter().map(|&x| U::of(x.to_f64_lossy())).collect(),
            var: self.var.iter().map(|&x| U::of(x.to_f64_lossy())).collect(),
        }
    }
}

/// Statistics of one training batch, kept so the caller can fold them into
/// the running buffers once the step is accepted.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub unbiased_var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

#[derive(Debug, Clone, Copy)]
pub enum BnMode {
    Batch,
    Running,
}

/// Returns the output, the backward cache and (in batch mode) the batch statistics.
pub fn batchnorm2d<T: Scalar>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    running: &RunningStats<T>,
    mode: BnMode,
    eps: T,
) -> Result<(Tensor<T>, BatchNormCache<T>, Option<BatchStats<T>>)> {
    let [n, c, _, _] = input.shape();
    for (t, expected) in [(scale.len(), c), (shift.len(), c), (running.channels(), c)] {
        if t != expected {
            return Err(Error::shape("batchnorm2d", Axis::Channel, expected, t));
        }
    }
    let hw = input.plane();
    let count = n * hw;
    let mut xhat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    let mut inv_std = vec![T::zero(); c];
    let mut stats = None;
    let (means, vars): (Vec<T>, Vec<T>) = match mode {
        BnMode::Running => (running.mean.clone(), running.var.clone()),
        BnMode::Batch => {
            if count == 0 {
                return Err(Error::InvalidArgument("batchnorm2d on empty batch".into()));
            }
            let mut means = vec![T::zero(); c];
            let mut vars = vec![T::zero(); c];
            let mut unbiased = vec![T::zero(); c];
            let inv_count = T::one() / T::of(count as f64);
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s += lane_sum(input.plane_slice(b, ch));
                }
                let m = s * inv_count;
                let mut ss = T::zero();
                let mut dev = vec![T::zero(); hw];
                for b in 0..n {
                    for (d, &x) in dev.iter_mut().zip(input.plane_slice(b, ch)) {
                        *d = x - m;
                    }
                    ss += lane_dot(&dev, &dev);
                }
                means[ch] = m;
                vars[ch] = ss * inv_count;
                unbiased[ch] = if count > 1 {
                    ss / T::of((count - 1) as f64)
                } else {
                    vars[ch]
                };
            }
            stats = Some(BatchStats {
                mean: means.clone(),
                unbiased_var: unbiased,
            });
            (means, vars)
        }
    };
    for ch in 0..c {
        inv_std[ch] = T::one() / (vars[ch] + eps).sqrt();
        let (g, beta, m, is) = (scale.data()[ch], shift.data()[ch], means[ch], inv_std[ch]);
        for b in 0..n {
            let src = input.plane_slice(b, ch);
            let xh = xhat.plane_slice_mut(b, ch);
            let dst = out.plane_slice_mut(b, ch);
            for ((d, o), &x) in xh.iter_mut().zip(dst.iter_mut()).zip(src) {
                *d = (x - m) * is;
                *o = g * *d + beta;
            }
        }
    }
    let cache = BatchNormCache {
        xhat,
        inv_std,
        batch_stats: matches!(mode, BnMode::Batch),
    };
    Ok((out, cache, stats))
}

pub fn batchnorm2d_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_scale: &mut Tensor<T>,
    grad_shift: &mut Tensor<T>,
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    cache
        .xhat
        .expect_same_shape("batchnorm2d_backward", grad_out)?;
    let [n, c, _, _] = grad_out.shape();
    let count = T::of((n * grad_out.plane()) as f64);
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(grad_out.shape()));
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for b in 0..n {
            let gy = grad_out.plane_slice(b, ch);
            sum_dy += lane_sum(gy);
            sum_dy_xhat += lane_dot(gy, cache.xhat.plane_slice(b, ch));
        }
        grad_scale.data_mut()[ch] += sum_dy_xhat;
        grad_shift.data_mut()[ch] += sum_dy;
        let Some(gi) = grad_in.as_mut() else { continue };
        let g = scale.data()[ch];
        let is = cache.inv_std[ch];
        for b in 0..n {
            let gy = grad_out.plane_slice(b, ch);
            let xh = cache.xhat.plane_slice(b, ch);
            let dst = gi.plane_slice_mut(b, ch);
            if cache.batch_stats {
                // dx = g*is/N * (N*dy - sum(dy) - xhat*sum(dy*xhat))
                let k = g * is / count;
                for ((d, &gyi), &x) in dst.iter_mut().zip(gy).zip(xh) {
                    *d = k * (count * gyi - sum_dy - x * sum_dy_xhat);
                }
            } else {
                let k = g * is;
                for (d, &gyi) in dst.iter_mut().zip(gy) {
                    *d = k * gyi;
                }
            }
        }
    }
    Ok(grad_in)
}
