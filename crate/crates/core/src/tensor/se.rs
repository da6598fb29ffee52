//! Squeeze-and-excitation channel gating.
//!
//! `gate = sigmoid(expand(silu(reduce(pool(x)))))`, `out = x * gate`.
//! The squeeze either averages the whole plane (one gate per channel) or a
//! `(2r+1)^2` box around each pixel (one gate per channel and pixel), which
//! keeps the block's receptive field finite.

use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::activation::{sigmoid, Activation};
use crate::tensor::conv::{conv2d, conv2d_backward};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Squeeze {
    Global,
    Local { radius: usize },
}

pub struct SeWeights<'a, T> {
    pub reduce_weight: &'a Tensor<T>,
    pub reduce_bias: &'a Tensor<T>,
    pub expand_weight: &'a Tensor<T>,
    pub expand_bias: &'a Tensor<T>,
}

pub struct SeGrads<'a, T> {
    pub reduce_weight: &'a mut Tensor<T>,
    pub reduce_bias: &'a mut Tensor<T>,
    pub expand_weight: &'a mut Tensor<T>,
    pub expand_bias: &'a mut Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct SeCache<T> {
    pooled: Tensor<T>,
    reduced: Tensor<T>,
    activated: Tensor<T>,
    gate: Tensor<T>,
}

impl<T: Scalar> SeCache<T> {
    pub fn gate(&self) -> &Tensor<T> {
        &self.gate
    }
}

/// Clipped box sum of radius `r` along rows then columns.
fn box_sum<T: Scalar>(src: &[T], h: usize, w: usize, r: usize, dst: &mut [T], tmp: &mut [T]) {
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            tmp[y * w + x] = row[lo..hi].iter().copied().sum();
        }
    }
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r + 1).min(h);
        for x in 0..w {
            let mut s = T::zero();
            for yy in lo..hi {
                s += tmp[yy * w + x];
            }
            dst[y * w + x] = s;
        }
    }
}

#[inline]
fn box_count(y: usize, x: usize, h: usize, w: usize, r: usize) -> usize {
    let ny = (y + r + 1).min(h) - y.saturating_sub(r);
    let nx = (x + r + 1).min(w) - x.saturating_sub(r);
    ny * nx
}

fn pool<T: Scalar>(input: &Tensor<T>, squeeze: Squeeze) -> Tensor<T> {
    let [n, c, h, w] = input.shape();
    match squeeze {
        Squeeze::Global => {
            let inv = T::one() / T::of((h * w) as f64);
            Tensor::from_fn([n, c, 1, 1], |[b, ch, _, _]| {
                input.plane_slice(b, ch).iter().copied().sum::<T>() * inv
            })
        }
        Squeeze::Local { radius } => {
            let mut out = Tensor::zeros(input.shape());
            let mut tmp = vec![T::zero(); h * w];
            for b in 0..n {
                for ch in 0..c {
                    let src = input.plane_slice(b, ch).to_vec();
                    let dst = out.plane_slice_mut(b, ch);
                    box_sum(&src, h, w, radius, dst, &mut tmp);
                    for y in 0..h {
                        for x in 0..w {
                            dst[y * w + x] /= T::of(box_count(y, x, h, w, radius) as f64);
                        }
                    }
                }
            }
            out
        }
    }
}

fn pool_backward<T: Scalar>(
    grad_pooled: &Tensor<T>,
    shape: [usize; 4],
    squeeze: Squeeze,
) -> Tensor<T> {
    let [n, c, h, w] = shape;
    let mut out = Tensor::zeros(shape);
    match squeeze {
        Squeeze::Global => {
            let inv = T::one() / T::of((h * w) as f64);
            for b in 0..n {
                for ch in 0..c {
                    let g = grad_pooled.at(b, ch, 0, 0) * inv;
                    out.plane_slice_mut(b, ch).fill(g);
                }
            }
        }
        Squeeze::Local { radius } => {
            let mut scaled = vec![T::zero(); h * w];
            let mut tmp = vec![T::zero(); h * w];
            for b in 0..n {
                for ch in 0..c {
                    let g = grad_pooled.plane_slice(b, ch);
                    for y in 0..h {
                        for x in 0..w {
                            scaled[y * w + x] =
                                g[y * w + x] / T::of(box_count(y, x, h, w, radius) as f64);
                        }
                    }
                    box_sum(&scaled, h, w, radius, out.plane_slice_mut(b, ch), &mut tmp);
                }
            }
        }
    }
    out
}

fn check<T: Scalar>(input: &Tensor<T>, wts: &SeWeights<'_, T>) -> Result<()> {
    let c = input.channels();
    let [cr, cin, _, _] = wts.reduce_weight.shape();
    if cin != c {
        return Err(Error::shape("se_gate", Axis::Channel, c, cin));
    }
    let [cout, cr2, _, _] = wts.expand_weight.shape();
    if cout != c || cr2 != cr {
        return Err(Error::shape("se_gate", Axis::Channel, c, cout));
    }
    Ok(())
}

pub fn se_gate<T: Scalar>(
    input: &Tensor<T>,
    wts: &SeWeights<'_, T>,
    squeeze: Squeeze,
) -> Result<(Tensor<T>, SeCache<T>)> {
    check(input, wts)?;
    let pooled = pool(input, squeeze);
    let reduced = conv2d(&pooled, wts.reduce_weight, Some(wts.reduce_bias))?;
    let activated = Activation::Silu.forward(&reduced);
    let expanded = conv2d(&activated, wts.expand_weight, Some(wts.expand_bias))?;
    let gate = expanded.map(sigmoid);
    let mut out = input.clone();
    apply_gate(&mut out, &gate, |v, g| *v *= g);
    Ok((
        out,
        SeCache {
            pooled,
            reduced,
            activated,
            gate,
        },
    ))
}

/// Visits every element with its (possibly broadcast) gate value.
fn apply_gate<T: Scalar>(t: &mut Tensor<T>, gate: &Tensor<T>, mut f: impl FnMut(&mut T, T)) {
    let [n, c, _, _] = t.shape();
    let broadcast = gate.plane() == 1 && t.plane() != 1;
    for b in 0..n {
        for ch in 0..c {
            if broadcast {
                let g = gate.at(b, ch, 0, 0);
                t.plane_slice_mut(b, ch).iter_mut().for_each(|v| f(v, g));
            } else {
                let gp = gate.plane_slice(b, ch);
                for (v, &g) in t.plane_slice_mut(b, ch).iter_mut().zip(gp) {
                    f(v, g);
                }
            }
        }
    }
}

pub fn se_gate_backward<T: Scalar>(
    input: &Tensor<T>,
    cache: &SeCache<T>,
    wts: &SeWeights<'_, T>,
    grads: SeGrads<'_, T>,
    grad_out: &Tensor<T>,
    squeeze: Squeeze,
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    input.expect_same_shape("se_gate_backward", grad_out)?;
    let [n, c, _, _] = input.shape();
    // dL/dgate
    let mut grad_gate = Tensor::zeros(cache.gate.shape());
    if cache.gate.plane() == 1 && input.plane() != 1 {
        for b in 0..n {
            for ch in 0..c {
                let s: T = grad_out
                    .plane_slice(b, ch)
                    .iter()
                    .zip(input.plane_slice(b, ch))
                    .map(|(&g, &x)| g * x)
                    .sum();
                grad_gate.set(b, ch, 0, 0, s);
            }
        }
    } else {
        for ((d, &g), &x) in grad_gate
            .data_mut()
            .iter_mut()
            .zip(grad_out.data())
            .zip(input.data())
        {
            *d = g * x;
        }
    }
    let mut grad_expanded = grad_gate;
    for (d, &s) in grad_expanded.data_mut().iter_mut().zip(cache.gate.data()) {
        *d *= s * (T::one() - s);
    }
    let grad_activated = conv2d_backward(
        &cache.activated,
        wts.expand_weight,
        &grad_expanded,
        grads.expand_weight,
        Some(grads.expand_bias),
        true,
    )?
    .expect("input grad requested");
    let grad_reduced = Activation::Silu.backward(&cache.reduced, &grad_activated)?;
    let grad_pooled = conv2d_backward(
        &cache.pooled,
        wts.reduce_weight,
        &grad_reduced,
        grads.reduce_weight,
        Some(grads.reduce_bias),
        need_input_grad,
    )?;
    let Some(grad_pooled) = grad_pooled else {
        return Ok(None);
    };
    let mut grad_in = pool_backward(&grad_pooled, input.shape(), squeeze);
    let mut direct = grad_out.clone();
    apply_gate(&mut direct, &cache.gate, |v, g| *v *= g);
    grad_in.add_assign(&direct)?;
    Ok(Some(grad_in))
}
