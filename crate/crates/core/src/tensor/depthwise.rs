//! Per-channel ("depthwise") stride-1 same convolution.

use crate::error::{Axis, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{lane_dot, Tensor};

fn check<T: Scalar>(op: &'static str, input: &Tensor<T>, weight: &Tensor<T>) -> Result<usize> {
    let [c, one, kh, kw] = weight.shape();
    if input.channels() != c {
        return Err(Error::shape(op, Axis::Channel, c, input.channels()));
    }
    if one != 1 {
        return Err(Error::shape(op, Axis::Channel, 1, one));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "{op}: kernel {kh}x{kw} must be odd and square"
        )));
    }
    Ok(kh)
}

/// Valid output range along one axis for kernel tap offset `d`.
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// `weight` is `[c, 1, k, k]`.
pub fn depthwise_conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    let k = check("depthwise_conv2d", input, weight)?;
    let [n, c, h, w] = input.shape();
    let p = (k / 2) as isize;
    let mut out = Tensor::zeros(input.shape());
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane_slice(b, ch);
            let kern = &weight.data()[ch * k * k..(ch + 1) * k * k];
            let dst = out.plane_slice_mut(b, ch);
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = span(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = span(w, dx);
                    let wv = kern[ky * k + kx];
                    let sx0 = (x0 as isize + dx) as usize;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let srow = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        let drow = &mut dst[y * w + x0..y * w + x1];
                        for (d, &s) in drow.iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_weight: &mut Tensor<T>,
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    let k = check("depthwise_conv2d_backward", input, weight)?;
    input.expect_same_shape("depthwise_conv2d_backward", grad_out)?;
    let [n, c, h, w] = input.shape();
    let p = (k / 2) as isize;
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(input.shape()));
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane_slice(b, ch);
            let gy = grad_out.plane_slice(b, ch);
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = span(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = span(w, dx);
                    let sx0 = (x0 as isize + dx) as usize;
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let srow = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        acc += lane_dot(&gy[y * w + x0..y * w + x1], srow);
                    }
                    grad_weight.data_mut()[(ch * k + ky) * k + kx] += acc;
                }
            }
            if let Some(gi) = grad_in.as_mut() {
                let kern = &weight.data()[ch * k * k..(ch + 1) * k * k];
                let dst = gi.plane_slice_mut(b, ch);
                for ky in 0..k {
                    let dy = ky as isize - p;
                    let (y0, y1) = span(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - p;
                        let (x0, x1) = span(w, dx);
                        let wv = kern[ky * k + kx];
                        let sx0 = (x0 as isize + dx) as usize;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let drow = &mut dst[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            for (d, &g) in drow.iter_mut().zip(&gy[y * w + x0..y * w + x1]) {
                                *d += wv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad_in)
}
