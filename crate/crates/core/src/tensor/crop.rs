//! Symmetric spatial border removal.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn cropped_shape(shape: [usize; 4], margin: usize) -> Result<[usize; 4]> {
    let [n, c, h, w] = shape;
    if 2 * margin >= h || 2 * margin >= w {
        return Err(Error::InvalidArgument(format!(
            "crop margin {margin} too large for {h}x{w} plane"
        )));
    }
    Ok([n, c, h - 2 * margin, w - 2 * margin])
}

pub fn crop_border<T: Scalar>(input: &Tensor<T>, margin: usize) -> Result<Tensor<T>> {
    let shape = cropped_shape(input.shape(), margin)?;
    let [n, c, oh, ow] = shape;
    let w = input.width();
    let mut out = Tensor::zeros(shape);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane_slice(b, ch);
            let dst = out.plane_slice_mut(b, ch);
            for y in 0..oh {
                let s = (y + margin) * w + margin;
                dst[y * ow..(y + 1) * ow].copy_from_slice(&src[s..s + ow]);
            }
        }
    }
    Ok(out)
}

/// Scatters the cropped gradient into a zero border of the original extent.
pub fn crop_border_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: [usize; 4],
    margin: usize,
) -> Result<Tensor<T>> {
    let expected = cropped_shape(input_shape, margin)?;
    if expected != grad_out.shape() {
        return Err(Error::InvalidArgument(format!(
            "crop backward: gradient shape {:?} does not match {expected:?}",
            grad_out.shape()
        )));
    }
    let [n, c, oh, ow] = expected;
    let w = input_shape[3];
    let mut out = Tensor::zeros(input_shape);
    for b in 0..n {
        for ch in 0..c {
            let src = grad_out.plane_slice(b, ch);
            let dst = out.plane_slice_mut(b, ch);
            for y in 0..oh {
                let d = (y + margin) * w + margin;
                dst[d..d + ow].copy_from_slice(&src[y * ow..(y + 1) * ow]);
            }
        }
    }
    Ok(out)
}
