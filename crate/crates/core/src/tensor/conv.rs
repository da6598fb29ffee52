//! Stride-1 "same" convolution with odd square kernels, lowered to GEMM via im2col.

use crate::error::{Axis, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Checks a `[cout, cin, k, k]` weight against the input and returns `k`.
fn kernel_of<T: Scalar>(op: &'static str, input: &Tensor<T>, weight: &Tensor<T>) -> Result<usize> {
    let [_, cin, kh, kw] = weight.shape();
    if input.channels() != cin {
        return Err(Error::shape(op, Axis::Channel, cin, input.channels()));
    }
    if kh != kw {
        return Err(Error::shape(op, Axis::Width, kh, kw));
    }
    if kh % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "{op}: kernel extent {kh} is not odd"
        )));
    }
    Ok(kh)
}

fn check_bias<T: Scalar>(op: &'static str, cout: usize, bias: &Tensor<T>) -> Result<()> {
    if bias.len() != cout {
        return Err(Error::shape(op, Axis::Channel, cout, bias.len()));
    }
    Ok(())
}

/// Lays out the `k x k` neighbourhoods of one item as a `(cin*k*k) x (h*w)` matrix.
pub(crate) fn im2col<T: Scalar>(
    item: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    cols: &mut [T],
) {
    let p = k / 2;
    let hw = h * w;
    debug_assert_eq!(cols.len(), cin * k * k * hw);
    for c in 0..cin {
        let plane = &item[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw;
                let dst = &mut cols[row..row + hw];
                for y in 0..h {
                    let yy = y as isize + ky as isize - p as isize;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if yy < 0 || yy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[yy as usize * w..(yy as usize + 1) * w];
                    let shift = kx as isize - p as isize;
                    copy_shifted(src, out, shift);
                }
            }
        }
    }
}

/// `out[x] = src[x + shift]`, zero where out of range.
#[inline]
fn copy_shifted<T: Scalar>(src: &[T], out: &mut [T], shift: isize) {
    let w = src.len() as isize;
    let lo = (-shift).clamp(0, w) as usize;
    let hi = (w - shift).clamp(0, w) as usize;
    out[..lo].fill(T::zero());
    if hi > lo {
        let s0 = (lo as isize + shift) as usize;
        out[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
    }
    out[hi.max(lo)..].fill(T::zero());
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub(crate) fn col2im<T: Scalar>(
    cols: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    item: &mut [T],
) {
    let p = k / 2;
    let hw = h * w;
    item.fill(T::zero());
    for c in 0..cin {
        let plane = &mut item[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw;
                let src = &cols[row..row + hw];
                let shift = kx as isize - p as isize;
                for y in 0..h {
                    let yy = y as isize + ky as isize - p as isize;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[yy as usize * w..(yy as usize + 1) * w];
                    let s = &src[y * w..(y + 1) * w];
                    for x in 0..w {
                        let xx = x as isize + shift;
                        if xx >= 0 && xx < w as isize {
                            dst[xx as usize] += s[x];
                        }
                    }
                }
            }
        }
    }
}

/// `weight` is `[cout, cin, k, k]`, `bias` holds `cout` values.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let k = kernel_of("conv2d", input, weight)?;
    let [n, cin, h, w] = input.shape();
    let cout = weight.shape()[0];
    if let Some(b) = bias {
        check_bias("conv2d", cout, b)?;
    }
    let hw = h * w;
    let kk = cin * k * k;
    let mut out = Tensor::zeros([n, cout, h, w]);
    let mut cols = if k == 1 {
        Vec::new()
    } else {
        vec![T::zero(); kk * hw]
    };
    for b in 0..n {
        let src: &[T] = if k == 1 {
            input.item(b)
        } else {
            im2col(input.item(b), cin, h, w, k, &mut cols);
            &cols
        };
        let dst = out.item_mut(b);
        T::gemm(
            cout,
            kk,
            hw,
            T::one(),
            weight.data(),
            kk as isize,
            1,
            src,
            hw as isize,
            1,
            T::zero(),
            dst,
            hw as isize,
            1,
        );
        if let Some(bias) = bias {
            for (co, &bv) in bias.data().iter().enumerate() {
                dst[co * hw..(co + 1) * hw]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

/// Accumulates weight/bias gradients and returns the input gradient when requested.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_weight: &mut Tensor<T>,
    grad_bias: Option<&mut Tensor<T>>,
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    let k = kernel_of("conv2d_backward", input, weight)?;
    let [n, cin, h, w] = input.shape();
    let cout = weight.shape()[0];
    let expected = [n, cout, h, w];
    let axes = [Axis::Batch, Axis::Channel, Axis::Height, Axis::Width];
    for i in 0..4 {
        if grad_out.shape()[i] != expected[i] {
            return Err(Error::shape(
                "conv2d_backward",
                axes[i],
                expected[i],
                grad_out.shape()[i],
            ));
        }
    }
    let hw = h * w;
    let kk = cin * k * k;
    let mut cols = if k == 1 {
        Vec::new()
    } else {
        vec![T::zero(); kk * hw]
    };
    let mut gcols = if need_input_grad && k != 1 {
        vec![T::zero(); kk * hw]
    } else {
        Vec::new()
    };
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(input.shape()));
    let mut grad_bias = grad_bias;
    if let Some(gb) = grad_bias.as_deref() {
        check_bias("conv2d_backward", cout, gb)?;
    }
    for b in 0..n {
        let gy = grad_out.item(b);
        let src: &[T] = if k == 1 {
            input.item(b)
        } else {
            im2col(input.item(b), cin, h, w, k, &mut cols);
            &cols
        };
        // dW += dY * cols^T
        T::gemm(
            cout,
            hw,
            kk,
            T::one(),
            gy,
            hw as isize,
            1,
            src,
            1,
            hw as isize,
            T::one(),
            grad_weight.data_mut(),
            kk as isize,
            1,
        );
        if let Some(gb) = grad_bias.as_deref_mut() {
            for (co, g) in gb.data_mut().iter_mut().enumerate() {
                *g += gy[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
            }
        }
        if let Some(gi) = grad_in.as_mut() {
            // dcols = W^T * dY
            if k == 1 {
                T::gemm(
                    kk,
                    cout,
                    hw,
                    T::one(),
                    weight.data(),
                    1,
                    kk as isize,
                    gy,
                    hw as isize,
                    1,
                    T::zero(),
                    gi.item_mut(b),
                    hw as isize,
                    1,
                );
            } else {
                T::gemm(
                    kk,
                    cout,
                    hw,
                    T::one(),
                    weight.data(),
                    1,
                    kk as isize,
                    gy,
                    hw as isize,
                    1,
                    T::zero(),
                    &mut gcols,
                    hw as isize,
                    1,
                );
                col2im(&gcols, cin, h, w, k, gi.item_mut(b));
            }
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = t([1, 1, 3, 3], (1..=9).map(f64::from).collect());
        let mut kv = vec![0.0; 9];
        kv[4] = 1.0;
        let wt = t([1, 1, 3, 3], kv);
        let b = Tensor::zeros([1, 1, 1, 1]);
        assert_eq!(conv2d(&x, &wt, Some(&b)).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_overlap() {
        let x = Tensor::<f64>::full([1, 1, 3, 3], 1.0);
        let wt = Tensor::full([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &wt, None).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, r, c), 4.0);
        }
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn channel_mismatch_names_channel_axis() {
        let x = Tensor::<f32>::zeros([1, 3, 4, 4]);
        let wt = Tensor::zeros([2, 2, 3, 3]);
        let err = conv2d(&x, &wt, None).unwrap_err().to_string();
        assert!(err.contains("channel"), "{err}");
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::<f32>::zeros([1, 1, 4, 4]);
        let wt = Tensor::zeros([1, 1, 2, 2]);
        assert!(conv2d(&x, &wt, None).is_err());
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)>
        let (cin, h, w, k) = (2, 4, 5, 3);
        let x: Vec<f64> = (0..cin * h * w)
            .map(|i| ((i * 7919) % 13) as f64 - 6.0)
            .collect();
        let c: Vec<f64> = (0..cin * k * k * h * w)
            .map(|i| ((i * 104729) % 11) as f64 - 5.0)
            .collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&x, cin, h, w, k, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&c, cin, h, w, k, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
