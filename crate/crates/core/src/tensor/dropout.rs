//! Inverted Monte Carlo dropout.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-element multipliers (`0` or `1 / (1 - rate)`); `None` means identity.
#[derive(Debug, Clone)]
pub struct DropoutMask<T>(Option<Vec<T>>);

pub fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Draws one uniform per element starting at the stream cursor; the cursor
/// advances by the element count when the layer is active.
pub fn mc_dropout<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut RngStream,
    active: bool,
) -> Result<(Tensor<T>, DropoutMask<T>)> {
    check_rate(rate)?;
    if !active || rate == 0.0 {
        return Ok((input.clone(), DropoutMask(None)));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mut draws = vec![0.0f64; input.len()];
    rng.fill_uniform(&mut draws);
    let mask: Vec<T> = draws
        .iter()
        .map(|&u| if u < rate { T::zero() } else { keep })
        .collect();
    let mut out = input.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, DropoutMask(Some(mask))))
}

pub fn mc_dropout_backward<T: Scalar>(mask: &DropoutMask<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    match &mask.0 {
        None => grad_out.clone(),
        Some(m) => {
            let mut g = grad_out.clone();
            for (v, &k) in g.data_mut().iter_mut().zip(m) {
                *v *= k;
            }
            g
        }
    }
}
