//! Elementwise activations. All three are overflow-safe for large `|x|`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Sigmoid,
    Softplus,
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    // exp(80) is finite in f32, and beyond that the result is saturated.
    let limit = T::of(80.0);
    T::one() / (T::one() + (-x.max(-limit).min(limit)).exp())
}

#[inline]
pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Inverse of softplus for positive `y`, used to place head biases.
pub fn softplus_inverse(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inverse needs y > 0");
    // log(exp(y) - 1) = y + log(1 - exp(-y))
    y + (-(-y).exp()).ln_1p()
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => silu(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (T::one() - s)
            }
            Activation::Softplus => sigmoid(x),
        }
    }

    pub fn forward<T: Scalar>(self, input: &Tensor<T>) -> Tensor<T> {
        input.map(|x| self.apply(x))
    }

    /// `grad_in = grad_out * f'(input)`.
    pub fn backward<T: Scalar>(self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        input.expect_same_shape("activation_backward", grad_out)?;
        let mut g = grad_out.clone();
        for (d, &x) in g.data_mut().iter_mut().zip(input.data()) {
            *d *= self.derivative(x);
        }
        Ok(g)
    }
}
