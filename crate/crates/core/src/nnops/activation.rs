use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Pointwise nonlinearities used by the network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// Truncated linear unit: clamp to `[-t, t]`.
    Tlu(f64),
    Abs,
}

impl Activation {
    fn check(self) -> Result<()> {
        match self {
            Activation::Tlu(t) if t.is_nan() || t <= 0.0 => {
                Err(Error::InvalidSpec(format!("TLU threshold must be positive, got {t}")))
            }
            _ => Ok(()),
        }
    }

    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tlu(t) => {
                let t = T::from_f64_lossy(t);
                x.max(-t).min(t)
            }
            Activation::Abs => x.abs(),
        }
    }

    fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tlu(t) => {
                let t = T::from_f64_lossy(t);
                if x > -t && x < t {
                    T::one()
                } else {
                    T::zero()
                }
            }
            // subgradient 0 at the origin
            Activation::Abs => {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ActivationCtx<T: Scalar> {
    input: Tensor<T>,
    act: Activation,
}

impl<T: Scalar> ActivationCtx<T> {
    /// Which linear piece each input fell on: -1, 0 or 1. Two passes with
    /// equal regions lie on the same smooth branch.
    pub(crate) fn regions(&self) -> impl Iterator<Item = i8> + '_ {
        let t = match self.act {
            Activation::Tlu(t) => T::from_f64_lossy(t),
            _ => T::zero(),
        };
        self.input.data().iter().map(move |&x| match self.act {
            Activation::Tlu(_) => i8::from(x >= t) - i8::from(x <= -t),
            _ => i8::from(x > T::zero()) - i8::from(x < T::zero()),
        })
    }
}

impl<T: Scalar> ActivationCtx<T> {
    /// Smallest distance from any input to a kink of the activation.
    pub(crate) fn kink_margin(&self) -> f64 {
        let t = match self.act {
            Activation::Tlu(t) => t,
            _ => 0.0,
        };
        self.input
            .data()
            .iter()
            .map(|&x| (x.to_f64().unwrap_or(0.0).abs() - t).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn activation_forward<T: Scalar>(
    input: &Tensor<T>,
    act: Activation,
) -> Result<(Tensor<T>, ActivationCtx<T>)> {
    act.check()?;
    Ok((input.map(|v| act.apply(v)), ActivationCtx { input: input.clone(), act }))
}

pub fn activation_backward<T: Scalar>(
    upstream: &Tensor<T>,
    ctx: Option<&ActivationCtx<T>>,
) -> Result<Tensor<T>> {
    let ctx = ctx.ok_or_else(|| {
        Error::ContractViolation("activation backward called without a saved forward pass".into())
    })?;
    if upstream.shape() != ctx.input.shape() {
        return Err(Error::InvalidShape(format!(
            "activation upstream {:?} does not match {:?}",
            upstream.shape(),
            ctx.input.shape()
        )));
    }
    let data = upstream
        .data()
        .iter()
        .zip(ctx.input.data())
        .map(|(&g, &x)| g * ctx.act.derivative(x))
        .collect();
    Tensor::from_data(upstream.shape(), data)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| Activation::Relu.apply(v))
}

pub fn tlu<T: Scalar>(input: &Tensor<T>, threshold: f64) -> Result<Tensor<T>> {
    Activation::Tlu(threshold).check()?;
    Ok(input.map(|v| Activation::Tlu(threshold).apply(v)))
}

pub fn abs_act<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.abs())
}
