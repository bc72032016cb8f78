use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct LinearCtx<T: Scalar> {
    input: Tensor<T>,
    weights: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// `out = input · weights + bias` for `input: [N,D]`, `weights: [D,E]`.
pub fn linear_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, LinearCtx<T>)> {
    let (n, d, e) = match (input.shape(), weights.shape(), bias.shape()) {
        (&[n, d], &[d2, e], &[e2]) if d == d2 && e == e2 => (n, d, e),
        (a, b, c) => {
            return Err(Error::InvalidShape(format!(
                "linear expects [N,D]·[D,E] + [E], got {a:?}·{b:?} + {c:?}"
            )))
        }
    };
    let mut out = Tensor::zeros(&[n, e])?;
    {
        let y = out.data_mut();
        for row in y.chunks_mut(e) {
            row.copy_from_slice(bias.data());
        }
        T::gemm(n, d, e, input.data(), d, 1, weights.data(), e, 1, T::one(), y, e, 1);
    }
    Ok((out, LinearCtx { input: input.clone(), weights: weights.clone() }))
}

pub fn linear_backward<T: Scalar>(upstream: &Tensor<T>, ctx: Option<&LinearCtx<T>>) -> Result<LinearGrads<T>> {
    let ctx = ctx.ok_or_else(|| {
        Error::ContractViolation("linear backward called without a saved forward pass".into())
    })?;
    let (n, d) = (ctx.input.shape()[0], ctx.input.shape()[1]);
    let e = ctx.weights.shape()[1];
    if upstream.shape() != [n, e] {
        return Err(Error::InvalidShape(format!(
            "linear upstream {:?} does not match [{n}, {e}]",
            upstream.shape()
        )));
    }
    let dy = upstream.data();
    let mut dx = Tensor::zeros(&[n, d])?;
    // dx = dy · W^T
    T::gemm(n, e, d, dy, e, 1, ctx.weights.data(), 1, e, T::zero(), dx.data_mut(), d, 1);
    let mut dw = Tensor::zeros(&[d, e])?;
    // dW = x^T · dy
    T::gemm(d, n, e, ctx.input.data(), 1, d, dy, e, 1, T::zero(), dw.data_mut(), e, 1);
    let mut db = Tensor::zeros(&[e])?;
    for row in dy.chunks(e) {
        for (acc, &g) in db.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(LinearGrads { input: dx, weights: dw, bias: db })
}
