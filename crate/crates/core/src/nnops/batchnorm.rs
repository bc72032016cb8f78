use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl<T: Scalar> BatchNormState<T> {
    /// gamma = 1, beta = 0, running mean 0 and variance 1.
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::full(&[channels], T::one())?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], T::one())?,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCtx<T: Scalar> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
    mode: Mode,
    /// Train mode only: per-channel batch mean and unbiased variance.
    batch_stats: Option<(Vec<T>, Vec<T>)>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Normalizes each channel of an `[N,C,H,W]` (or `[N,C]`) tensor. In train
/// mode the batch statistics are used and the running statistics updated;
/// in eval mode the running statistics are used and left untouched.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCtx<T>)> {
    let (out, ctx) = batchnorm_apply(input, state, mode)?;
    update_running_stats(state, &ctx);
    Ok((out, ctx))
}

/// `running <- (1 - momentum) * running + momentum * batch` using the batch
/// statistics recorded by a train-mode [`batchnorm_apply`]. No-op for eval.
pub fn update_running_stats<T: Scalar>(state: &mut BatchNormState<T>, ctx: &BatchNormCtx<T>) {
    let Some((mean, var)) = &ctx.batch_stats else { return };
    let mom = T::from_f64_lossy(state.momentum);
    for (r, &m) in state.running_mean.data_mut().iter_mut().zip(mean) {
        *r = (T::one() - mom) * *r + mom * m;
    }
    for (r, &v) in state.running_var.data_mut().iter_mut().zip(var) {
        *r = (T::one() - mom) * *r + mom * v;
    }
}

/// Same as [`batchnorm_forward`] but leaves the running statistics alone.
pub fn batchnorm_apply<T: Scalar>(
    input: &Tensor<T>,
    state: &BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCtx<T>)> {
    let s = input.shape();
    if s.len() < 2 || s[1] != state.channels() {
        return Err(Error::InvalidShape(format!(
            "batchnorm over {} channels got input {s:?}",
            state.channels()
        )));
    }
    let (n, c) = (s[0], s[1]);
    let plane: usize = s[2..].iter().product();
    let m = n * plane;
    if mode == Mode::Train && m < 2 {
        return Err(Error::DegenerateBatch(format!(
            "train-mode batchnorm needs at least 2 values per channel, got {m}"
        )));
    }
    let x = input.data();
    let eps = T::from_f64_lossy(state.eps);
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(c);
    let mut batch_means = Vec::new();
    let mut batch_vars = Vec::new();
    for ch in 0..c {
        let values = || (0..n).flat_map(move |b| x[(b * c + ch) * plane..][..plane].iter().copied());
        let (mean, var) = match mode {
            Mode::Train => {
                let mf = T::from_usize(m).unwrap();
                let mean = values().sum::<T>() / mf;
                let var = values().map(|v| (v - mean) * (v - mean)).sum::<T>() / mf;
                batch_means.push(mean);
                batch_vars.push(var * mf / T::from_usize(m - 1).unwrap());
                (mean, var)
            }
            Mode::Eval => (state.running_mean.data()[ch], state.running_var.data()[ch]),
        };
        let istd = T::one() / (var + eps).sqrt();
        inv_std.push(istd);
        let (g, b) = (state.gamma.data()[ch], state.beta.data()[ch]);
        for bi in 0..n {
            let off = (bi * c + ch) * plane;
            for i in off..off + plane {
                let h = (x[i] - mean) * istd;
                xhat[i] = h;
                out[i] = g * h + b;
            }
        }
    }
    let ctx = BatchNormCtx {
        xhat: Tensor::from_data(s, xhat)?,
        inv_std,
        gamma: state.gamma.data().to_vec(),
        mode,
        batch_stats: (mode == Mode::Train).then_some((batch_means, batch_vars)),
    };
    Ok((Tensor::from_data(s, out)?, ctx))
}

pub fn batchnorm_backward<T: Scalar>(
    upstream: &Tensor<T>,
    ctx: Option<&BatchNormCtx<T>>,
) -> Result<BatchNormGrads<T>> {
    let ctx = ctx.ok_or_else(|| {
        Error::ContractViolation("batchnorm backward called without a saved forward pass".into())
    })?;
    let s = ctx.xhat.shape();
    if upstream.shape() != s {
        return Err(Error::InvalidShape(format!(
            "batchnorm upstream {:?} does not match {s:?}",
            upstream.shape()
        )));
    }
    let (n, c) = (s[0], s[1]);
    let plane: usize = s[2..].iter().product();
    let mf = T::from_usize(n * plane).unwrap();
    let dy = upstream.data();
    let xh = ctx.xhat.data();
    let mut dx = Tensor::zeros(s)?;
    let mut dgamma = Tensor::zeros(&[c])?;
    let mut dbeta = Tensor::zeros(&[c])?;
    for ch in 0..c {
        let idx = || (0..n).flat_map(move |b| (b * c + ch) * plane..(b * c + ch + 1) * plane);
        let sum_dy: T = idx().map(|i| dy[i]).sum();
        let sum_dy_xhat: T = idx().map(|i| dy[i] * xh[i]).sum();
        dgamma.data_mut()[ch] = sum_dy_xhat;
        dbeta.data_mut()[ch] = sum_dy;
        let scale = ctx.gamma[ch] * ctx.inv_std[ch];
        let d = dx.data_mut();
        match ctx.mode {
            Mode::Train => {
                for i in idx() {
                    d[i] = scale * (dy[i] - sum_dy / mf - xh[i] * sum_dy_xhat / mf);
                }
            }
            Mode::Eval => {
                for i in idx() {
                    d[i] = scale * dy[i];
                }
            }
        }
    }
    Ok(BatchNormGrads { input: dx, gamma: dgamma, beta: dbeta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_value_channel_normalizes_to_plus_minus_one() {
        let x = Tensor::<f64>::from_f64(&[2, 1, 1, 1], &[1.0, 3.0]).unwrap();
        let mut st = BatchNormState::new(1).unwrap();
        let (y, _) = batchnorm_forward(&x, &mut st, Mode::Train).unwrap();
        // mean 2, biased variance 1
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-15);
        assert!((y.data()[1] - expect).abs() < 1e-15);
        // running stats: 0.9*0 + 0.1*2, 0.9*1 + 0.1*2 (unbiased variance)
        assert!((st.running_mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((st.running_var.data()[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let x = Tensor::<f64>::from_f64(&[2, 2, 2, 1], &[1.0, -4.0, 2.0, 9.0, 0.5, 3.0, 7.0, 1.0])
            .unwrap();
        let mut st = BatchNormState::new(2).unwrap();
        st.gamma = Tensor::zeros(&[2]).unwrap();
        st.beta = Tensor::from_f64(&[2], &[0.25, -3.0]).unwrap();
        let (y, _) = batchnorm_forward(&x, &mut st, Mode::Train).unwrap();
        assert_eq!(y.data(), &[0.25, 0.25, -3.0, -3.0, 0.25, 0.25, -3.0, -3.0]);
    }

    #[test]
    fn eval_mode_with_unit_stats_is_identity() {
        let x = Tensor::<f64>::from_f64(&[1, 2, 1, 2], &[1.5, -2.0, 0.0, 8.0]).unwrap();
        let mut st = BatchNormState::new(2).unwrap();
        st.eps = 0.0;
        let before = st.clone();
        let (y, _) = batchnorm_forward(&x, &mut st, Mode::Eval).unwrap();
        assert_eq!(y, x);
        assert_eq!(st, before);
    }

    #[test]
    fn train_output_is_standardized() {
        let vals: Vec<f64> = (0..3 * 2 * 4 * 4).map(|i| ((i * 37 % 101) as f64).sqrt() * 3.0 - 5.0).collect();
        let x = Tensor::from_f64(&[3, 2, 4, 4], &vals).unwrap();
        let mut st = BatchNormState::new(2).unwrap();
        let (y, _) = batchnorm_forward(&x, &mut st, Mode::Train).unwrap();
        for ch in 0..2 {
            let v: Vec<f64> = (0..3).flat_map(|b| y.data()[(b * 2 + ch) * 16..][..16].to_vec()).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / v.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn single_value_batch_is_degenerate() {
        let x = Tensor::<f32>::zeros(&[1, 3, 1, 1]).unwrap();
        let mut st = BatchNormState::new(3).unwrap();
        assert!(matches!(
            batchnorm_forward(&x, &mut st, Mode::Train),
            Err(Error::DegenerateBatch(_))
        ));
        assert!(batchnorm_forward(&x, &mut st, Mode::Eval).is_ok());
    }
}
