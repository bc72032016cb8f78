//! Average pooling and spatial pyramid pooling.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::conv::out_dim;

/// Square average pooling window. Padded positions count as zeros and every
/// output divides by `win * win`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub win: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    pub fn new(win: usize, stride: usize) -> Self {
        Self { win, stride, padding: 0 }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.win == 0 || self.stride == 0 {
            return Err(Error::InvalidSpec(format!("degenerate pooling {self:?}")));
        }
        if self.padding >= self.win {
            return Err(Error::InvalidSpec(format!(
                "pool padding {} must be smaller than the window {}",
                self.padding, self.win
            )));
        }
        match (
            out_dim(h, self.win, self.stride, self.padding),
            out_dim(w, self.win, self.stride, self.padding),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::InvalidSpec(format!(
                "pool window {} does not fit a {h}x{w} input",
                self.win
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AvgPoolCtx {
    in_shape: Vec<usize>,
    spec: PoolSpec,
}

fn nchw(shape: &[usize], what: &str) -> Result<[usize; 4]> {
    match *shape {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::InvalidShape(format!("{what} expects [N,C,H,W], got {shape:?}"))),
    }
}

/// Clipped `[start, end)` range of one window along an axis.
fn window(o: usize, spec: &PoolSpec, size: usize) -> (usize, usize) {
    let start = (o * spec.stride) as isize - spec.padding as isize;
    let end = (start + spec.win as isize).min(size as isize);
    (start.max(0) as usize, end.max(0) as usize)
}

pub fn avg_pool_forward<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Result<(Tensor<T>, AvgPoolCtx)> {
    let [n, c, h, w] = nchw(input.shape(), "avg_pool")?;
    let (oh, ow) = spec.output_size(h, w)?;
    let mut out = Tensor::zeros(&[n, c, oh, ow])?;
    let norm = T::one() / T::from_usize(spec.win * spec.win).unwrap();
    let x = input.data();
    let y = out.data_mut();
    for plane in 0..n * c {
        let src = &x[plane * h * w..][..h * w];
        let dst = &mut y[plane * oh * ow..][..oh * ow];
        for oy in 0..oh {
            let (y0, y1) = window(oy, spec, h);
            for ox in 0..ow {
                let (x0, x1) = window(ox, spec, w);
                let mut acc = T::zero();
                for iy in y0..y1 {
                    for v in &src[iy * w + x0..iy * w + x1] {
                        acc += *v;
                    }
                }
                dst[oy * ow + ox] = acc * norm;
            }
        }
    }
    Ok((out, AvgPoolCtx { in_shape: input.shape().to_vec(), spec: *spec }))
}

pub fn avg_pool_backward<T: Scalar>(upstream: &Tensor<T>, ctx: Option<&AvgPoolCtx>) -> Result<Tensor<T>> {
    let ctx = ctx.ok_or_else(|| {
        Error::ContractViolation("avg_pool backward called without a saved forward pass".into())
    })?;
    let [n, c, h, w] = nchw(&ctx.in_shape, "avg_pool")?;
    let spec = &ctx.spec;
    let (oh, ow) = spec.output_size(h, w)?;
    if upstream.shape() != [n, c, oh, ow] {
        return Err(Error::InvalidShape(format!(
            "avg_pool upstream {:?} does not match [{n}, {c}, {oh}, {ow}]",
            upstream.shape()
        )));
    }
    let norm = T::one() / T::from_usize(spec.win * spec.win).unwrap();
    let mut dx = Tensor::zeros(&ctx.in_shape)?;
    let dy = upstream.data();
    let d = dx.data_mut();
    for plane in 0..n * c {
        let src = &dy[plane * oh * ow..][..oh * ow];
        let dst = &mut d[plane * h * w..][..h * w];
        for oy in 0..oh {
            let (y0, y1) = window(oy, spec, h);
            for ox in 0..ow {
                let (x0, x1) = window(ox, spec, w);
                let g = src[oy * ow + ox] * norm;
                for iy in y0..y1 {
                    for v in &mut dst[iy * w + x0..iy * w + x1] {
                        *v += g;
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Pyramid levels, each pooling into an `n x n` grid of average bins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SppConfig {
    pub levels: Vec<usize>,
}

impl Default for SppConfig {
    fn default() -> Self {
        Self { levels: vec![4, 2, 1] }
    }
}

/// Window and stride of one pyramid level along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SppLevelGeometry {
    pub bins: usize,
    pub win: usize,
    pub stride: usize,
}

impl SppConfig {
    /// Total bins per channel.
    pub fn bins(&self) -> usize {
        self.levels.iter().map(|n| n * n).sum()
    }

    pub fn max_level(&self) -> usize {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    pub fn feature_len(&self, channels: usize) -> usize {
        channels * self.bins()
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.contains(&0) {
            return Err(Error::InvalidSpec(format!("bad pyramid levels {:?}", self.levels)));
        }
        Ok(())
    }

    /// `win = ceil(a / n)`, `stride = floor(a / n)` for every level.
    pub fn geometry(&self, a: usize) -> Result<Vec<SppLevelGeometry>> {
        self.validate()?;
        self.levels
            .iter()
            .map(|&n| {
                if a < n {
                    Err(Error::InvalidSpec(format!(
                        "pyramid level {n}x{n} needs a feature map of at least {n}, got {a}"
                    )))
                } else {
                    Ok(SppLevelGeometry { bins: n, win: a.div_ceil(n), stride: a / n })
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SppCtx {
    in_shape: Vec<usize>,
    cfg: SppConfig,
}

/// Bin `i` of a level covers `[i*stride, min(i*stride + win, size))`.
fn spp_window(i: usize, g: &SppLevelGeometry, size: usize) -> (usize, usize) {
    let start = i * g.stride;
    (start, (start + g.win).min(size))
}

/// Maps `[N,K,H,W]` to `[N, K*M]`. Per sample the layout is channel-major:
/// channel `k` occupies `[k*M, (k+1)*M)`, levels in configuration order, and
/// bins of a level row-major.
pub fn spp_forward<T: Scalar>(input: &Tensor<T>, cfg: &SppConfig) -> Result<(Tensor<T>, SppCtx)> {
    let [n, k, h, w] = nchw(input.shape(), "spp")?;
    let gh = cfg.geometry(h)?;
    let gw = cfg.geometry(w)?;
    let m = cfg.bins();
    let mut out = Tensor::zeros(&[n, k * m])?;
    let x = input.data();
    let y = out.data_mut();
    for plane in 0..n * k {
        let src = &x[plane * h * w..][..h * w];
        let mut o = plane * m;
        for (lh, lw) in gh.iter().zip(&gw) {
            for by in 0..lh.bins {
                let (y0, y1) = spp_window(by, lh, h);
                for bx in 0..lw.bins {
                    let (x0, x1) = spp_window(bx, lw, w);
                    let mut acc = T::zero();
                    for iy in y0..y1 {
                        for v in &src[iy * w + x0..iy * w + x1] {
                            acc += *v;
                        }
                    }
                    y[o] = acc / T::from_usize((y1 - y0) * (x1 - x0)).unwrap();
                    o += 1;
                }
            }
        }
    }
    Ok((out, SppCtx { in_shape: input.shape().to_vec(), cfg: cfg.clone() }))
}

pub fn spp_backward<T: Scalar>(upstream: &Tensor<T>, ctx: Option<&SppCtx>) -> Result<Tensor<T>> {
    let ctx = ctx.ok_or_else(|| {
        Error::ContractViolation("spp backward called without a saved forward pass".into())
    })?;
    let [n, k, h, w] = nchw(&ctx.in_shape, "spp")?;
    let m = ctx.cfg.bins();
    if upstream.shape() != [n, k * m] {
        return Err(Error::InvalidShape(format!(
            "spp upstream {:?} does not match [{n}, {}]",
            upstream.shape(),
            k * m
        )));
    }
    let gh = ctx.cfg.geometry(h)?;
    let gw = ctx.cfg.geometry(w)?;
    let mut dx = Tensor::zeros(&ctx.in_shape)?;
    let dy = upstream.data();
    let d = dx.data_mut();
    for plane in 0..n * k {
        let dst = &mut d[plane * h * w..][..h * w];
        let mut o = plane * m;
        for (lh, lw) in gh.iter().zip(&gw) {
            for by in 0..lh.bins {
                let (y0, y1) = spp_window(by, lh, h);
                for bx in 0..lw.bins {
                    let (x0, x1) = spp_window(bx, lw, w);
                    let g = dy[o] / T::from_usize((y1 - y0) * (x1 - x0)).unwrap();
                    for iy in y0..y1 {
                        for v in &mut dst[iy * w + x0..iy * w + x1] {
                            *v += g;
                        }
                    }
                    o += 1;
                }
            }
        }
    }
    Ok(dx)
}
