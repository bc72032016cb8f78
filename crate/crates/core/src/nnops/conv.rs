//! Grouped 2-D cross-correlation via im2col + GEMM.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dSpec {
    /// Square kernel, stride 1, "same" padding for odd kernels, one group.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let Self { in_channels, out_channels, kernel_h, kernel_w, stride, groups, .. } = *self;
        if in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(Error::InvalidSpec(format!("zero-sized dimension in {self:?}")));
        }
        if stride == 0 {
            return Err(Error::InvalidSpec("stride must be positive".into()));
        }
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::InvalidSpec(format!(
                "groups {groups} must divide in_channels {in_channels} and out_channels {out_channels}"
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels / self.groups, self.kernel_h, self.kernel_w]
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = out_dim(h, self.kernel_h, self.stride, self.padding);
        let ow = out_dim(w, self.kernel_w, self.stride, self.padding);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::InvalidSpec(format!(
                "{}x{} kernel with padding {} does not fit a {h}x{w} input",
                self.kernel_h, self.kernel_w, self.padding
            ))),
        }
    }
}

pub(crate) fn out_dim(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if padded < kernel || stride == 0 {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// Saved forward state needed by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct Conv2dCtx<T: Scalar> {
    input: Tensor<T>,
    weights: Tensor<T>,
    has_bias: bool,
    spec: Conv2dSpec,
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    cin_g: usize,
    cout_g: usize,
    k: usize,
}

impl Geometry {
    fn is_pointwise(&self, spec: &Conv2dSpec) -> bool {
        spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 && spec.padding == 0
    }

    /// One input and one output channel per group: a direct loop beats a
    /// per-channel GEMM with a single-row weight matrix.
    fn is_depthwise(&self) -> bool {
        self.cin_g == 1 && self.cout_g == 1
    }

    /// Valid output range along one axis for kernel offset `u`.
    fn span(&self, out: usize, size: usize, u: usize, spec: &Conv2dSpec) -> std::ops::Range<usize> {
        let pad = spec.padding;
        let lo = if u >= pad { 0 } else { (pad - u).div_ceil(spec.stride) };
        let hi = if size + pad > u { ((size + pad - u - 1) / spec.stride + 1).min(out) } else { 0 };
        lo..hi.max(lo)
    }
}

fn check<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Result<Geometry> {
    spec.validate()?;
    let s = input.shape();
    if s.len() != 4 || s[1] != spec.in_channels {
        return Err(Error::InvalidShape(format!(
            "conv2d expects input [N,{},H,W], got {s:?}",
            spec.in_channels
        )));
    }
    if weights.shape() != spec.weight_shape() {
        return Err(Error::InvalidShape(format!(
            "conv2d expects weights {:?}, got {:?}",
            spec.weight_shape(),
            weights.shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(Error::InvalidShape(format!(
                "conv2d expects bias [{}], got {:?}",
                spec.out_channels,
                b.shape()
            )));
        }
    }
    let (oh, ow) = spec.output_size(s[2], s[3])?;
    Ok(Geometry {
        n: s[0],
        h: s[2],
        w: s[3],
        oh,
        ow,
        cin_g: spec.in_channels / spec.groups,
        cout_g: spec.out_channels / spec.groups,
        k: (spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w,
    })
}

/// Unfolds `cin_g` channels of one image into a `[k, oh*ow]` column matrix.
fn im2col<T: Scalar>(src: &[T], g: &Geometry, spec: &Conv2dSpec, cols: &mut [T]) {
    let p = g.oh * g.ow;
    let pad = spec.padding as isize;
    for c in 0..g.cin_g {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for u in 0..spec.kernel_h {
            for v in 0..spec.kernel_w {
                let row = (c * spec.kernel_h + u) * spec.kernel_w + v;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride) as isize - pad + u as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * spec.stride) as isize - pad + v as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back, accumulating into `dst`.
fn col2im<T: Scalar>(cols: &[T], g: &Geometry, spec: &Conv2dSpec, dst: &mut [T]) {
    let p = g.oh * g.ow;
    let pad = spec.padding as isize;
    for c in 0..g.cin_g {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for u in 0..spec.kernel_h {
            for v in 0..spec.kernel_w {
                let row = (c * spec.kernel_h + u) * spec.kernel_w + v;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride) as isize - pad + u as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * spec.stride) as isize - pad + v as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward<T: Scalar>(x: &[T], wt: &[T], g: &Geometry, spec: &Conv2dSpec, y: &mut [T]) {
    let (kh, kw, s, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
    for c in 0..spec.groups {
        let plane = &x[c * g.h * g.w..][..g.h * g.w];
        let out = &mut y[c * g.oh * g.ow..][..g.oh * g.ow];
        for u in 0..kh {
            let rows = g.span(g.oh, g.h, u, spec);
            for v in 0..kw {
                let wv = wt[(c * kh + u) * kw + v];
                let cols = g.span(g.ow, g.w, v, spec);
                for oy in rows.clone() {
                    let iy = oy * s + u - pad;
                    let src = &plane[iy * g.w..][..g.w];
                    let dst = &mut out[oy * g.ow..][..g.ow];
                    for ox in cols.clone() {
                        dst[ox] += wv * src[ox * s + v - pad];
                    }
                }
            }
        }
    }
}

fn depthwise_backward<T: Scalar>(
    x: &[T],
    wt: &[T],
    dy: &[T],
    g: &Geometry,
    spec: &Conv2dSpec,
    dx: &mut [T],
    dw: &mut [T],
) {
    let (kh, kw, s, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
    for c in 0..spec.groups {
        let plane = &x[c * g.h * g.w..][..g.h * g.w];
        let dplane = &mut dx[c * g.h * g.w..][..g.h * g.w];
        let up = &dy[c * g.oh * g.ow..][..g.oh * g.ow];
        for u in 0..kh {
            let rows = g.span(g.oh, g.h, u, spec);
            for v in 0..kw {
                let widx = (c * kh + u) * kw + v;
                let wv = wt[widx];
                let cols = g.span(g.ow, g.w, v, spec);
                let mut acc = T::zero();
                for oy in rows.clone() {
                    let iy = oy * s + u - pad;
                    let src = &plane[iy * g.w..][..g.w];
                    let dsrc = &mut dplane[iy * g.w..][..g.w];
                    let urow = &up[oy * g.ow..][..g.ow];
                    for ox in cols.clone() {
                        let ix = ox * s + v - pad;
                        acc += urow[ox] * src[ix];
                        dsrc[ix] += wv * urow[ox];
                    }
                }
                dw[widx] += acc;
            }
        }
    }
}

/// `out[n,co,y,x] = bias[co] + sum over the group of input * weights`, with
/// zero padding and no kernel flip.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Result<(Tensor<T>, Conv2dCtx<T>)> {
    let g = check(input, weights, bias, spec)?;
    let p = g.oh * g.ow;
    let mut out = Tensor::zeros(&[g.n, spec.out_channels, g.oh, g.ow])?;
    let pointwise = g.is_pointwise(spec);
    let depthwise = g.is_depthwise();
    let gemm_groups = if depthwise { 0 } else { spec.groups };
    let mut cols = if pointwise || depthwise { Vec::new() } else { vec![T::zero(); g.k * p] };
    let in_img = spec.in_channels * g.h * g.w;
    let out_img = spec.out_channels * p;
    let x = input.data();
    let wt = weights.data();
    let y = out.data_mut();
    for n in 0..g.n {
        if depthwise {
            depthwise_forward(&x[n * in_img..][..in_img], wt, &g, spec, &mut y[n * out_img..][..out_img]);
        }
        for grp in 0..gemm_groups {
            let src = &x[n * in_img + grp * g.cin_g * g.h * g.w..][..g.cin_g * g.h * g.w];
            let b: &[T] = if pointwise {
                src
            } else {
                im2col(src, &g, spec, &mut cols);
                &cols
            };
            let a = &wt[grp * g.cout_g * g.k..(grp + 1) * g.cout_g * g.k];
            let c = &mut y[n * out_img + grp * g.cout_g * p..][..g.cout_g * p];
            T::gemm(g.cout_g, g.k, p, a, g.k, 1, b, p, 1, T::zero(), c, p, 1);
        }
        if let Some(bias) = bias {
            for (co, &bv) in bias.data().iter().enumerate() {
                for v in &mut y[n * out_img + co * p..][..p] {
                    *v += bv;
                }
            }
        }
    }
    let ctx = Conv2dCtx {
        input: input.clone(),
        weights: weights.clone(),
        has_bias: bias.is_some(),
        spec: *spec,
    };
    Ok((out, ctx))
}

pub fn conv2d_backward<T: Scalar>(
    upstream: &Tensor<T>,
    ctx: Option<&Conv2dCtx<T>>,
) -> Result<Conv2dGrads<T>> {
    let ctx = ctx.ok_or_else(|| {
        Error::ContractViolation("conv2d backward called without a saved forward pass".into())
    })?;
    let spec = &ctx.spec;
    let g = check(&ctx.input, &ctx.weights, None, spec)?;
    let p = g.oh * g.ow;
    if upstream.shape() != [g.n, spec.out_channels, g.oh, g.ow] {
        return Err(Error::InvalidShape(format!(
            "conv2d upstream gradient {:?} does not match output [{}, {}, {}, {}]",
            upstream.shape(),
            g.n,
            spec.out_channels,
            g.oh,
            g.ow
        )));
    }
    let mut grad_input = Tensor::zeros(ctx.input.shape())?;
    let mut grad_weights = Tensor::zeros(ctx.weights.shape())?;
    let pointwise = g.is_pointwise(spec);
    let depthwise = g.is_depthwise();
    let mut cols = if pointwise || depthwise { Vec::new() } else { vec![T::zero(); g.k * p] };
    let mut dcols = if depthwise { Vec::new() } else { vec![T::zero(); g.k * p] };
    let in_img = spec.in_channels * g.h * g.w;
    let out_img = spec.out_channels * p;
    let x = ctx.input.data();
    let wt = ctx.weights.data();
    let dy = upstream.data();
    let dx = grad_input.data_mut();
    let dw = grad_weights.data_mut();
    for n in 0..g.n {
        if depthwise {
            depthwise_backward(
                &x[n * in_img..][..in_img],
                wt,
                &dy[n * out_img..][..out_img],
                &g,
                spec,
                &mut dx[n * in_img..][..in_img],
                dw,
            );
            continue;
        }
        for grp in 0..spec.groups {
            let src_off = n * in_img + grp * g.cin_g * g.h * g.w;
            let src = &x[src_off..][..g.cin_g * g.h * g.w];
            let b: &[T] = if pointwise {
                src
            } else {
                im2col(src, &g, spec, &mut cols);
                &cols
            };
            let dyg = &dy[n * out_img + grp * g.cout_g * p..][..g.cout_g * p];
            let wg = &wt[grp * g.cout_g * g.k..(grp + 1) * g.cout_g * g.k];
            // dW_g += dY_g * cols^T
            let dwg = &mut dw[grp * g.cout_g * g.k..(grp + 1) * g.cout_g * g.k];
            T::gemm(g.cout_g, p, g.k, dyg, p, 1, b, 1, p, T::one(), dwg, g.k, 1);
            // dcols = W_g^T * dY_g
            T::gemm(g.k, g.cout_g, p, wg, 1, g.k, dyg, p, 1, T::zero(), &mut dcols, p, 1);
            let dst = &mut dx[src_off..][..g.cin_g * g.h * g.w];
            if pointwise {
                for (d, &s) in dst.iter_mut().zip(&dcols) {
                    *d += s;
                }
            } else {
                col2im(&dcols, &g, spec, dst);
            }
        }
    }
    let grad_bias = if ctx.has_bias {
        let mut gb = Tensor::zeros(&[spec.out_channels])?;
        let gbd = gb.data_mut();
        for n in 0..g.n {
            for (co, acc) in gbd.iter_mut().enumerate() {
                *acc += dy[n * out_img + co * p..][..p].iter().copied().sum();
            }
        }
        Some(gb)
    } else {
        None
    };
    Ok(Conv2dGrads { input: grad_input, weights: grad_weights, bias: grad_bias })
}
