//! SRM high-pass filter bank and the trainable preprocessing layer built
//! from it.
//!
//! The bank holds 30 kernels. The 25 kernels with a native support of at most
//! 3x3 are embedded into 3x3 convolution kernels; the five 5x5 kernels
//! (`SQUARE5x5` and the four `EDGE5x5` rotations) stay 5x5. Both groups are
//! applied with "same" output size over an edge-replicated border, so a
//! constant image has a zero residual everywhere, and stacked channel-wise,
//! 3x3 residuals first, in the order of the data file.

use std::fmt;

use crate::error::{Error, Result};
use crate::nnops::{conv2d_backward, conv2d_forward, Conv2dCtx, Conv2dSpec};
use crate::tensor::{Scalar, Tensor};

const BANK_SOURCE: &str = include_str!("../data/srm_filters.txt");

pub const NUM_FILTERS: usize = 30;
pub const NUM_3X3: usize = 25;
pub const NUM_5X5: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    FirstOrder,
    SecondOrder,
    ThirdOrder,
    Square3x3,
    Edge3x3,
    Square5x5,
    Edge5x5,
}

impl Family {
    fn from_name(name: &str) -> Option<Self> {
        let fam = match name.split('_').next()? {
            "1st" => Family::FirstOrder,
            "2nd" => Family::SecondOrder,
            "3rd" => Family::ThirdOrder,
            "SQUARE3x3" => Family::Square3x3,
            "EDGE3x3" => Family::Edge3x3,
            "SQUARE5x5" => Family::Square5x5,
            "EDGE5x5" => Family::Edge5x5,
            _ => return None,
        };
        Some(fam)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeClass {
    Embed3x3,
    Keep5x5,
}

impl SizeClass {
    pub fn kernel_size(self) -> usize {
        match self {
            SizeClass::Embed3x3 => 3,
            SizeClass::Keep5x5 => 5,
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct SrmFilter {
    pub name: String,
    pub family: Family,
    pub native_h: usize,
    pub native_w: usize,
    /// Row-major, already normalized.
    pub coefficients: Vec<f64>,
    pub residual_order: u32,
    pub size_class: SizeClass,
}

impl fmt::Debug for SrmFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SrmFilter({} {}x{} c={})", self.name, self.native_h, self.native_w, self.residual_order)
    }
}

impl SrmFilter {
    pub fn coefficient_sum(&self) -> f64 {
        self.coefficients.iter().sum()
    }
}

fn parse_rational(tok: &str, line: usize) -> Result<f64> {
    let bad = || Error::InvalidFilter(format!("line {line}: `{tok}` is not a rational number"));
    match tok.split_once('/') {
        Some((num, den)) => {
            let num: i64 = num.parse().map_err(|_| bad())?;
            let den: i64 = den.parse().map_err(|_| bad())?;
            if den == 0 {
                return Err(bad());
            }
            Ok(num as f64 / den as f64)
        }
        None => tok.parse::<i64>().map(|v| v as f64).map_err(|_| bad()),
    }
}

/// Parses the plain-text filter format: a `name rows cols order` header per
/// record followed by `rows` lines of `cols` rationals. Blank lines and `#`
/// comments are ignored.
pub fn parse_filter_bank(text: &str) -> Result<Vec<SrmFilter>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut filters = Vec::new();
    while let Some((ln, header)) = lines.next() {
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [name, rows, cols, order] = fields[..] else {
            return Err(Error::InvalidFilter(format!("line {ln}: malformed header `{header}`")));
        };
        let parse_dim = |s: &str| {
            s.parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::InvalidFilter(format!("line {ln}: bad dimension `{s}`")))
        };
        let (rows, cols) = (parse_dim(rows)?, parse_dim(cols)?);
        let residual_order: u32 = order
            .parse()
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| Error::InvalidFilter(format!("line {ln}: bad residual order `{order}`")))?;
        let family = Family::from_name(name)
            .ok_or_else(|| Error::InvalidFilter(format!("line {ln}: unknown filter family `{name}`")))?;
        let mut coefficients = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (rl, row) = lines
                .next()
                .ok_or_else(|| Error::InvalidFilter(format!("filter `{name}` is truncated")))?;
            let before = coefficients.len();
            for tok in row.split_whitespace() {
                coefficients.push(parse_rational(tok, rl)?);
            }
            if coefficients.len() - before != cols {
                return Err(Error::InvalidFilter(format!(
                    "line {rl}: filter `{name}` expects {cols} values per row"
                )));
            }
        }
        let size_class = match (rows, cols) {
            (5, 5) => SizeClass::Keep5x5,
            (r, c) if r <= 3 && c <= 3 => SizeClass::Embed3x3,
            (r, c) => {
                return Err(Error::InvalidFilter(format!(
                    "filter `{name}` is {r}x{c}; only 5x5 or at most 3x3 is supported"
                )))
            }
        };
        filters.push(SrmFilter {
            name: name.to_string(),
            family,
            native_h: rows,
            native_w: cols,
            coefficients,
            residual_order,
            size_class,
        });
    }
    Ok(filters)
}

/// The 30 SRM kernels in channel order.
pub fn build_filter_bank() -> Vec<SrmFilter> {
    parse_filter_bank(BANK_SOURCE).expect("bundled SRM filter bank is well formed")
}

/// Places a filter's coefficients in the middle of a zero `k x k` kernel,
/// where `k` comes from its size class. The filter's own center element is
/// `(n - 1) / 2` (rounded toward the top-left for even sizes) and lands on
/// the kernel center.
pub fn embed_kernel<T: Scalar>(filter: &SrmFilter) -> Result<Tensor<T>> {
    let k = filter.size_class.kernel_size();
    if filter.native_h > k || filter.native_w > k {
        return Err(Error::InvalidFilter(format!(
            "filter `{}` is {}x{}, larger than its {k}x{k} target",
            filter.name, filter.native_h, filter.native_w
        )));
    }
    let oy = (k - 1) / 2 - (filter.native_h - 1) / 2;
    let ox = (k - 1) / 2 - (filter.native_w - 1) / 2;
    let mut out = Tensor::zeros(&[1, 1, k, k])?;
    for r in 0..filter.native_h {
        for c in 0..filter.native_w {
            out.data_mut()[(r + oy) * k + c + ox] = T::from_f64_lossy(filter.coefficients[r * filter.native_w + c]);
        }
    }
    Ok(out)
}

/// First network layer: 25 3x3 and 5 5x5 residual kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessingLayer<T: Scalar> {
    pub kernels3: Tensor<T>,
    pub kernels5: Tensor<T>,
    pub trainable: bool,
    /// Output channel `i` is the residual of `names[i]`.
    pub names: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct PreprocessCtx<T: Scalar> {
    ctx3: Conv2dCtx<T>,
    ctx5: Conv2dCtx<T>,
}

#[derive(Clone, Debug)]
pub struct PreprocessGrads<T: Scalar> {
    pub kernels3: Tensor<T>,
    pub kernels5: Tensor<T>,
}

const SPEC3: Conv2dSpec = Conv2dSpec {
    in_channels: 1,
    out_channels: NUM_3X3,
    kernel_h: 3,
    kernel_w: 3,
    stride: 1,
    padding: 0,
    groups: 1,
};
const SPEC5: Conv2dSpec = Conv2dSpec {
    in_channels: 1,
    out_channels: NUM_5X5,
    kernel_h: 5,
    kernel_w: 5,
    stride: 1,
    padding: 0,
    groups: 1,
};

impl<T: Scalar> PreprocessingLayer<T> {
    pub fn from_bank(bank: &[SrmFilter], trainable: bool) -> Result<Self> {
        let (small, large): (Vec<&SrmFilter>, Vec<&SrmFilter>) =
            bank.iter().partition(|f| f.size_class == SizeClass::Embed3x3);
        if small.len() != NUM_3X3 || large.len() != NUM_5X5 {
            return Err(Error::InvalidFilter(format!(
                "expected {NUM_3X3} 3x3 and {NUM_5X5} 5x5 filters, got {} and {}",
                small.len(),
                large.len()
            )));
        }
        let stack = |filters: &[&SrmFilter], k: usize| -> Result<Tensor<T>> {
            let mut data = Vec::with_capacity(filters.len() * k * k);
            for f in filters {
                data.extend_from_slice(embed_kernel::<T>(f)?.data());
            }
            Tensor::from_data(&[filters.len(), 1, k, k], data)
        };
        Ok(Self {
            kernels3: stack(&small, 3)?,
            kernels5: stack(&large, 5)?,
            trainable,
            names: small.iter().chain(&large).map(|f| f.name.clone()).collect(),
        })
    }

    pub fn srm(trainable: bool) -> Self {
        Self::from_bank(&build_filter_bank(), trainable).expect("bundled SRM bank has 25 + 5 filters")
    }

    pub fn out_channels(&self) -> usize {
        NUM_FILTERS
    }
}

/// Pads every plane of an `[N,C,H,W]` tensor by repeating its border pixels.
pub fn replicate_pad<T: Scalar>(input: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let &[n, c, h, w] = input.shape() else {
        return Err(Error::InvalidShape(format!("replicate_pad expects [N,C,H,W], got {:?}", input.shape())));
    };
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut data = Vec::with_capacity(n * c * ph * pw);
    for plane in input.data().chunks(h * w) {
        for y in 0..ph {
            let row = &plane[y.saturating_sub(pad).min(h - 1) * w..][..w];
            for x in 0..pw {
                data.push(row[x.saturating_sub(pad).min(w - 1)]);
            }
        }
    }
    Tensor::from_data(&[n, c, ph, pw], data)
}

/// Residual maps `[N,30,H,W]` of a `[N,1,H,W]` image batch.
pub fn preprocess_forward<T: Scalar>(
    image: &Tensor<T>,
    layer: &PreprocessingLayer<T>,
) -> Result<(Tensor<T>, PreprocessCtx<T>)> {
    match *image.shape() {
        [_, 1, h, w] if h >= 5 && w >= 5 => {}
        [_, 1, h, w] => {
            return Err(Error::input(
                "preprocessing",
                format!("image is {h}x{w}, need at least 5x5"),
            ))
        }
        ref s => return Err(Error::input("preprocessing", format!("expected [N,1,H,W], got {s:?}"))),
    }
    let (r3, ctx3) = conv2d_forward(&replicate_pad(image, 1)?, &layer.kernels3, None, &SPEC3)?;
    let (r5, ctx5) = conv2d_forward(&replicate_pad(image, 2)?, &layer.kernels5, None, &SPEC5)?;
    let s = image.shape();
    let (n, plane) = (s[0], s[2] * s[3]);
    let mut data = Vec::with_capacity(n * NUM_FILTERS * plane);
    for b in 0..n {
        data.extend_from_slice(&r3.data()[b * NUM_3X3 * plane..][..NUM_3X3 * plane]);
        data.extend_from_slice(&r5.data()[b * NUM_5X5 * plane..][..NUM_5X5 * plane]);
    }
    let out = Tensor::from_data(&[n, NUM_FILTERS, s[2], s[3]], data)?;
    Ok((out, PreprocessCtx { ctx3, ctx5 }))
}

/// Kernel gradients of the preprocessing layer. The input gradient is not
/// needed since the layer reads raw pixels.
pub fn preprocess_backward<T: Scalar>(
    upstream: &Tensor<T>,
    ctx: Option<&PreprocessCtx<T>>,
) -> Result<PreprocessGrads<T>> {
    let ctx = ctx.ok_or_else(|| {
        Error::ContractViolation("preprocessing backward called without a saved forward pass".into())
    })?;
    let s = upstream.shape();
    if s.len() != 4 || s[1] != NUM_FILTERS {
        return Err(Error::InvalidShape(format!("preprocessing upstream {s:?} is not [N,30,H,W]")));
    }
    let (n, plane) = (s[0], s[2] * s[3]);
    let mut u3 = Vec::with_capacity(n * NUM_3X3 * plane);
    let mut u5 = Vec::with_capacity(n * NUM_5X5 * plane);
    for b in 0..n {
        let img = &upstream.data()[b * NUM_FILTERS * plane..][..NUM_FILTERS * plane];
        u3.extend_from_slice(&img[..NUM_3X3 * plane]);
        u5.extend_from_slice(&img[NUM_3X3 * plane..]);
    }
    let g3 = conv2d_backward(&Tensor::from_data(&[n, NUM_3X3, s[2], s[3]], u3)?, Some(&ctx.ctx3))?;
    let g5 = conv2d_backward(&Tensor::from_data(&[n, NUM_5X5, s[2], s[3]], u5)?, Some(&ctx.ctx5))?;
    Ok(PreprocessGrads { kernels3: g3.weights, kernels5: g5.weights })
}

/// Plain gradient step `K' = K - lr * grad`, without momentum or weight decay.
pub fn preprocess_update<T: Scalar>(
    layer: &mut PreprocessingLayer<T>,
    grads: &PreprocessGrads<T>,
    lr: f64,
) -> Result<()> {
    if !layer.trainable {
        return Err(Error::ContractViolation(
            "preprocessing layer is frozen and cannot be updated".into(),
        ));
    }
    if grads.kernels3.shape() != layer.kernels3.shape() || grads.kernels5.shape() != layer.kernels5.shape() {
        return Err(Error::ContractViolation("preprocessing gradient shapes do not match kernels".into()));
    }
    descend(&mut layer.kernels3, &grads.kernels3, lr);
    descend(&mut layer.kernels5, &grads.kernels5, lr);
    Ok(())
}

pub(crate) fn descend<T: Scalar>(param: &mut Tensor<T>, grad: &Tensor<T>, lr: f64) {
    let lr = T::from_f64_lossy(lr);
    for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
}
