//! The steganalysis network: SRM preprocessing, two separable-convolution
//! blocks, four basic blocks, spatial pyramid pooling and a two-layer
//! classifier head.
//!
//! ```text
//! image [N,1,H,W]
//!   -> preprocessing (30 SRM residuals)
//!   -> sep1: pointwise 1x1 -> ABS -> BN -> depthwise 3x3 (30 groups) -> BN -> + input
//!   -> sep2: pointwise 1x1 ->        BN -> depthwise 3x3 (30 groups) -> BN -> + input
//!   -> block1..4: conv 3x3 -> BN -> ReLU/TLU -> avg pool 5/2 (blocks 1-3 only)
//!   -> SPP [4,2,1] -> fc1 -> ReLU -> fc2 -> logits [N,2]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nnops::{
    activation_backward, activation_forward, avg_pool_backward, avg_pool_forward, batchnorm_apply,
    batchnorm_backward, conv2d_backward, conv2d_forward, linear_backward, linear_forward, spp_backward,
    spp_forward, update_running_stats, Activation, ActivationCtx, AvgPoolCtx, BatchNormCtx, BatchNormState,
    Conv2dCtx, Conv2dSpec, LinearCtx, Mode, PoolSpec, SppConfig, SppCtx,
};
use crate::srm::{preprocess_backward, preprocess_forward, PreprocessCtx, PreprocessingLayer, NUM_FILTERS};
use crate::tensor::{Scalar, Tensor};

/// Gradient (or any per-parameter tensor) keyed by parameter name.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

pub const TLU_THRESHOLD: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationMode {
    Relu,
    Tlu3,
}

impl ActivationMode {
    pub fn activation(self) -> Activation {
        match self {
            ActivationMode::Relu => Activation::Relu,
            ActivationMode::Tlu3 => Activation::Tlu(TLU_THRESHOLD),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ActivationMode::Relu => 0,
            ActivationMode::Tlu3 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ActivationMode::Relu),
            1 => Some(ActivationMode::Tlu3),
            _ => None,
        }
    }
}

impl fmt::Display for ActivationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivationMode::Relu => "relu",
            ActivationMode::Tlu3 => "tlu3",
        })
    }
}

impl FromStr for ActivationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(ActivationMode::Relu),
            "tlu3" | "tlu" => Ok(ActivationMode::Tlu3),
            _ => Err(Error::InvalidConfig(format!("unknown activation `{s}`, expected relu or tlu3"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub block_channels: [usize; 4],
    pub fc_hidden: usize,
    pub spp: SppConfig,
    pub activation: ActivationMode,
    pub trainable_srm: bool,
    /// Seed for Xavier initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            block_channels: [32, 32, 64, 128],
            fc_hidden: 1024,
            spp: SppConfig::default(),
            activation: ActivationMode::Relu,
            trainable_srm: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_channels.contains(&0) || self.fc_hidden == 0 {
            return Err(Error::InvalidConfig(format!(
                "channel widths must be positive: blocks {:?}, fc_hidden {}",
                self.block_channels, self.fc_hidden
            )));
        }
        self.spp.validate().map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn feature_len(&self) -> usize {
        self.spp.feature_len(self.block_channels[3])
    }
}

/// Named points in the network whose activations can be inspected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Preprocessing,
    Sep1,
    Sep2,
    /// Basic block 1..=4.
    Block(usize),
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Preprocessing,
        Stage::Sep1,
        Stage::Sep2,
        Stage::Block(1),
        Stage::Block(2),
        Stage::Block(3),
        Stage::Block(4),
    ];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Preprocessing => f.write_str("preprocessing"),
            Stage::Sep1 => f.write_str("sep1"),
            Stage::Sep2 => f.write_str("sep2"),
            Stage::Block(i) => write!(f, "block{i}"),
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.to_string() == s)
            .ok_or_else(|| Error::InvalidStage(s.to_string()))
    }
}

/// What a named tensor is, which decides how the optimizer treats it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// SRM kernels: plain gradient step, only when trainable.
    Preprocessing,
    Weight,
    Bias,
    BatchNormAffine,
    /// Running statistics: saved in checkpoints, never trained.
    RunningStat,
}

impl ParamKind {
    pub fn is_trained(self) -> bool {
        self != ParamKind::RunningStat
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SepconvBlock<T: Scalar> {
    pub pointwise: Tensor<T>,
    pub bn1: BatchNormState<T>,
    pub depthwise: Tensor<T>,
    pub bn2: BatchNormState<T>,
    pub abs_after_pointwise: bool,
    pub residual: bool,
}

impl<T: Scalar> SepconvBlock<T> {
    pub const POINTWISE: Conv2dSpec = Conv2dSpec {
        in_channels: NUM_FILTERS,
        out_channels: NUM_FILTERS,
        kernel_h: 1,
        kernel_w: 1,
        stride: 1,
        padding: 0,
        groups: 1,
    };
    pub const DEPTHWISE: Conv2dSpec = Conv2dSpec {
        in_channels: NUM_FILTERS,
        out_channels: NUM_FILTERS,
        kernel_h: 3,
        kernel_w: 3,
        stride: 1,
        padding: 1,
        groups: NUM_FILTERS,
    };

    fn new(abs_after_pointwise: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            pointwise: xavier_conv(&Self::POINTWISE, rng)?,
            bn1: BatchNormState::new(NUM_FILTERS)?,
            depthwise: xavier_conv(&Self::DEPTHWISE, rng)?,
            bn2: BatchNormState::new(NUM_FILTERS)?,
            abs_after_pointwise,
            residual: true,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasicBlock<T: Scalar> {
    pub conv: Conv2dSpec,
    pub weight: Tensor<T>,
    pub bn: BatchNormState<T>,
    pub activation: Activation,
    pub pool: Option<PoolSpec>,
}

/// Pooling used after basic blocks 1-3.
pub const BLOCK_POOL: PoolSpec = PoolSpec { win: 5, stride: 2, padding: 2 };

#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer<T: Scalar> {
    /// `[in, out]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LinearLayer<T> {
    fn new(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            weight: xavier(&[fan_in, fan_out], fan_in, fan_out, rng)?,
            bias: Tensor::zeros(&[fan_out])?,
        })
    }
}

/// Uniform Xavier initialization, bound `sqrt(6 / (fan_in + fan_out))`.
fn xavier<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(-bound..bound))).collect();
    Tensor::from_data(shape, data)
}

fn xavier_conv<T: Scalar>(spec: &Conv2dSpec, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    let [cout, cin_g, kh, kw] = spec.weight_shape();
    xavier(&spec.weight_shape(), cin_g * kh * kw, cout * kh * kw, rng)
}

#[derive(Clone, Debug)]
struct SepCache<T: Scalar> {
    pw: Conv2dCtx<T>,
    abs: Option<ActivationCtx<T>>,
    bn1: BatchNormCtx<T>,
    dw: Conv2dCtx<T>,
    bn2: BatchNormCtx<T>,
}

#[derive(Clone, Debug)]
struct BlockCache<T: Scalar> {
    conv: Conv2dCtx<T>,
    bn: BatchNormCtx<T>,
    act: ActivationCtx<T>,
    pool: Option<AvgPoolCtx>,
}

#[derive(Clone, Debug)]
struct ForwardCache<T: Scalar> {
    pre: PreprocessCtx<T>,
    sep: Vec<SepCache<T>>,
    blocks: Vec<BlockCache<T>>,
    spp: SppCtx,
    fc1: LinearCtx<T>,
    hidden: ActivationCtx<T>,
    fc2: LinearCtx<T>,
}

enum Pass<T: Scalar> {
    Logits(Tensor<T>, Option<Box<ForwardCache<T>>>),
    Stage(Tensor<T>),
}

#[derive(Clone, Debug)]
pub struct ZhuNet<T: Scalar = f32> {
    pub config: ModelConfig,
    pub preprocessing: PreprocessingLayer<T>,
    pub sep1: SepconvBlock<T>,
    pub sep2: SepconvBlock<T>,
    pub blocks: Vec<BasicBlock<T>>,
    pub fc1: LinearLayer<T>,
    pub fc2: LinearLayer<T>,
    cache: Option<ForwardCache<T>>,
}

impl<T: Scalar> PartialEq for ZhuNet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.preprocessing == other.preprocessing
            && self.sep1 == other.sep1
            && self.sep2 == other.sep2
            && self.blocks == other.blocks
            && self.fc1 == other.fc1
            && self.fc2 == other.fc2
    }
}

/// Lists every named tensor of a model as `(name, kind, ref)`, with `&` or
/// `&mut` access depending on the reference tokens passed in.
macro_rules! tensor_slots {
    ($model:expr, $($r:tt)+) => {{
        let m = $($r)+ *$model;
        let mut out = Vec::new();
        out.push(("pre.kernels3".to_string(), ParamKind::Preprocessing, $($r)+ m.preprocessing.kernels3));
        out.push(("pre.kernels5".to_string(), ParamKind::Preprocessing, $($r)+ m.preprocessing.kernels5));
        for (tag, sep) in [("sep1", $($r)+ m.sep1), ("sep2", $($r)+ m.sep2)] {
            out.push((format!("{tag}.pointwise"), ParamKind::Weight, $($r)+ sep.pointwise));
            out.push((format!("{tag}.bn1.gamma"), ParamKind::BatchNormAffine, $($r)+ sep.bn1.gamma));
            out.push((format!("{tag}.bn1.beta"), ParamKind::BatchNormAffine, $($r)+ sep.bn1.beta));
            out.push((format!("{tag}.bn1.running_mean"), ParamKind::RunningStat, $($r)+ sep.bn1.running_mean));
            out.push((format!("{tag}.bn1.running_var"), ParamKind::RunningStat, $($r)+ sep.bn1.running_var));
            out.push((format!("{tag}.depthwise"), ParamKind::Weight, $($r)+ sep.depthwise));
            out.push((format!("{tag}.bn2.gamma"), ParamKind::BatchNormAffine, $($r)+ sep.bn2.gamma));
            out.push((format!("{tag}.bn2.beta"), ParamKind::BatchNormAffine, $($r)+ sep.bn2.beta));
            out.push((format!("{tag}.bn2.running_mean"), ParamKind::RunningStat, $($r)+ sep.bn2.running_mean));
            out.push((format!("{tag}.bn2.running_var"), ParamKind::RunningStat, $($r)+ sep.bn2.running_var));
        }
        for (i, b) in ($($r)+ m.blocks).into_iter().enumerate() {
            let tag = format!("block{}", i + 1);
            out.push((format!("{tag}.conv"), ParamKind::Weight, $($r)+ b.weight));
            out.push((format!("{tag}.bn.gamma"), ParamKind::BatchNormAffine, $($r)+ b.bn.gamma));
            out.push((format!("{tag}.bn.beta"), ParamKind::BatchNormAffine, $($r)+ b.bn.beta));
            out.push((format!("{tag}.bn.running_mean"), ParamKind::RunningStat, $($r)+ b.bn.running_mean));
            out.push((format!("{tag}.bn.running_var"), ParamKind::RunningStat, $($r)+ b.bn.running_var));
        }
        for (tag, fc) in [("fc1", $($r)+ m.fc1), ("fc2", $($r)+ m.fc2)] {
            out.push((format!("{tag}.weight"), ParamKind::Weight, $($r)+ fc.weight));
            out.push((format!("{tag}.bias"), ParamKind::Bias, $($r)+ fc.bias));
        }
        out
    }};
}

impl<T: Scalar> ZhuNet<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let sep1 = SepconvBlock::new(true, &mut rng)?;
        let sep2 = SepconvBlock::new(false, &mut rng)?;
        let mut blocks = Vec::with_capacity(4);
        let mut cin = NUM_FILTERS;
        for (i, &cout) in config.block_channels.iter().enumerate() {
            let conv = Conv2dSpec::same(cin, cout, 3);
            blocks.push(BasicBlock {
                conv,
                weight: xavier_conv(&conv, &mut rng)?,
                bn: BatchNormState::new(cout)?,
                activation: config.activation.activation(),
                pool: (i < 3).then_some(BLOCK_POOL),
            });
            cin = cout;
        }
        let fc1 = LinearLayer::new(config.feature_len(), config.fc_hidden, &mut rng)?;
        let fc2 = LinearLayer::new(config.fc_hidden, 2, &mut rng)?;
        Ok(Self {
            preprocessing: PreprocessingLayer::srm(config.trainable_srm),
            sep1,
            sep2,
            blocks,
            fc1,
            fc2,
            config,
            cache: None,
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, ParamKind, &Tensor<T>)> {
        tensor_slots!(self, &)
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, ParamKind, &mut Tensor<T>)> {
        tensor_slots!(self, &mut)
    }

    /// Tensors that receive gradients: every trained tensor, minus the
    /// preprocessing kernels when they are frozen.
    pub fn parameters(&self) -> Vec<(String, ParamKind, &Tensor<T>)> {
        let trainable = self.preprocessing.trainable;
        self.named_tensors()
            .into_iter()
            .filter(|(_, k, _)| k.is_trained() && (trainable || *k != ParamKind::Preprocessing))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Freezes or unfreezes the SRM kernels.
    pub fn set_srm_trainable(&mut self, trainable: bool) {
        self.preprocessing.trainable = trainable;
        self.config.trainable_srm = trainable;
    }

    /// Checks that an `h x w` input survives the pooling chain down to SPP.
    pub fn check_input_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h < 5 || w < 5 {
            return Err(Error::input("preprocessing", format!("image is {h}x{w}, need at least 5x5")));
        }
        let (mut h, mut w) = (h, w);
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(pool) = &b.pool {
                (h, w) = pool
                    .output_size(h, w)
                    .map_err(|e| Error::input(&format!("block{}", i + 1), e.to_string()))?;
            }
        }
        let need = self.config.spp.max_level();
        if h < need || w < need {
            return Err(Error::input(
                "spp",
                format!("feature map is {h}x{w}, the {need}x{need} pyramid level needs at least {need}x{need}"),
            ));
        }
        Ok((h, w))
    }

    fn pass(&self, images: &Tensor<T>, mode: Mode, record: bool, stop: Option<Stage>) -> Result<Pass<T>> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::input("preprocessing", format!("expected [N,1,H,W], got {s:?}")));
        }
        self.check_input_size(s[2], s[3])?;

        let (mut x, pre_ctx) = preprocess_forward(images, &self.preprocessing)?;
        if stop == Some(Stage::Preprocessing) {
            return Ok(Pass::Stage(x));
        }
        let mut sep_caches = Vec::with_capacity(2);
        for (stage, sep) in [(Stage::Sep1, &self.sep1), (Stage::Sep2, &self.sep2)] {
            let (y, cache) = sep_forward(sep, &x, mode)?;
            x = y;
            sep_caches.push(cache);
            if stop == Some(stage) {
                return Ok(Pass::Stage(x));
            }
        }
        let mut block_caches = Vec::with_capacity(4);
        for (i, b) in self.blocks.iter().enumerate() {
            let (y, conv) = conv2d_forward(&x, &b.weight, None, &b.conv)?;
            let (y, bn) = batchnorm_apply(&y, &b.bn, mode)?;
            let (y, act) = activation_forward(&y, b.activation)?;
            let (y, pool) = match &b.pool {
                Some(p) => {
                    let (y, ctx) = avg_pool_forward(&y, p)?;
                    (y, Some(ctx))
                }
                None => (y, None),
            };
            x = y;
            block_caches.push(BlockCache { conv, bn, act, pool });
            if stop == Some(Stage::Block(i + 1)) {
                return Ok(Pass::Stage(x));
            }
        }
        let (feat, spp) = spp_forward(&x, &self.config.spp)?;
        let (h, fc1) = linear_forward(&feat, &self.fc1.weight, &self.fc1.bias)?;
        let (h, hidden) = activation_forward(&h, Activation::Relu)?;
        let (logits, fc2) = linear_forward(&h, &self.fc2.weight, &self.fc2.bias)?;
        let cache = record.then(|| {
            Box::new(ForwardCache { pre: pre_ctx, sep: sep_caches, blocks: block_caches, spp, fc1, hidden, fc2 })
        });
        Ok(Pass::Logits(logits, cache))
    }

    /// Full forward pass returning `[N,2]` logits. The pass is recorded for
    /// [`ZhuNet::backward`]; in train mode the BN running statistics are
    /// updated.
    pub fn forward(&mut self, images: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.cache = None;
        let Pass::Logits(logits, Some(cache)) = self.pass(images, mode, true, None)? else {
            unreachable!("a full recorded pass yields logits and a cache");
        };
        if mode == Mode::Train {
            for (sep, c) in [&mut self.sep1, &mut self.sep2].into_iter().zip(&cache.sep) {
                update_running_stats(&mut sep.bn1, &c.bn1);
                update_running_stats(&mut sep.bn2, &c.bn2);
            }
            for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
                update_running_stats(&mut b.bn, &c.bn);
            }
        }
        self.cache = Some(*cache);
        Ok(logits)
    }

    /// Eval-mode forward pass without side effects.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        match self.pass(images, Mode::Eval, false, None)? {
            Pass::Logits(l, _) => Ok(l),
            Pass::Stage(_) => unreachable!("no stop stage requested"),
        }
    }

    /// Flattened SPP feature `[N, K*M]` in eval mode.
    pub fn spp_features(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.dump_feature_maps(images, Stage::Block(4))?;
        Ok(spp_forward(&x, &self.config.spp)?.0)
    }

    /// Eval-mode activation at the output of `stage`.
    pub fn dump_feature_maps(&self, images: &Tensor<T>, stage: Stage) -> Result<Tensor<T>> {
        if let Stage::Block(i) = stage {
            if !(1..=4).contains(&i) {
                return Err(Error::InvalidStage(stage.to_string()));
            }
        }
        match self.pass(images, Mode::Eval, false, Some(stage))? {
            Pass::Stage(t) => Ok(t),
            Pass::Logits(..) => unreachable!("stop stage is always reached"),
        }
    }

    /// Piecewise-linear region of every ABS/ReLU/TLU input in the last
    /// recorded pass.
    pub(crate) fn activation_regions(&self) -> Option<Vec<i8>> {
        let c = self.cache.as_ref()?;
        let mut out: Vec<i8> = c.sep.iter().filter_map(|s| s.abs.as_ref()).flat_map(|a| a.regions()).collect();
        out.extend(c.blocks.iter().flat_map(|b| b.act.regions()));
        out.extend(c.hidden.regions());
        Some(out)
    }

    /// Smallest distance of any ABS/ReLU/TLU input to a kink in the last
    /// recorded pass.
    pub(crate) fn kink_margin(&self) -> Option<f64> {
        let c = self.cache.as_ref()?;
        let acts = c.sep.iter().filter_map(|s| s.abs.as_ref()).chain(c.blocks.iter().map(|b| &b.act));
        Some(acts.chain([&c.hidden]).map(ActivationCtx::kink_margin).fold(f64::INFINITY, f64::min))
    }

    pub fn has_recorded_pass(&self) -> bool {
        self.cache.is_some()
    }

    /// Gradients of `sum(grad_logits * logits)` for every entry of
    /// [`ZhuNet::parameters`], using the last recorded forward pass.
    pub fn backward(&self, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::ContractViolation("backward called before a recorded forward pass".into())
        })?;
        let mut grads = Gradients::new();

        let g2 = linear_backward(grad_logits, Some(&cache.fc2))?;
        grads.insert("fc2.weight".into(), g2.weights);
        grads.insert("fc2.bias".into(), g2.bias);
        let gh = activation_backward(&g2.input, Some(&cache.hidden))?;
        let g1 = linear_backward(&gh, Some(&cache.fc1))?;
        grads.insert("fc1.weight".into(), g1.weights);
        grads.insert("fc1.bias".into(), g1.bias);
        let mut g = spp_backward(&g1.input, Some(&cache.spp))?;

        for (i, c) in cache.blocks.iter().enumerate().rev() {
            let tag = format!("block{}", i + 1);
            if let Some(pool) = &c.pool {
                g = avg_pool_backward(&g, Some(pool))?;
            }
            g = activation_backward(&g, Some(&c.act))?;
            let gb = batchnorm_backward(&g, Some(&c.bn))?;
            grads.insert(format!("{tag}.bn.gamma"), gb.gamma);
            grads.insert(format!("{tag}.bn.beta"), gb.beta);
            let gc = conv2d_backward(&gb.input, Some(&c.conv))?;
            grads.insert(format!("{tag}.conv"), gc.weights);
            g = gc.input;
        }

        for (tag, sep, c) in [("sep2", &self.sep2, &cache.sep[1]), ("sep1", &self.sep1, &cache.sep[0])] {
            g = sep_backward(tag, sep, c, &g, &mut grads)?;
        }

        if self.preprocessing.trainable {
            let gp = preprocess_backward(&g, Some(&cache.pre))?;
            grads.insert("pre.kernels3".into(), gp.kernels3);
            grads.insert("pre.kernels5".into(), gp.kernels5);
        }
        Ok(grads)
    }
}

fn sep_forward<T: Scalar>(sep: &SepconvBlock<T>, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, SepCache<T>)> {
    let (y, pw) = conv2d_forward(x, &sep.pointwise, None, &SepconvBlock::<T>::POINTWISE)?;
    let (y, abs) = if sep.abs_after_pointwise {
        let (y, ctx) = activation_forward(&y, Activation::Abs)?;
        (y, Some(ctx))
    } else {
        (y, None)
    };
    let (y, bn1) = batchnorm_apply(&y, &sep.bn1, mode)?;
    let (y, dw) = conv2d_forward(&y, &sep.depthwise, None, &SepconvBlock::<T>::DEPTHWISE)?;
    let (mut y, bn2) = batchnorm_apply(&y, &sep.bn2, mode)?;
    if sep.residual {
        y.add_assign(x)?;
    }
    Ok((y, SepCache { pw, abs, bn1, dw, bn2 }))
}

fn sep_backward<T: Scalar>(
    tag: &str,
    sep: &SepconvBlock<T>,
    c: &SepCache<T>,
    upstream: &Tensor<T>,
    grads: &mut Gradients<T>,
) -> Result<Tensor<T>> {
    let gb2 = batchnorm_backward(upstream, Some(&c.bn2))?;
    grads.insert(format!("{tag}.bn2.gamma"), gb2.gamma);
    grads.insert(format!("{tag}.bn2.beta"), gb2.beta);
    let gdw = conv2d_backward(&gb2.input, Some(&c.dw))?;
    grads.insert(format!("{tag}.depthwise"), gdw.weights);
    let gb1 = batchnorm_backward(&gdw.input, Some(&c.bn1))?;
    grads.insert(format!("{tag}.bn1.gamma"), gb1.gamma);
    grads.insert(format!("{tag}.bn1.beta"), gb1.beta);
    let g = match &c.abs {
        Some(ctx) => activation_backward(&gb1.input, Some(ctx))?,
        None => gb1.input,
    };
    let gpw = conv2d_backward(&g, Some(&c.pw))?;
    grads.insert(format!("{tag}.pointwise"), gpw.weights);
    let mut gx = gpw.input;
    if sep.residual {
        gx.add_assign(upstream)?;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for st in Stage::ALL {
            assert_eq!(st.to_string().parse::<Stage>().unwrap(), st);
        }
        assert!(matches!("block5".parse::<Stage>(), Err(Error::InvalidStage(_))));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = ZhuNet::<f32>::new(ModelConfig::default()).unwrap();
        let b = ZhuNet::<f32>::new(ModelConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = ZhuNet::<f32>::new(ModelConfig { seed: 1, ..ModelConfig::default() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn backward_needs_a_forward_pass() {
        let m = ZhuNet::<f64>::new(ModelConfig { fc_hidden: 4, ..ModelConfig::default() }).unwrap();
        let g = Tensor::zeros(&[1, 2]).unwrap();
        assert!(matches!(m.backward(&g), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn admissible_sizes() {
        let m = ZhuNet::<f32>::new(ModelConfig { fc_hidden: 4, ..ModelConfig::default() }).unwrap();
        assert_eq!(m.check_input_size(256, 256).unwrap(), (32, 32));
        assert_eq!(m.check_input_size(224, 224).unwrap(), (28, 28));
        assert_eq!(m.check_input_size(32, 32).unwrap(), (4, 4));
        assert!(matches!(
            m.check_input_size(24, 64),
            Err(Error::InvalidInput { ref stage, .. }) if stage == "spp"
        ));
        assert!(matches!(
            m.check_input_size(4, 64),
            Err(Error::InvalidInput { ref stage, .. }) if stage == "preprocessing"
        ));
    }
}
