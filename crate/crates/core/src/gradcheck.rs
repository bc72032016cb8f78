//! Central finite-difference verification of every backward pass.
//!
//! Each check builds a scalar loss `L = sum(R * y)` with a fixed random `R`
//! (or the cross-entropy itself for the loss and the end-to-end model),
//! perturbs inputs and parameters by `±h` in f64 and compares
//! `(L(x+h) - L(x-h)) / 2h` with the analytic gradient.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nnops::{
    activation_backward, activation_forward, avg_pool_backward, avg_pool_forward, batchnorm_apply,
    batchnorm_backward, conv2d_backward, conv2d_forward, linear_backward, linear_forward, softmax_xent,
    spp_backward, spp_forward, Activation, BatchNormState, Conv2dSpec, Mode, PoolSpec, SppConfig,
};
use crate::srm::{preprocess_backward, preprocess_forward, PreprocessingLayer};
use crate::tensor::Tensor;
use crate::zhunet::{ModelConfig, ZhuNet};

pub const STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error: gradients smaller than this are
/// compared by absolute difference scaled by the floor, since central
/// differences of an O(1) loss carry rounding noise around 1e-11.
pub const REL_FLOOR: f64 = 1e-3;
/// Attempts at finding a model probe whose ±h perturbation keeps every
/// activation on the same linear piece.
const MAX_REDRAWS: usize = 100;
/// Candidate input batches for the end-to-end check.
const MAX_BATCH_DRAWS: usize = 200;
const MIN_KINK_MARGIN: f64 = 1e-5;
/// Entries probed per tensor; larger tensors are subsampled.
const MAX_PROBES: usize = 48;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// A deliberately broken backward pass, for exercising failure reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales every conv2d weight gradient by 1.01.
    Conv2dWeights,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub probes: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<18} max_rel_err={:.3e} tol={:.0e} probes={:<4} {}",
                c.name,
                c.max_rel_error,
                c.tolerance,
                c.probes,
                if c.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

struct Probe<'r> {
    rng: &'r mut ChaCha8Rng,
    max_rel: f64,
    probes: usize,
}

impl Probe<'_> {
    /// Compares `analytic` against central differences of `loss` with
    /// respect to the tensor reached through `slot`.
    fn tensor<S>(
        &mut self,
        state: &mut S,
        slot: impl Fn(&mut S) -> &mut Tensor<f64>,
        analytic: &Tensor<f64>,
        loss: impl Fn(&S) -> Result<f64>,
    ) -> Result<()> {
        let n = slot(state).len();
        let idx: Vec<usize> = if n <= MAX_PROBES {
            (0..n).collect()
        } else {
            (0..MAX_PROBES).map(|_| self.rng.random_range(0..n)).collect()
        };
        for i in idx {
            let orig = slot(state).data()[i];
            slot(state).data_mut()[i] = orig + STEP;
            let plus = loss(state)?;
            slot(state).data_mut()[i] = orig - STEP;
            let minus = loss(state)?;
            slot(state).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            self.max_rel = self.max_rel.max(relative_error(analytic.data()[i], numeric, REL_FLOOR));
            self.probes += 1;
        }
        Ok(())
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_data(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

/// Values in `[-4, 4]` kept at least 0.05 away from the kinks at 0 and ±3.
fn away_from_kinks(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = random(rng, shape, -4.0, 4.0);
    for v in t.data_mut() {
        while v.abs() < 0.05 || (v.abs() - 3.0).abs() < 0.05 {
            *v = rng.random_range(-4.0..4.0);
        }
    }
    t
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn finish(name: &'static str, tolerance: f64, probe: Probe<'_>) -> CheckResult {
    CheckResult { name, max_rel_error: probe.max_rel, tolerance, probes: probe.probes }
}

struct ConvCase {
    name: &'static str,
    input: [usize; 4],
    spec: Conv2dSpec,
    bias: bool,
}

fn check_conv(case: &ConvCase, rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<CheckResult> {
    let spec = case.spec;
    let mut st = (
        random(rng, &case.input, -1.0, 1.0),
        random(rng, &spec.weight_shape(), -1.0, 1.0),
        random(rng, &[spec.out_channels], -1.0, 1.0),
    );
    let fwd = |s: &(Tensor<f64>, Tensor<f64>, Tensor<f64>)| {
        conv2d_forward(&s.0, &s.1, case.bias.then_some(&s.2), &spec)
    };
    let (y, ctx) = fwd(&st)?;
    let r = random(rng, y.shape(), -1.0, 1.0);
    let mut g = conv2d_backward(&r, Some(&ctx))?;
    if fault == Some(Fault::Conv2dWeights) {
        g.weights = g.weights.scale(1.01);
    }
    let loss = |s: &(Tensor<f64>, Tensor<f64>, Tensor<f64>)| Ok(dot(&fwd(s)?.0, &r));
    let mut p = Probe { rng, max_rel: 0.0, probes: 0 };
    p.tensor(&mut st, |s| &mut s.0, &g.input, loss)?;
    p.tensor(&mut st, |s| &mut s.1, &g.weights, loss)?;
    if let Some(gb) = &g.bias {
        p.tensor(&mut st, |s| &mut s.2, gb, loss)?;
    }
    Ok(finish(case.name, OP_TOLERANCE, p))
}

fn check_batchnorm(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut bn = BatchNormState::<f64>::new(3)?;
    bn.gamma = random(rng, &[3], 0.5, 1.5);
    bn.beta = random(rng, &[3], -0.5, 0.5);
    let mut st = (random(rng, &[3, 3, 3, 4], -2.0, 2.0), bn);
    let (y, ctx) = batchnorm_apply(&st.0, &st.1, Mode::Train)?;
    let r = random(rng, y.shape(), -1.0, 1.0);
    let g = batchnorm_backward(&r, Some(&ctx))?;
    let loss = |s: &(Tensor<f64>, BatchNormState<f64>)| Ok(dot(&batchnorm_apply(&s.0, &s.1, Mode::Train)?.0, &r));
    let mut p = Probe { rng, max_rel: 0.0, probes: 0 };
    p.tensor(&mut st, |s| &mut s.0, &g.input, loss)?;
    p.tensor(&mut st, |s| &mut s.1.gamma, &g.gamma, loss)?;
    p.tensor(&mut st, |s| &mut s.1.beta, &g.beta, loss)?;
    Ok(finish("batchnorm_train", OP_TOLERANCE, p))
}

fn check_activation(name: &'static str, act: Activation, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut x = away_from_kinks(rng, &[2, 3, 4, 4]);
    let (y, ctx) = activation_forward(&x, act)?;
    let r = random(rng, y.shape(), -1.0, 1.0);
    let g = activation_backward(&r, Some(&ctx))?;
    let mut p = Probe { rng, max_rel: 0.0, probes: 0 };
    p.tensor(&mut x, |s| s, &g, |s| Ok(dot(&activation_forward(s, act)?.0, &r)))?;
    Ok(finish(name, OP_TOLERANCE, p))
}

fn check_avg_pool(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let spec = PoolSpec { win: 5, stride: 2, padding: 2 };
    let mut x = random(rng, &[2, 2, 7, 7], -1.0, 1.0);
    let (y, ctx) = avg_pool_forward(&x, &spec)?;
    let r = random(rng, y.shape(), -1.0, 1.0);
    let g = avg_pool_backward(&r, Some(&ctx))?;
    let mut p = Probe { rng, max_rel: 0.0, probes: 0 };
    p.tensor(&mut x, |s| s, &g, |s| Ok(dot(&avg_pool_forward(s, &spec)?.0, &r)))?;
    Ok(finish("avg_pool", OP_TOLERANCE, p))
}

fn check_spp(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let cfg = SppConfig::default();
    let mut x = random(rng, &[2, 3, 9, 7], -1.0, 1.0);
    let (y, ctx) = spp_forward(&x, &cfg)?;
    let r = random(rng, y.shape(), -1.0, 1.0);
    let g = spp_backward(&r, Some(&ctx))?;
    let mut p = Probe { rng, max_rel: 0.0, probes: 0 };
    p.tensor(&mut x, |s| s, &g, |s| Ok(dot(&spp_forward(s, &cfg)?.0, &r)))?;
    Ok(finish("spp", OP_TOLERANCE, p))
}

fn check_linear(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut st = (random(rng, &[3, 5], -1.0, 1.0), random(rng, &[5, 4], -1.0, 1.0), random(rng, &[4], -1.0, 1.0));
    let (y, ctx) = linear_forward(&st.0, &st.1, &st.2)?;
    let r = random(rng, y.shape(), -1.0, 1.0);
    let g = linear_backward(&r, Some(&ctx))?;
    let loss = |s: &(Tensor<f64>, Tensor<f64>, Tensor<f64>)| Ok(dot(&linear_forward(&s.0, &s.1, &s.2)?.0, &r));
    let mut p = Probe { rng, max_rel: 0.0, probes: 0 };
    p.tensor(&mut st, |s| &mut s.0, &g.input, loss)?;
    p.tensor(&mut st, |s| &mut s.1, &g.weights, loss)?;
    p.tensor(&mut st, |s| &mut s.2, &g.bias, loss)?;
    Ok(finish("linear", OP_TOLERANCE, p))
}

fn check_softmax_xent(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut logits = random(rng, &[6, 2], -3.0, 3.0);
    let labels = [0, 1, 1, 0, 1, 0];
    let (_, g) = softmax_xent(&logits, &labels)?;
    let mut p = Probe { rng, max_rel: 0.0, probes: 0 };
    p.tensor(&mut logits, |s| s, &g, |s| Ok(softmax_xent(s, &labels)?.0))?;
    Ok(finish("softmax_xent", OP_TOLERANCE, p))
}

fn check_preprocessing(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut layer = PreprocessingLayer::<f64>::srm(true);
    let image = random(rng, &[2, 1, 7, 8], 0.0, 255.0);
    let (y, ctx) = preprocess_forward(&image, &layer)?;
    let r = random(rng, y.shape(), -1.0, 1.0);
    let g = preprocess_backward(&r, Some(&ctx))?;
    let loss = |l: &PreprocessingLayer<f64>| Ok(dot(&preprocess_forward(&image, l)?.0, &r));
    let mut p = Probe { rng, max_rel: 0.0, probes: 0 };
    p.tensor(&mut layer, |l| &mut l.kernels3, &g.kernels3, loss)?;
    p.tensor(&mut layer, |l| &mut l.kernels5, &g.kernels5, loss)?;
    Ok(finish("srm_preprocess", OP_TOLERANCE, p))
}

/// Every operator check, deterministic for a given `seed`.
pub fn check_ops(seed: u64, fault: Option<Fault>) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv_cases = [
        ConvCase {
            name: "conv2d_grouped",
            input: [2, 4, 6, 5],
            spec: Conv2dSpec { stride: 2, ..Conv2dSpec::same(4, 6, 3).with_groups(2) },
            bias: true,
        },
        ConvCase { name: "conv2d_depthwise", input: [2, 3, 5, 6], spec: Conv2dSpec::same(3, 3, 3).with_groups(3), bias: false },
        ConvCase { name: "conv2d_pointwise", input: [2, 4, 4, 3], spec: Conv2dSpec::same(4, 5, 1), bias: true },
    ];
    let mut checks = Vec::new();
    for case in &conv_cases {
        checks.push(check_conv(case, &mut rng, fault)?);
    }
    checks.push(check_batchnorm(&mut rng)?);
    checks.push(check_activation("relu", Activation::Relu, &mut rng)?);
    checks.push(check_activation("tlu", Activation::Tlu(3.0), &mut rng)?);
    checks.push(check_activation("abs", Activation::Abs, &mut rng)?);
    checks.push(check_avg_pool(&mut rng)?);
    checks.push(check_spp(&mut rng)?);
    checks.push(check_linear(&mut rng)?);
    checks.push(check_softmax_xent(&mut rng)?);
    checks.push(check_preprocessing(&mut rng)?);
    Ok(Report { checks })
}

/// Narrow network used for the end-to-end check.
pub fn toy_model_config(seed: u64) -> ModelConfig {
    ModelConfig { block_channels: [4, 4, 8, 8], fc_hidden: 16, seed, ..ModelConfig::default() }
}

/// End-to-end check of a train-mode toy network on a batch of four 32x32
/// unit-range images: one randomly chosen entry per trainable tensor. An entry whose
/// `±h` perturbation moves any ABS/ReLU input across its kink is redrawn,
/// since central differences are meaningless there.
pub fn check_model(seed: u64) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ZhuNet::<f64>::new(toy_model_config(seed))?;
    let labels = [0, 1, 0, 1];
    // Unit-range intensities: with 0..255 pixels a 1e-5 nudge of an SRM
    // kernel moves residuals by ~1e-3 and nearly always crosses an ABS kink.
    // Among a few candidate batches keep the one farthest from any kink.
    let mut images = random(&mut rng, &[4, 1, 32, 32], 0.0, 1.0);
    let mut margin = 0.0;
    for _ in 0..MAX_BATCH_DRAWS {
        let candidate = random(&mut rng, &[4, 1, 32, 32], 0.0, 1.0);
        model.forward(&candidate, Mode::Train)?;
        let m = model.kink_margin().unwrap_or(0.0);
        if m > margin {
            (images, margin) = (candidate, m);
        }
        if margin >= MIN_KINK_MARGIN {
            break;
        }
    }
    let logits = model.forward(&images, Mode::Train)?;
    let (_, g) = softmax_xent(&logits, &labels)?;
    let grads = model.backward(&g)?;
    let base = model.activation_regions().unwrap_or_default();
    let mut max_rel: f64 = 0.0;
    let mut probes = 0;
    let names: Vec<String> = model.parameters().into_iter().map(|(n, _, _)| n).collect();
    for name in names {
        let eval = |idx: usize, delta: f64| -> Result<(f64, Vec<i8>)> {
            let mut m = model.clone();
            let slot = m.named_tensors_mut().into_iter().find(|(n, _, _)| *n == name).expect("listed name").2;
            slot.data_mut()[idx] += delta;
            let loss = softmax_xent(&m.forward(&images, Mode::Train)?, &labels)?.0;
            Ok((loss, m.activation_regions().unwrap_or_default()))
        };
        // (kink crossings, relative error) of the cleanest probe so far
        let mut best = (usize::MAX, f64::INFINITY);
        let mut order: Vec<usize> = (0..grads[&name].len()).collect();
        order.shuffle(&mut rng);
        for &idx in order.iter().take(MAX_REDRAWS) {
            let (plus, rp) = eval(idx, STEP)?;
            let (minus, rm) = eval(idx, -STEP)?;
            let rel = relative_error(grads[&name].data()[idx], (plus - minus) / (2.0 * STEP), REL_FLOOR);
            let crossings = base.iter().zip(&rp).zip(&rm).filter(|((b, p), m)| b != p || b != m).count();
            if crossings < best.0 {
                best = (crossings, rel);
            }
            if crossings == 0 {
                break;
            }
        }
        max_rel = max_rel.max(best.1);
        probes += 1;
    }
    let result = CheckResult { name: "zhunet_toy", max_rel_error: max_rel, tolerance: MODEL_TOLERANCE, probes };
    Ok(Report { checks: vec![result] })
}
