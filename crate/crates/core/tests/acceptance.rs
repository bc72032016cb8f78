//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line per criterion; the process fails if any criterion does.
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p stegnet-core --test acceptance -- 3 5`.

mod support;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stegnet_core::checkpoint;
use stegnet_core::data::{
    make_batches, synthetic_dataset, Augmentation, Dihedral, GrayImage, ImagePair, PairedDataset, Payload, Split,
    StegoKind, SynthSpec,
};
use stegnet_core::gradcheck::{self, check_model, check_ops};
use stegnet_core::nnops::{softmax_xent, Activation, Mode, SppConfig};
use stegnet_core::srm::{build_filter_bank, preprocess_forward, Family, PreprocessingLayer};
use stegnet_core::train::{
    evaluate, lr_at, momentum_update, sgd_step, train_loop, MetricsCsv, SgdState, TrainConfig, TrainState,
};
use stegnet_core::zhunet::{ActivationMode, ModelConfig, SepconvBlock, Stage, ZhuNet};
use stegnet_core::Tensor;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($fmt)+)),
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// Tolerances and budgets.
const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_OP_TOL: f64 = 1e-6;
const GRADCHECK_MODEL_TOL: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(120);
const ORACLE_CASES: usize = 200;
const ORACLE_TOL: f64 = 1e-12;
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const SPP_FEATURES: usize = 2688;
const SRM_CONSTANT_TOL: f64 = 1e-6;
const SRM_SUM_TOL: f64 = 1e-12;
const PARAMETER_COUNT: usize = 2_869_044;
const LR_TOL: f64 = 1e-15;
const MOMENTUM_EXPECTED: f64 = 0.9994975;
const MOMENTUM_TOL: f64 = 1e-15;
const OVERFIT_ACCURACY: f64 = 0.99;
const OVERFIT_MAX_EPOCHS: usize = 200;
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);
const OVERFIT_NOISE: u8 = 20;
const DESK_SEEDS: [u64; 3] = [1, 2, 3];
const DESK_MAX_EPOCHS: usize = 6;
const DESK_ERROR: f64 = 0.40;
const ABLATION_NOISE: u8 = 6;

/// 1. Finite-difference gradients of every operator and a toy network.
fn gradient_checks() -> Outcome {
    ensure!(
        gradcheck::STEP == GRADCHECK_STEP
            && gradcheck::OP_TOLERANCE == GRADCHECK_OP_TOL
            && gradcheck::MODEL_TOLERANCE == GRADCHECK_MODEL_TOL,
        "gradcheck constants drifted from h={GRADCHECK_STEP:e}, tol {GRADCHECK_OP_TOL:e}/{GRADCHECK_MODEL_TOL:e}"
    );
    let start = Instant::now();
    let ops = ok(check_ops(0, None))?;
    let model = ok(check_model(0))?;
    let elapsed = start.elapsed();
    let required = [
        "conv2d_grouped",
        "conv2d_depthwise",
        "conv2d_pointwise",
        "batchnorm_train",
        "relu",
        "tlu",
        "abs",
        "avg_pool",
        "spp",
        "linear",
        "softmax_xent",
    ];
    for name in required {
        ensure!(ops.checks.iter().any(|c| c.name == name), "operator `{name}` is not checked");
    }
    for c in &ops.checks {
        ensure!(c.tolerance == GRADCHECK_OP_TOL, "{} checked at tolerance {:e}", c.name, c.tolerance);
    }
    ensure!(ops.passed(), "operators over tolerance: {:?}\n{ops}", ops.failures());
    ensure!(model.passed(), "end-to-end check over tolerance\n{model}");
    ensure!(elapsed < GRADCHECK_BUDGET, "took {elapsed:?}, budget {GRADCHECK_BUDGET:?}");
    let worst_op = ops.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let worst_model = model.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(format!(
        "{} ops max rel {worst_op:.1e} < {GRADCHECK_OP_TOL:e}; 32x32 model max rel {worst_model:.1e} < {GRADCHECK_MODEL_TOL:e}; {:.1}s",
        ops.checks.len(),
        elapsed.as_secs_f64()
    ))
}

/// 2. Grouped convolution against the nested-loop reference.
fn conv_oracle() -> Outcome {
    let start = Instant::now();
    let s = support::conv_oracle(2024, ORACLE_CASES);
    let elapsed = start.elapsed();
    ensure!(s.worst < ORACLE_TOL, "max |delta| {:e} >= {ORACLE_TOL:e}", s.worst);
    ensure!(s.depthwise > 0, "no depthwise configuration drawn");
    ensure!(elapsed < ORACLE_BUDGET, "took {elapsed:?}, budget {ORACLE_BUDGET:?}");
    Ok(format!(
        "{} configs ({} depthwise), max |delta| {:.1e} < {ORACLE_TOL:e}",
        s.cases, s.depthwise, s.worst
    ))
}

fn noise_image(side: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..side * side).map(|_| rng.random_range(0..=255u8) as f32).collect();
    Tensor::from_data(&[1, 1, side, side], data).unwrap()
}

/// 3. SPP output length is independent of the input size.
fn spp_fixed_length() -> Outcome {
    let model = ok(ZhuNet::<f32>::new(ModelConfig::default()))?;
    let mut lens = Vec::new();
    for side in [224, 256] {
        let f = ok(model.spp_features(&noise_image(side, side as u64)))?;
        ensure!(f.shape() == [1, SPP_FEATURES], "input {side}: feature shape {:?}", f.shape());
        lens.push(f.len());
    }
    let geom: Vec<_> =
        ok(SppConfig::default().geometry(32))?.iter().map(|g| (g.bins, g.win, g.stride)).collect();
    ensure!(geom == [(4, 8, 8), (2, 16, 16), (1, 32, 32)], "a=32 geometry {geom:?}");
    Ok(format!("224 -> {}, 256 -> {} features; a=32 (win,stride) = (8,8),(16,16),(32,32)", lens[0], lens[1]))
}

fn small_dataset(train: usize, val: usize, test: usize, side: usize, stego: StegoKind, seed: u64) -> PairedDataset {
    synthetic_dataset(&SynthSpec::new(train, val, test, side, stego, seed)).unwrap()
}

fn plus_minus_one(bpp: f64) -> StegoKind {
    StegoKind::PlusMinusOne(Payload::new(bpp).unwrap())
}

/// 4. SRM filter bank structure and the fixed-kernel training mode.
fn srm_bank() -> Outcome {
    let bank = build_filter_bank();
    ensure!(bank.len() == 30, "{} filters", bank.len());
    let mut counts = BTreeMap::new();
    for f in &bank {
        *counts.entry(f.family).or_insert(0) += 1;
        ensure!(f.coefficient_sum().abs() < SRM_SUM_TOL, "{} sums to {}", f.name, f.coefficient_sum());
    }
    let expected = [
        (Family::FirstOrder, 8),
        (Family::SecondOrder, 4),
        (Family::ThirdOrder, 8),
        (Family::Square3x3, 1),
        (Family::Edge3x3, 4),
        (Family::Square5x5, 1),
        (Family::Edge5x5, 4),
    ];
    ensure!(counts == BTreeMap::from(expected), "family counts {counts:?}");

    let layer = PreprocessingLayer::<f64>::srm(false);
    let mut worst: f64 = 0.0;
    for value in 0..=255 {
        let img = Tensor::full(&[1, 1, 17, 13], value as f64).unwrap();
        worst = worst.max(ok(preprocess_forward(&img, &layer))?.0.max_abs());
    }
    ensure!(worst < SRM_CONSTANT_TOL, "constant image residual {worst:e}");

    let ds = small_dataset(16, 8, 0, 32, plus_minus_one(1.0), 11);
    let run = |freeze: bool| -> Result<ZhuNet<f32>, String> {
        let cfg = TrainConfig { max_epochs: 2, lr_decay_epochs: vec![], freeze_srm: freeze, seed: 11, ..Default::default() };
        let mut model = ok(ZhuNet::<f32>::new(cfg.model_config()))?;
        ok(train_loop(&mut model, &ds, &cfg, |_| Ok(())))?;
        Ok(model)
    };
    let pristine = PreprocessingLayer::<f32>::srm(false);
    let same = |m: &ZhuNet<f32>| {
        m.preprocessing.kernels3.data() == pristine.kernels3.data()
            && m.preprocessing.kernels5.data() == pristine.kernels5.data()
    };
    let fixed = run(true)?;
    ensure!(same(&fixed), "fixed-SRM run changed the kernels");
    let trained = run(false)?;
    ensure!(!same(&trained), "trainable-SRM control run left the kernels untouched");
    Ok(format!(
        "30 filters 8/4/8/1/4/1/4, |sum| < {SRM_SUM_TOL:e}, constant-image |r| {worst:.1e} < {SRM_CONSTANT_TOL:e}; fixed-SRM run bitwise unchanged"
    ))
}

/// 5. Channel widths, separable blocks, ABS placement and residual identity.
fn architecture() -> Outcome {
    let mut model = ok(ZhuNet::<f32>::new(ModelConfig::default()))?;
    let widths: Vec<usize> = model.blocks.iter().map(|b| b.conv.out_channels).collect();
    ensure!(widths == [32, 32, 64, 128], "block widths {widths:?}");
    for (name, sep) in [("sep1", &model.sep1), ("sep2", &model.sep2)] {
        ensure!(sep.pointwise.shape() == [30, 30, 1, 1], "{name} pointwise {:?}", sep.pointwise.shape());
        ensure!(sep.depthwise.shape() == [30, 1, 3, 3], "{name} depthwise {:?}", sep.depthwise.shape());
        ensure!(sep.residual, "{name} has no residual connection");
    }
    let dw = SepconvBlock::<f32>::DEPTHWISE;
    ensure!(dw.groups == 30 && dw.in_channels == 30 && dw.out_channels == 30, "depthwise spec {dw:?}");
    ensure!(model.sep1.abs_after_pointwise && !model.sep2.abs_after_pointwise, "ABS placement");
    for (i, b) in model.blocks.iter().enumerate() {
        ensure!(b.activation != Activation::Abs, "block{} uses ABS", i + 1);
    }
    let count = model.parameter_count();
    ensure!(count == PARAMETER_COUNT, "{count} parameters");

    let img = noise_image(64, 5);
    let pre = ok(model.dump_feature_maps(&img, Stage::Preprocessing))?;
    for sep in [&mut model.sep1, &mut model.sep2] {
        sep.pointwise.data_mut().fill(0.0);
        sep.depthwise.data_mut().fill(0.0);
    }
    for stage in [Stage::Sep1, Stage::Sep2] {
        let out = ok(model.dump_feature_maps(&img, stage))?;
        ensure!(out == pre, "{stage} output differs from its input with zeroed convolutions");
    }
    Ok(format!(
        "widths 32/32/64/128, sepconv 30ch depthwise groups 30, ABS only in sep1, zeroed sepconv = identity, {count} parameters"
    ))
}

/// 6. Learning-rate schedule, batch composition and the optimizer update.
fn protocol() -> Outcome {
    let cfg = TrainConfig::default();
    for (epoch, want) in [(0, 0.005), (49, 0.005), (50, 0.001), (149, 0.001), (150, 0.0002), (250, 0.00004), (399, 0.00004)] {
        let got = lr_at(epoch, &cfg);
        ensure!((got - want).abs() <= LR_TOL * want.max(1.0), "lr_at({epoch}) = {got}, want {want}");
    }
    let ds = small_dataset(24, 0, 0, 8, plus_minus_one(1.0), 3);
    let batches = ok(make_batches(&ds.samples(Split::Train), cfg.batch_size, 0))?;
    ensure!(batches.len() == 3, "{} batches from 24 pairs", batches.len());
    for b in &batches {
        let batch = ok(ds.assemble::<f32>(b))?;
        ensure!(b.len() == 8, "batch of {} pairs", b.len());
        ensure!(batch.labels == [0, 1].repeat(8), "labels {:?}", batch.labels);
    }
    let mut p = Tensor::<f64>::full(&[1], 1.0).unwrap();
    let mut v = Tensor::zeros(&[1]).unwrap();
    let g = Tensor::full(&[1], 0.1).unwrap();
    ok(momentum_update(&mut p, &g, &mut v, 0.005, cfg.momentum, cfg.weight_decay))?;
    let got = p.data()[0];
    ensure!((got - MOMENTUM_EXPECTED).abs() < MOMENTUM_TOL, "update gives {got}");
    Ok(format!("lr 0.005/0.001/0.0002/0.00004, 8 pairs per batch, p' = {got} (|delta| < {MOMENTUM_TOL:e})"))
}

/// 7. Memorizing 16 strongly perturbed pairs.
fn overfit() -> Outcome {
    let ds = small_dataset(16, 4, 0, 64, StegoKind::Noise(OVERFIT_NOISE), 0);
    let cfg = TrainConfig { seed: 0, ..Default::default() };
    let mut model = ok(ZhuNet::<f32>::new(cfg.model_config()))?;
    let mut sgd = SgdState::default();
    let train = ds.samples(Split::Train);
    let start = Instant::now();
    for epoch in 0..OVERFIT_MAX_EPOCHS {
        for samples in ok(make_batches(&train, cfg.batch_size, epoch as u64))? {
            let batch = ok(ds.assemble::<f32>(&samples))?;
            let logits = ok(model.forward(&batch.images, Mode::Train))?;
            let (_, grad) = ok(softmax_xent(&logits, &batch.labels))?;
            let grads = ok(model.backward(&grad))?;
            ok(sgd_step(&mut model, &grads, &mut sgd, lr_at(epoch, &cfg), &cfg))?;
        }
        let accuracy = 1.0 - ok(evaluate(&model, &ds, Split::Train))?;
        ensure!(start.elapsed() < OVERFIT_BUDGET, "over budget at epoch {epoch}, accuracy {accuracy}");
        if accuracy >= OVERFIT_ACCURACY {
            return Ok(format!(
                "training accuracy {accuracy} >= {OVERFIT_ACCURACY} after {} epochs, {:.0}s",
                epoch + 1,
                start.elapsed().as_secs_f64()
            ));
        }
    }
    Err(format!("training accuracy below {OVERFIT_ACCURACY} after {OVERFIT_MAX_EPOCHS} epochs"))
}

/// 8. Held-out detection of ±1 embedding at 1 bpp, averaged over seeds.
fn desk_scale() -> Outcome {
    let mut errors = Vec::new();
    for seed in DESK_SEEDS {
        let ds = small_dataset(500, 100, 250, 64, plus_minus_one(1.0), seed);
        let cfg = TrainConfig {
            max_epochs: DESK_MAX_EPOCHS,
            lr_decay_epochs: vec![],
            patience: DESK_MAX_EPOCHS,
            seed,
            ..Default::default()
        };
        let mut model = ok(ZhuNet::<f32>::new(cfg.model_config()))?;
        let state = ok(train_loop(&mut model, &ds, &cfg, |_| Ok(())))?;
        let test = ok(evaluate(&model, &ds, Split::Test))?;
        println!(
            "    seed {seed}: best val {:.3} at epoch {}, test error {test:.3}",
            state.best_val_error, state.best_epoch
        );
        errors.push(test);
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    ensure!(mean < DESK_ERROR, "mean test error {mean:.3} >= {DESK_ERROR} over {errors:?}");
    Ok(format!("mean test error {mean:.3} < {DESK_ERROR} over seeds {DESK_SEEDS:?}, <= {DESK_MAX_EPOCHS} epochs"))
}

/// 9. The activation x SRM-trainability grid trains to completion.
fn ablation() -> Outcome {
    let ds = small_dataset(16, 8, 8, 32, StegoKind::Noise(ABLATION_NOISE), 21);
    let mut table = String::from("    activation srm        epochs best_val test\n");
    let mut runs = 0;
    for activation in [ActivationMode::Relu, ActivationMode::Tlu3] {
        for freeze in [false, true] {
            let cfg = TrainConfig {
                max_epochs: 4,
                lr_decay_epochs: vec![],
                activation_mode: activation,
                freeze_srm: freeze,
                seed: 21,
                ..Default::default()
            };
            let mut model = ok(ZhuNet::<f32>::new(cfg.model_config()))?;
            let state: TrainState<f32> = ok(train_loop(&mut model, &ds, &cfg, |_| Ok(())))?;
            let restored: ZhuNet<f32> = ok(checkpoint::from_bytes(&state.best_checkpoint))?;
            ensure!(restored.config.activation == activation, "checkpoint lost the activation mode");
            ensure!(restored.config.trainable_srm == !freeze, "checkpoint lost the SRM mode");
            let test = ok(evaluate(&model, &ds, Split::Test))?;
            table += &format!(
                "    {:<10} {:<10} {:>6} {:>8.3} {:>5.3}\n",
                activation.to_string(),
                if freeze { "fixed" } else { "trainable" },
                state.epoch,
                state.best_val_error,
                test
            );
            runs += 1;
        }
    }
    ensure!(runs == 4, "{runs} runs");
    print!("{table}");
    Ok("4 complete runs (relu/tlu3 x trainable/fixed SRM), table above".into())
}

fn metrics_of_run(ds: &PairedDataset, cfg: &TrainConfig, path: &std::path::Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let mut csv = ok(MetricsCsv::create(path))?;
    let mut model = ok(ZhuNet::<f32>::new(cfg.model_config()))?;
    let state = ok(train_loop(&mut model, ds, cfg, |r| csv.append(r)))?;
    Ok((ok(std::fs::read(path))?, state.best_checkpoint))
}

/// 10. Checkpoint round trip and run-to-run reproducibility.
fn determinism() -> Outcome {
    let model = ok(ZhuNet::<f32>::new(ModelConfig { seed: 17, ..ModelConfig::default() }))?;
    let img = noise_image(64, 17);
    let before = ok(model.predict(&img))?;
    let dir = ok(tempfile::tempdir())?;
    let path = dir.path().join("model.znet");
    ok(checkpoint::save(&path, &model))?;
    let loaded: ZhuNet<f32> = ok(checkpoint::load(&path))?;
    let after = ok(loaded.predict(&img))?;
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure!(bits(&before) == bits(&after), "logits {before:?} became {after:?}");

    let ds = small_dataset(16, 8, 0, 32, plus_minus_one(1.0), 5);
    let cfg = TrainConfig { max_epochs: 3, lr_decay_epochs: vec![], seed: 5, ..Default::default() };
    let (a, ca) = metrics_of_run(&ds, &cfg, &dir.path().join("a.csv"))?;
    let (b, cb) = metrics_of_run(&ds, &cfg, &dir.path().join("b.csv"))?;
    ensure!(a == b, "metrics differ:\n{}\n{}", String::from_utf8_lossy(&a), String::from_utf8_lossy(&b));
    ensure!(ca == cb, "best checkpoints differ");
    Ok(format!(
        "save/load forward bitwise equal; two seeded runs give identical metrics ({} bytes) and checkpoints",
        a.len()
    ))
}

/// 11. Dihedral augmentation of the training split.
fn augmentation() -> Outcome {
    let fixture = GrayImage::from_fn(5, 5, |x, y| (y * 5 + x) as u8).unwrap();
    let images: Vec<GrayImage> = Dihedral::ALL.iter().map(|t| t.apply(&fixture)).collect();
    for i in 0..8 {
        for j in i + 1..8 {
            ensure!(images[i] != images[j], "transforms {i} and {j} agree");
        }
    }
    let base = small_dataset(6, 3, 2, 16, plus_minus_one(0.5), 8);
    let plain = base.samples(Split::Train).len();
    let ds = base.with_augmentation(Augmentation::Dihedral8);
    let augmented = ds.samples(Split::Train);
    ensure!(augmented.len() == 8 * plain, "{} augmented from {plain}", augmented.len());
    ensure!(ds.samples(Split::Validation).len() == 3 && ds.samples(Split::Test).len() == 2, "held-out splits changed");
    for s in &augmented {
        let pair: &ImagePair = &ds.pairs()[s.pair];
        ensure!(pair.split == Split::Train, "augmented sample from {}", pair.split);
        let (c, st) = ds.materialize(*s);
        ensure!(c == s.transform.apply(&pair.cover), "cover transform");
        ensure!(st == s.transform.apply(&pair.stego), "stego transform differs from its cover's");
    }
    Ok(format!("{plain} -> {} training pairs, 8 distinct transforms, pairs transformed together", augmented.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        (1, "gradient checks", gradient_checks),
        (2, "convolution oracle", conv_oracle),
        (3, "SPP fixed length", spp_fixed_length),
        (4, "SRM bank", srm_bank),
        (5, "architecture audit", architecture),
        (6, "training protocol", protocol),
        (7, "overfit sanity", overfit),
        (8, "desk-scale detection", desk_scale),
        (9, "ablation harness", ablation),
        (10, "determinism and persistence", determinism),
        (11, "augmentation", augmentation),
    ];
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().expect("first pool configuration");
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail}) [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({why}) [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
