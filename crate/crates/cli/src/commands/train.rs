use std::fs::{self, File};
use std::io::Write;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Args;
use stegnet_core::data::{load_dataset, Split};
use stegnet_core::train::{evaluate, train_loop, EpochRecord, MetricsCsv};
use stegnet_core::zhunet::{ActivationMode, ZhuNet};

use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run configuration in `key = value` form.
    #[arg(long)]
    pub config: PathBuf,
    /// Keep the SRM preprocessing kernels fixed (overrides `freeze_srm`).
    #[arg(long)]
    pub fixed_srm: bool,
    /// Overrides `activation_mode`.
    #[arg(long)]
    pub activation: Option<ActivationMode>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Base configuration; each run writes to a subdirectory of its `out_dir`.
    #[arg(long)]
    pub config: PathBuf,
}

struct Outcome {
    epochs: usize,
    best_epoch: usize,
    best_val_error: f64,
    test_error: Option<f64>,
}

fn timestamp() -> String {
    let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    format!("{}.{:03}", t.as_secs(), t.subsec_millis())
}

/// Trains one configuration, writing `config.txt`, `metrics.csv`,
/// `train.log` and `best.znet` under its output directory.
fn run(cfg: &RunConfig) -> CliResult<Outcome> {
    let dataset = load_dataset(&cfg.manifest)?.with_augmentation(cfg.augmentation);
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_string())?;
    let mut metrics = MetricsCsv::create(cfg.out_dir.join("metrics.csv"))?;
    let mut log = File::create(cfg.out_dir.join("train.log"))?;
    writeln!(
        log,
        "{} start pairs={} train={} validation={} test={}",
        timestamp(),
        dataset.len(),
        dataset.samples(Split::Train).len(),
        dataset.split_len(Split::Validation),
        dataset.split_len(Split::Test)
    )?;
    let mut model = ZhuNet::<f32>::new(cfg.train.model_config())?;
    let mut on_epoch = |r: &EpochRecord| {
        metrics.append(r)?;
        let line = format!("epoch={} lr={} train_loss={:.6} val_error={:.4}", r.epoch, r.lr, r.train_loss, r.val_error);
        writeln!(log, "{} {line}", timestamp())?;
        println!("{line}");
        Ok(())
    };
    let state = train_loop(&mut model, &dataset, &cfg.train, &mut on_epoch)?;
    fs::write(cfg.out_dir.join("best.znet"), &state.best_checkpoint)?;
    let test_error = match dataset.split_len(Split::Test) {
        0 => None,
        _ => Some(evaluate(&model, &dataset, Split::Test)?),
    };
    writeln!(
        log,
        "{} done epochs={} best_epoch={} best_val_error={}",
        timestamp(),
        state.epoch,
        state.best_epoch,
        state.best_val_error
    )?;
    Ok(Outcome { epochs: state.epoch, best_epoch: state.best_epoch, best_val_error: state.best_val_error, test_error })
}

fn resolve(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if args.fixed_srm {
        cfg.train.freeze_srm = true;
    }
    if let Some(a) = args.activation {
        cfg.train.activation_mode = a;
    }
    Ok(cfg)
}

pub fn train(args: &TrainArgs) -> CliResult {
    let cfg = resolve(args)?;
    let out = run(&cfg)?;
    println!(
        "best epoch {} of {}: val_error={}{}",
        out.best_epoch,
        out.epochs,
        out.best_val_error,
        out.test_error.map(|e| format!(" test_error={e}")).unwrap_or_default()
    );
    println!("checkpoint: {}", cfg.out_dir.join("best.znet").display());
    Ok(())
}

/// Runs every combination of activation and SRM trainability on the same
/// data and writes `ablation.csv` next to the per-run directories.
pub fn ablate(args: &AblateArgs) -> CliResult {
    let base = RunConfig::load(&args.config)?;
    let mut rows = Vec::new();
    for activation in [ActivationMode::Relu, ActivationMode::Tlu3] {
        for freeze in [false, true] {
            let srm = if freeze { "fixed" } else { "trainable" };
            let mut cfg = base.clone();
            cfg.train.activation_mode = activation;
            cfg.train.freeze_srm = freeze;
            cfg.out_dir = base.out_dir.join(format!("{activation}-{srm}"));
            println!("== {activation}, {srm} SRM");
            let out = run(&cfg)?;
            rows.push((activation, srm, out));
        }
    }
    let fmt_test = |e: Option<f64>| e.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    let mut csv = String::from("activation,srm,epochs,best_epoch,best_val_error,test_error\n");
    let mut table = format!(
        "{:<10} {:<10} {:>6} {:>10} {:>14} {:>10}\n",
        "activation", "srm", "epochs", "best_epoch", "best_val_error", "test_error"
    );
    for (a, srm, o) in &rows {
        csv += &format!("{a},{srm},{},{},{},{}\n", o.epochs, o.best_epoch, o.best_val_error, fmt_test(o.test_error));
        table += &format!(
            "{:<10} {:<10} {:>6} {:>10} {:>14.4} {:>10}\n",
            a.to_string(),
            srm,
            o.epochs,
            o.best_epoch,
            o.best_val_error,
            fmt_test(o.test_error)
        );
    }
    fs::write(base.out_dir.join("ablation.csv"), csv)?;
    print!("{table}");
    Ok(())
}
