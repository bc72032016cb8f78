use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use stegnet_core::checkpoint;
use stegnet_core::data::{image_tensor, load_dataset, GrayImage, Split};
use stegnet_core::gradcheck::{check_model, check_ops, Fault};
use stegnet_core::nnops::softmax;
use stegnet_core::train::evaluate;
use stegnet_core::zhunet::{Stage, ZhuNet};

use crate::error::{CliError, CliResult};

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// train, validation (or val) or test.
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// preprocessing, sep1, sep2, block1, block2, block3 or block4.
    #[arg(long)]
    pub stage: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Scale {
    /// Every operator in isolation.
    Ops,
    /// A small end-to-end network on 32x32 inputs.
    Model,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InjectedFault {
    Conv2d,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "ops")]
    pub scale: Scale,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupts an operator's backward pass to exercise failure reporting.
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<InjectedFault>,
}

fn load_model(path: &PathBuf) -> CliResult<ZhuNet<f32>> {
    Ok(checkpoint::load(path)?)
}

pub fn eval(args: &EvalArgs) -> CliResult {
    let model = load_model(&args.checkpoint)?;
    let dataset = load_dataset(&args.manifest)?;
    if dataset.split_len(args.split) == 0 {
        return Err(CliError::Usage(format!("split `{}` of {} is empty", args.split, args.manifest.display())));
    }
    println!("error_rate={}", evaluate(&model, &dataset, args.split)?);
    Ok(())
}

pub fn infer(args: &InferArgs) -> CliResult {
    let model = load_model(&args.checkpoint)?;
    let image = GrayImage::load(&args.image)?;
    let probs = softmax(&model.predict(&image_tensor::<f32>(&image))?)?;
    let (p_cover, p_stego) = (probs.data()[0], probs.data()[1]);
    let label = if p_stego > p_cover { "stego" } else { "cover" };
    println!("{label} p_cover={p_cover:.6} p_stego={p_stego:.6}");
    Ok(())
}

/// Maps a plane to 0..=255 by its own min and max; a flat plane maps to 0.
fn normalize(plane: &[f32]) -> Vec<u8> {
    let (lo, hi) = plane.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    plane
        .iter()
        .map(|&v| if range > 0.0 { ((v - lo) / range * 255.0).round() as u8 } else { 0 })
        .collect()
}

pub fn dump_features(args: &DumpArgs) -> CliResult {
    let stage: Stage = args.stage.parse()?;
    let model = load_model(&args.checkpoint)?;
    let image = GrayImage::load(&args.image)?;
    let maps = model.dump_feature_maps(&image_tensor::<f32>(&image), stage)?;
    let &[_, c, h, w] = maps.shape() else { unreachable!("feature maps are [N,C,H,W]") };
    fs::create_dir_all(&args.out)?;
    for (ch, plane) in maps.data().chunks_exact(h * w).enumerate() {
        GrayImage::new(w, h, normalize(plane))?.save(args.out.join(format!("{stage}_{ch}.pgm")))?;
    }
    let raw: Vec<u8> = maps.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    let raw_path = args.out.join(format!("{stage}.f32"));
    fs::write(&raw_path, raw)?;
    println!("{c} channels of {h}x{w} written to {}; raw little-endian f32 in {}", args.out.display(), raw_path.display());
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> CliResult {
    let fault = args.inject_fault.map(|InjectedFault::Conv2d| Fault::Conv2dWeights);
    let report = match args.scale {
        Scale::Ops => check_ops(args.seed, fault)?,
        Scale::Model => check_model(args.seed)?,
    };
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Gradcheck(report.failures()))
    }
}
