use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stegnet_core::data::{
    embed_simulate, synthetic_dataset, write_manifest, GrayImage, ManifestEntry, Payload, Split, StegoKind,
    SynthSpec, Texture,
};

use crate::error::{CliError, CliResult};

/// Fractions of pairs assigned to train and validation; the rest is test.
const TRAIN_FRACTION: f64 = 0.4;
const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Args, Debug)]
pub struct EmbedArgs {
    /// Directory of cover PGMs.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for `cover/`, `stego/` and `manifest.txt`.
    #[arg(long)]
    pub out: PathBuf,
    /// Embedding rate in bits per pixel, in (0, 1].
    #[arg(long)]
    pub payload: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub train: usize,
    #[arg(long, default_value_t = 100)]
    pub val: usize,
    #[arg(long, default_value_t = 250)]
    pub test: usize,
    /// Side length of the square images.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// ±1 embedding rate in bits per pixel.
    #[arg(long, default_value_t = 1.0, conflicts_with = "noise")]
    pub payload: f64,
    /// Use stego = cover + uniform noise of this amplitude instead of ±1 embedding.
    #[arg(long)]
    pub noise: Option<u8>,
    /// Per-pixel grain amplitude of the covers.
    #[arg(long, default_value_t = Texture::default().grain)]
    pub grain: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn entry(id: &str, split: Split) -> ManifestEntry {
    let file = format!("{id}.pgm");
    ManifestEntry {
        id: id.to_string(),
        cover: Path::new("cover").join(&file),
        stego: Path::new("stego").join(&file),
        split,
    }
}

fn create_layout(out: &Path) -> CliResult {
    fs::create_dir_all(out.join("cover"))?;
    fs::create_dir_all(out.join("stego"))?;
    Ok(())
}

/// Seeded split labels: 40% train, 10% validation, 50% test.
fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let n_train = (n as f64 * TRAIN_FRACTION).round() as usize;
    let n_val = ((n as f64 * VALIDATION_FRACTION).round() as usize).min(n - n_train);
    let mut splits: Vec<Split> = std::iter::repeat_n(Split::Train, n_train)
        .chain(std::iter::repeat_n(Split::Validation, n_val))
        .chain(std::iter::repeat_n(Split::Test, n - n_train - n_val))
        .collect();
    splits.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5350_4c49_5453));
    splits
}

fn pgm_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot read input directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn embed(args: &EmbedArgs) -> CliResult {
    let payload = Payload::new(args.payload)?;
    let files = pgm_files(&args.input)?;
    if files.is_empty() {
        return Err(CliError::Usage(format!("no .pgm files in {}", args.input.display())));
    }
    create_layout(&args.out)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(args.seed);
    let mut done = Vec::new();
    let mut failed = 0;
    for path in &files {
        let image_seed: u64 = seeds.random();
        let id: String = path
            .file_stem()
            .map(|s| s.to_string_lossy().chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect())
            .unwrap_or_default();
        let result = GrayImage::load(path).and_then(|cover| {
            let e = entry(&id, Split::Train);
            cover.save(args.out.join(&e.cover))?;
            embed_simulate(&cover, payload, image_seed).save(args.out.join(&e.stego))?;
            Ok(())
        });
        match result {
            Ok(()) => done.push(id),
            Err(e) => {
                failed += 1;
                eprintln!("error: {}: {e}", path.display());
            }
        }
    }
    let entries: Vec<ManifestEntry> = done
        .iter()
        .zip(assign_splits(done.len(), args.seed))
        .map(|(id, split)| entry(id, split))
        .collect();
    fs::write(args.out.join("manifest.txt"), write_manifest(&entries))?;
    fs::write(
        args.out.join("embed.txt"),
        format!(
            "in = {}\nout = {}\npayload = {}\nseed = {}\n",
            args.input.display(),
            args.out.display(),
            args.payload,
            args.seed
        ),
    )?;
    println!("embedded {} images into {}", entries.len(), args.out.display());
    if failed > 0 {
        return Err(CliError::Embed(failed, files.len()));
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CliResult {
    let stego = match args.noise {
        Some(a) => StegoKind::Noise(a),
        None => StegoKind::PlusMinusOne(Payload::new(args.payload)?),
    };
    let mut spec = SynthSpec::new(args.train, args.val, args.test, args.size, stego, args.seed);
    spec.texture.grain = args.grain;
    let dataset = synthetic_dataset(&spec)?;
    create_layout(&args.out)?;
    let mut entries = Vec::with_capacity(dataset.len());
    for pair in dataset.pairs() {
        let e = entry(&pair.id, pair.split);
        pair.cover.save(args.out.join(&e.cover))?;
        pair.stego.save(args.out.join(&e.stego))?;
        entries.push(e);
    }
    fs::write(args.out.join("manifest.txt"), write_manifest(&entries))?;
    let stego_line = match args.noise {
        Some(a) => format!("noise = {a}"),
        None => format!("payload = {}", args.payload),
    };
    fs::write(
        args.out.join("synth.txt"),
        format!(
            "train = {}\nval = {}\ntest = {}\nsize = {}\n{stego_line}\ngrain = {}\nseed = {}\n",
            args.train, args.val, args.test, args.size, args.grain, args.seed
        ),
    )?;
    println!("wrote {} pairs to {}", entries.len(), args.out.display());
    Ok(())
}
