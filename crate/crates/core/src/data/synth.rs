//! Procedural textured covers for experiments without an image corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{embed_simulate, GrayImage, ImagePair, PairedDataset, Payload, Split};
use crate::error::{Error, Result};

/// Cover texture knobs. `grain` is the amplitude of per-pixel uniform noise
/// added on top of the smooth content; larger values hide ±1 changes better.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Texture {
    pub gratings: usize,
    pub grating_amplitude: f64,
    pub blob_amplitude: f64,
    pub grain: f64,
}

impl Default for Texture {
    fn default() -> Self {
        Self { gratings: 4, grating_amplitude: 18.0, blob_amplitude: 30.0, grain: 2.0 }
    }
}

/// Sum of random oriented gratings, bilinearly upsampled blobs and grain,
/// kept away from the 0 and 255 rails.
pub fn synthetic_cover(width: usize, height: usize, texture: &Texture, seed: u64) -> Result<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = rng.random_range(70.0..180.0);
    let gratings: Vec<(f64, f64, f64, f64)> = (0..texture.gratings)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let period = rng.random_range(3.0..24.0);
            let k = std::f64::consts::TAU / period;
            (k * theta.cos(), k * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random::<f64>())
        })
        .collect();
    const GRID: usize = 6;
    let blobs: Vec<f64> = (0..GRID * GRID).map(|_| rng.random_range(-1.0..1.0)).collect();
    let blob_at = |x: f64, y: f64| {
        let gx = x * (GRID - 1) as f64;
        let gy = y * (GRID - 1) as f64;
        let (x0, y0) = ((gx as usize).min(GRID - 2), (gy as usize).min(GRID - 2));
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let v = |i: usize, j: usize| blobs[j * GRID + i];
        (1.0 - fy) * ((1.0 - fx) * v(x0, y0) + fx * v(x0 + 1, y0)) + fy * ((1.0 - fx) * v(x0, y0 + 1) + fx * v(x0 + 1, y0 + 1))
    };
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = base;
            for &(kx, ky, phase, amp) in &gratings {
                v += texture.grating_amplitude * amp * (kx * xf + ky * yf + phase).sin();
            }
            v += texture.blob_amplitude
                * blob_at(xf / width.max(2).saturating_sub(1) as f64, yf / height.max(2).saturating_sub(1) as f64);
            if texture.grain > 0.0 {
                v += rng.random_range(-texture.grain..=texture.grain);
            }
            pixels.push(v.round().clamp(8.0, 247.0) as u8);
        }
    }
    GrayImage::new(width, height, pixels)
}

/// `cover + uniform integer noise in [-amplitude, amplitude]`, saturated.
pub fn noisy_stego(cover: &GrayImage, amplitude: u8, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stego = cover.clone();
    let a = amplitude as i16;
    for p in stego.pixels_mut() {
        *p = (*p as i16 + rng.random_range(-a..=a)).clamp(0, 255) as u8;
    }
    stego
}

/// How stego images are derived from synthetic covers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StegoKind {
    PlusMinusOne(Payload),
    /// Strong additive noise, used for overfitting sanity checks.
    Noise(u8),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub width: usize,
    pub height: usize,
    pub texture: Texture,
    pub stego: StegoKind,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(train: usize, validation: usize, test: usize, size: usize, stego: StegoKind, seed: u64) -> Self {
        Self { train, validation, test, width: size, height: size, texture: Texture::default(), stego, seed }
    }
}

/// Pair ids are `s00000`, `s00001`, ... in split order train, validation, test.
pub fn synthetic_dataset(spec: &SynthSpec) -> Result<PairedDataset> {
    let total = spec.train + spec.validation + spec.test;
    if total == 0 {
        return Err(Error::InvalidConfig("synthetic dataset needs at least one pair".into()));
    }
    let splits = std::iter::repeat_n(Split::Train, spec.train)
        .chain(std::iter::repeat_n(Split::Validation, spec.validation))
        .chain(std::iter::repeat_n(Split::Test, spec.test));
    let mut seeds = ChaCha8Rng::seed_from_u64(spec.seed);
    let pairs = splits
        .enumerate()
        .map(|(i, split)| {
            let (cover_seed, stego_seed) = (seeds.random(), seeds.random());
            let cover = synthetic_cover(spec.width, spec.height, &spec.texture, cover_seed)?;
            let stego = match spec.stego {
                StegoKind::PlusMinusOne(p) => embed_simulate(&cover, p, stego_seed),
                StegoKind::Noise(a) => noisy_stego(&cover, a, stego_seed),
            };
            Ok(ImagePair { id: format!("s{i:05}"), cover, stego, split })
        })
        .collect::<Result<Vec<_>>>()?;
    PairedDataset::new(pairs)
}
