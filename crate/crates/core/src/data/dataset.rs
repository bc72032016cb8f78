//! Cover/stego pairs, splits, pair-aware batching and the manifest format.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dihedral, GrayImage};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!(
                "unknown split `{other}`, expected train, validation or test"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Augmentation {
    #[default]
    None,
    /// All eight dihedral transforms of every training pair.
    Dihedral8,
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Augmentation::None => "none",
            Augmentation::Dihedral8 => "dihedral8",
        })
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Augmentation::None),
            "dihedral8" => Ok(Augmentation::Dihedral8),
            other => Err(Error::InvalidConfig(format!(
                "unknown augmentation `{other}`, expected none or dihedral8"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub cover: GrayImage,
    pub stego: GrayImage,
    pub split: Split,
}

impl ImagePair {
    /// True when the stego image differs from the cover by at most 1 everywhere.
    pub fn is_plus_minus_one(&self) -> bool {
        self.cover.pixels().iter().zip(self.stego.pixels()).all(|(&c, &s)| c.abs_diff(s) <= 1)
    }
}

/// One (possibly transformed) training example: a pair index plus the
/// dihedral transform applied to both of its images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub pair: usize,
    pub transform: Dihedral,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairedDataset {
    pairs: Vec<ImagePair>,
    pub augmentation: Augmentation,
}

impl PairedDataset {
    /// Ids must be unique, so a pair (and therefore its cover and stego)
    /// belongs to exactly one split. Cover and stego must share a size.
    pub fn new(pairs: Vec<ImagePair>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &pairs {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate pair id `{}`", p.id)));
            }
            if p.id.is_empty() || p.id.contains(char::is_whitespace) {
                return Err(Error::InvalidConfig(format!("pair id `{}` must be a non-empty word", p.id)));
            }
            if (p.cover.width(), p.cover.height()) != (p.stego.width(), p.stego.height()) {
                return Err(Error::InvalidShape(format!(
                    "pair `{}`: cover is {:?} but stego is {:?}",
                    p.id, p.cover, p.stego
                )));
            }
        }
        Ok(Self { pairs, augmentation: Augmentation::None })
    }

    pub fn with_augmentation(mut self, augmentation: Augmentation) -> Self {
        self.augmentation = augmentation;
        self
    }

    pub fn pairs(&self) -> &[ImagePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.pairs.iter().filter(|p| p.split == split).count()
    }

    /// Examples of a split. Augmentation multiplies the training split by 8
    /// and leaves validation and test untouched.
    pub fn samples(&self, split: Split) -> Vec<Sample> {
        let transforms: &[Dihedral] = match (split, self.augmentation) {
            (Split::Train, Augmentation::Dihedral8) => &Dihedral::ALL,
            _ => &[Dihedral::IDENTITY],
        };
        self.pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.split == split)
            .flat_map(|(i, _)| transforms.iter().map(move |&t| Sample { pair: i, transform: t }))
            .collect()
    }

    /// Cover and stego of a sample, both under the sample's transform.
    pub fn materialize(&self, sample: Sample) -> (GrayImage, GrayImage) {
        let p = &self.pairs[sample.pair];
        (sample.transform.apply(&p.cover), sample.transform.apply(&p.stego))
    }

    /// Stacks samples into a batch ordered cover, stego, cover, stego, ...
    /// with labels 0 and 1.
    pub fn assemble<T: Scalar>(&self, samples: &[Sample]) -> Result<Batch<T>> {
        let first = samples
            .first()
            .ok_or_else(|| Error::input("batch", "cannot assemble an empty batch"))?;
        let (c0, _) = self.materialize(*first);
        let (w, h) = (c0.width(), c0.height());
        let mut data = Vec::with_capacity(samples.len() * 2 * w * h);
        let mut labels = Vec::with_capacity(samples.len() * 2);
        for &s in samples {
            let (cover, stego) = self.materialize(s);
            if (cover.width(), cover.height()) != (w, h) {
                return Err(Error::input(
                    "batch",
                    format!("pair `{}` is {cover:?}, batch images are {w}x{h}", self.pairs[s.pair].id),
                ));
            }
            for (img, label) in [(cover, 0), (stego, 1)] {
                data.extend(img.pixels().iter().map(|&v| T::from_f64_lossy(v as f64)));
                labels.push(label);
            }
        }
        Ok(Batch { images: Tensor::from_data(&[labels.len(), 1, h, w], data)?, labels })
    }
}

/// A stacked minibatch `[B,1,H,W]` with per-image labels (0 cover, 1 stego).
#[derive(Clone, Debug)]
pub struct Batch<T: Scalar> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Converts one image to a `[1,1,H,W]` tensor of raw pixel values.
pub fn image_tensor<T: Scalar>(image: &GrayImage) -> Tensor<T> {
    let data = image.pixels().iter().map(|&v| T::from_f64_lossy(v as f64)).collect();
    Tensor::from_data(&[1, 1, image.height(), image.width()], data).expect("pixel count matches shape")
}

/// Shuffles `samples` with `seed` and cuts it into batches of
/// `batch_size / 2` pairs, dropping the short remainder.
pub fn make_batches(samples: &[Sample], batch_size: usize, seed: u64) -> Result<Vec<Vec<Sample>>> {
    if batch_size == 0 || !batch_size.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "batch size must be a positive even number, got {batch_size}"
        )));
    }
    let mut order = samples.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks_exact(batch_size / 2).map(<[Sample]>::to_vec).collect())
}

/// One manifest line: `<id> <cover-path> <stego-path> <split>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub cover: PathBuf,
    pub stego: PathBuf,
    pub split: Split,
}

/// Parses a manifest. Blank lines and lines starting with `#` are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            let [id, cover, stego, split] = fields[..] else {
                return Err(Error::format(
                    offset,
                    format!("manifest line needs 4 fields `<id> <cover> <stego> <split>`, got {}", fields.len()),
                ));
            };
            let split = split.parse().map_err(|e: Error| Error::format(offset, e.to_string()))?;
            entries.push(ManifestEntry { id: id.into(), cover: cover.into(), stego: stego.into(), split });
        }
        offset += line.len();
    }
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{} {} {} {}\n", e.id, e.cover.display(), e.stego.display(), e.split))
        .collect()
}

/// Loads every pair listed in a manifest file; relative paths resolve
/// against the manifest's directory.
pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<PairedDataset> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&std::fs::read_to_string(manifest)?)?;
    let load = |p: &Path| {
        let path = base.join(p);
        GrayImage::load(&path).map_err(|e| match e {
            Error::Format { offset, msg } => Error::format(offset, format!("{}: {msg}", path.display())),
            Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
            other => other,
        })
    };
    let pairs = entries
        .into_iter()
        .map(|e| Ok(ImagePair { cover: load(&e.cover)?, stego: load(&e.stego)?, id: e.id, split: e.split }))
        .collect::<Result<Vec<_>>>()?;
    PairedDataset::new(pairs)
}
