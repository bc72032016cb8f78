//! Image ingestion, the ±1 embedding simulator, dihedral augmentation and
//! pair-aware batching.

mod augment;
mod dataset;
mod embed;
mod pgm;
mod synth;

pub use augment::{augment_dihedral, Dihedral};
pub use dataset::{
    image_tensor, load_dataset, make_batches, parse_manifest, write_manifest, Augmentation, Batch, ImagePair,
    ManifestEntry, PairedDataset, Sample, Split,
};
pub use embed::{embed_simulate, Payload};
pub use pgm::{read_pgm, write_pgm, GrayImage};
pub use synth::{noisy_stego, synthetic_cover, synthetic_dataset, StegoKind, SynthSpec, Texture};
