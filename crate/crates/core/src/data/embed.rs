//! ±1 embedding simulator with LSB-matching change statistics.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GrayImage;
use crate::error::{Error, Result};

/// Relative payload in bits per pixel, within `(0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Payload(f64);

impl Payload {
    pub fn new(bpp: f64) -> Result<Self> {
        if bpp > 0.0 && bpp <= 1.0 {
            Ok(Self(bpp))
        } else {
            Err(Error::InvalidPayload(bpp))
        }
    }

    pub fn bpp(self) -> f64 {
        self.0
    }

    /// Number of positions visited in an image of `pixels` pixels.
    pub fn selected(self, pixels: usize) -> usize {
        ((self.0 * pixels as f64).floor() as usize).min(pixels)
    }
}

/// Visits `floor(payload * N)` distinct pixels; each one changes with
/// probability 1/2 by a uniformly signed ±1, forced inward at 0 and 255.
pub fn embed_simulate(cover: &GrayImage, payload: Payload, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stego = cover.clone();
    let n = cover.len();
    let px = stego.pixels_mut();
    for pos in index::sample(&mut rng, n, payload.selected(n)) {
        let (change, up) = (rng.random::<bool>(), rng.random::<bool>());
        if !change {
            continue;
        }
        px[pos] = match px[pos] {
            0 => 1,
            255 => 254,
            v if up => v + 1,
            v => v - 1,
        };
    }
    stego
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_range() {
        assert!(Payload::new(1.0).is_ok());
        for bad in [0.0, -0.1, 1.0001, f64::NAN] {
            assert!(matches!(Payload::new(bad), Err(Error::InvalidPayload(_))));
        }
    }

    #[test]
    fn tiny_payload_is_a_no_op() {
        let cover = GrayImage::from_fn(4, 4, |x, y| (x * 16 + y) as u8).unwrap();
        let p = Payload::new(0.01).unwrap();
        assert_eq!(p.selected(16), 0);
        assert_eq!(embed_simulate(&cover, p, 3), cover);
    }

    #[test]
    fn boundaries_move_inward() {
        let black = GrayImage::filled(16, 16, 0).unwrap();
        let stego = embed_simulate(&black, Payload::new(1.0).unwrap(), 11);
        assert!(stego.pixels().iter().all(|&v| v <= 1));
        assert!(stego.pixels().contains(&1));
        let white = GrayImage::filled(16, 16, 255).unwrap();
        let stego = embed_simulate(&white, Payload::new(1.0).unwrap(), 11);
        assert!(stego.pixels().iter().all(|&v| v >= 254));
    }

    #[test]
    fn deterministic_per_seed() {
        let cover = GrayImage::from_fn(16, 16, |x, y| (x * 7 + y * 3) as u8).unwrap();
        let p = Payload::new(0.5).unwrap();
        assert_eq!(embed_simulate(&cover, p, 5), embed_simulate(&cover, p, 5));
        assert_ne!(embed_simulate(&cover, p, 5), embed_simulate(&cover, p, 6));
    }

    #[test]
    fn mean_change_count_over_seeds() {
        let cover = GrayImage::filled(16, 16, 100).unwrap();
        let p = Payload::new(0.4).unwrap();
        assert_eq!(p.selected(256), 102);
        let runs = 10_000;
        let total: usize = (0..runs)
            .map(|seed| {
                let s = embed_simulate(&cover, p, seed);
                s.pixels().iter().filter(|&&v| v != 100).count()
            })
            .sum();
        let mean = total as f64 / runs as f64;
        assert!((mean - 51.0).abs() < 3.0, "mean changed count {mean}");
    }
}
