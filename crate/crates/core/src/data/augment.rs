//! The eight symmetries of the square.

use super::GrayImage;

/// Element of the dihedral group D4, indexed `0..8`.
///
/// Index `k` means: mirror horizontally (left-right) when `k >= 4`, then
/// rotate clockwise by `90 * (k % 4)` degrees. Index 0 is the identity and
/// index 2 the half turn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dihedral(u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);
    pub const ALL: [Dihedral; 8] =
        [Dihedral(0), Dihedral(1), Dihedral(2), Dihedral(3), Dihedral(4), Dihedral(5), Dihedral(6), Dihedral(7)];

    pub fn new(index: u8) -> Option<Self> {
        (index < 8).then_some(Self(index))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn mirrored(self) -> bool {
        self.0 >= 4
    }

    pub fn quarter_turns(self) -> u8 {
        self.0 % 4
    }

    pub fn apply(self, image: &GrayImage) -> GrayImage {
        let (w, h) = (image.width(), image.height());
        let (ow, oh) = if self.quarter_turns() % 2 == 1 { (h, w) } else { (w, h) };
        // Each output pixel pulls from the source position that maps onto it.
        GrayImage::from_fn(ow, oh, |x, y| {
            let (rx, ry) = match self.quarter_turns() {
                0 => (x, y),
                1 => (y, h - 1 - x),
                2 => (w - 1 - x, h - 1 - y),
                _ => (w - 1 - y, x),
            };
            let sx = if self.mirrored() { w - 1 - rx } else { rx };
            image.get(sx, ry)
        })
        .expect("dihedral transform preserves pixel count")
    }
}

/// All eight transforms of `image`, in [`Dihedral::ALL`] order.
pub fn augment_dihedral(image: &GrayImage) -> Vec<GrayImage> {
    Dihedral::ALL.iter().map(|t| t.apply(image)).collect()
}
