//! Label-preserving training augmentation.
//!
//! Each draw applies, in order: a permutation of the six palette colors
//! (color labels permuted alike), a symmetry of the square canvas (position
//! labels follow their anchors), and an integer translation in
//! `[-max_shift, max_shift]` per axis with white fill. Shape labels do not
//! depend on orientation, and shifts stay well inside a position cell.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{Color, FeatureId, Position, NUM_FEATURES};
use crate::image::RasterImage;

const WHITE: [u8; 3] = [255, 255, 255];

/// Element of the dihedral group of the square: optional transpose, then
/// optional horizontal and vertical mirror.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Symmetry {
    pub transpose: bool,
    pub flip_x: bool,
    pub flip_y: bool,
}

impl Symmetry {
    pub const IDENTITY: Symmetry = Symmetry {
        transpose: false,
        flip_x: false,
        flip_y: false,
    };

    /// Image point `(x, y)` on a canvas of side `n` to its transformed point.
    pub fn apply(self, x: f64, y: f64, n: f64) -> (f64, f64) {
        let (x, y) = if self.transpose { (y, x) } else { (x, y) };
        let x = if self.flip_x { n - x } else { x };
        let y = if self.flip_y { n - y } else { y };
        (x, y)
    }

    /// Inverse map on integer pixel indices `0..n`.
    fn source(self, x: i64, y: i64, n: i64) -> (i64, i64) {
        let y = if self.flip_y { n - 1 - y } else { y };
        let x = if self.flip_x { n - 1 - x } else { x };
        if self.transpose {
            (y, x)
        } else {
            (x, y)
        }
    }

    fn position(self, p: Position) -> Position {
        let (u, v) = p.anchor();
        let (u, v) = self.apply(u, v, 1.0);
        Position::ALL
            .into_iter()
            .find(|q| q.anchor() == (u, v))
            .expect("anchors are closed under the square's symmetries")
    }
}

/// `dihedral` draws from all eight symmetries; otherwise only the identity
/// and the horizontal mirror.
pub fn augment<R: Rng>(
    image: &RasterImage,
    target: &[u8; NUM_FEATURES],
    max_shift: u32,
    dihedral: bool,
    rng: &mut R,
) -> (RasterImage, [u8; NUM_FEATURES]) {
    let mut perm = Color::ALL;
    perm.shuffle(rng);
    let sym = if dihedral {
        Symmetry {
            transpose: rng.gen_bool(0.5),
            flip_x: rng.gen_bool(0.5),
            flip_y: rng.gen_bool(0.5),
        }
    } else {
        Symmetry {
            flip_x: rng.gen_bool(0.5),
            ..Symmetry::IDENTITY
        }
    };
    let s = max_shift as i64;
    let dx = rng.gen_range(-s..=s);
    let dy = rng.gen_range(-s..=s);

    let mut labels = *target;
    for (from, to) in Color::ALL.iter().zip(&perm) {
        labels[FeatureId::from(*to).index()] = target[FeatureId::from(*from).index()];
    }
    for p in Position::ALL {
        labels[FeatureId::from(sym.position(p)).index()] = target[FeatureId::from(p).index()];
    }

    let recolor = |px: [u8; 3]| -> [u8; 3] {
        Color::ALL
            .iter()
            .position(|c| c.rgb() == px)
            .map_or(px, |i| perm[i].rgb())
    };
    debug_assert_eq!(image.width, image.height);
    let n = image.width as i64;
    let mut out = RasterImage::white(image.width, image.height);
    for y in 0..n {
        for x in 0..n {
            let (tx, ty) = (x - dx, y - dy);
            if tx < 0 || ty < 0 || tx >= n || ty >= n {
                continue;
            }
            let (sx, sy) = sym.source(tx, ty, n);
            let px = image.pixel(sx as u32, sy as u32);
            if px != WHITE {
                out.set_pixel(x as u32, y as u32, recolor(px));
            }
        }
    }
    (out, labels)
}
