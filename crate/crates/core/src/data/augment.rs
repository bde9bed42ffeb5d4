//! Lossless flips and quarter-turn rotations, applied identically to
//! image and mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tscnet_tensor::Tensor;

use super::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aug {
    Identity,
    FlipH,
    FlipV,
    Rot90,
    Rot180,
    Rot270,
}

impl Aug {
    pub const ALL: [Aug; 6] = [Aug::Identity, Aug::FlipH, Aug::FlipV, Aug::Rot90, Aug::Rot180, Aug::Rot270];

    pub fn choose(seed: u64) -> Aug {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Aug::ALL[rng.random_range(0..Aug::ALL.len())]
    }

    /// Source pixel `(y, x)` for output pixel `(y, x)` of an `n×n` plane.
    fn source(self, n: usize, y: usize, x: usize) -> (usize, usize) {
        let m = n - 1;
        match self {
            Aug::Identity => (y, x),
            Aug::FlipH => (y, m - x),
            Aug::FlipV => (m - y, x),
            // Counter-clockwise quarter turn.
            Aug::Rot90 => (x, m - y),
            Aug::Rot180 => (m - y, m - x),
            Aug::Rot270 => (m - x, y),
        }
    }

    /// Applies to a `C×n×n` tensor.
    pub fn apply(self, t: &Tensor<f32>) -> Tensor<f32> {
        let (c, h, w) = t.chw().expect("C×H×W tensor");
        assert_eq!(h, w, "augmentation needs square planes");
        if self == Aug::Identity {
            return t.clone();
        }
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for ch in 0..c {
            let base = ch * h * w;
            for y in 0..h {
                for x in 0..w {
                    let (sy, sx) = self.source(h, y, x);
                    out[base + y * w + x] = src[base + sy * w + sx];
                }
            }
        }
        Tensor::new(t.dims().to_vec(), out).expect("same dims")
    }
}

/// A seeded random choice among identity, flips and rotations.
pub fn augment(sample: &Sample, seed: u64) -> Sample {
    let aug = Aug::choose(seed);
    Sample { id: sample.id.clone(), image: aug.apply(&sample.image), mask: aug.apply(&sample.mask) }
}
