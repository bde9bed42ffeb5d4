//! Samples, synthetic scene generation, PNG I/O, manifests and
//! augmentation.

pub mod augment;
pub mod io;
pub mod synth;

use tscnet_tensor::Tensor;

pub use augment::{augment, Aug};
pub use io::{load_sample, read_manifest, save_map, save_sample, write_manifest, ManifestEntry};
pub use synth::{generate_dataset, generate_sample, SynthConfig};

/// One image with its binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `3×S×S`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `1×S×S`, values in `{0, 1}`.
    pub mask: Tensor<f32>,
}

impl Sample {
    pub fn size(&self) -> usize {
        self.image.dims()[1]
    }
}
