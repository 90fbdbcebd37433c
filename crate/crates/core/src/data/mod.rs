//! Dataset representation, PGM image I/O, the synthetic lesion generator
//! and client partitioning.

mod manifest;
mod pgm;
mod synth;

pub use manifest::{
    partition, split_indices, split_train_val, Manifest, ManifestEntry,
};
pub use pgm::{read_pgm, write_pgm};
pub use synth::{gen_synthetic, gen_synthetic_scenes, write_dataset, Ellipse, Scene, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One training example: a grayscale image in `[0, 1]` and its binary
/// mask, both `1x1xHxW`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub mask: Tensor,
}

impl Sample {
    pub fn new(image: Tensor, mask: Tensor) -> Result<Sample> {
        let (si, sm) = (image.shape(), mask.shape());
        if si.h != sm.h || si.w != sm.w {
            return Err(Error::shape(
                "sample",
                format!("image {} vs mask {} spatial dims", si, sm),
            ));
        }
        if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidData(format!(
                "mask contains non-binary value {v}"
            )));
        }
        Ok(Sample { image, mask })
    }
}
