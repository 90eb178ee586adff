//! Synthetic specimen data: scene generation, augmentation, datasets and
//! the netpbm files they are stored in.

mod image;

pub mod augment;
pub mod dataset;
pub mod generate;
pub mod morphology;
pub mod netpbm;

pub use augment::{augment, AugmentParams, AugmentationSpec, EraseSpec};
pub use dataset::{generate_dataset, generate_samples, ClassMix, DatasetConfig, DatasetManifest, Sample, SampleRecord, Split};
pub use generate::{generate_negative, generate_specimen, Background, SceneParams, SpecimenSpec};
pub use image::{Image, Mask};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Stacks images into an `[N, 3, H, W]` tensor scaled to [0, 1].
pub fn images_to_tensor(images: &[&Image]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::Data("empty image batch".into()));
    };
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if (img.width, img.height) != (w, h) {
            return Err(Error::Data(format!(
                "batch mixes {}x{} and {}x{} images",
                w, h, img.width, img.height
            )));
        }
        for c in 0..3 {
            data.extend(img.data.iter().skip(c).step_by(3).map(|&v| v as f32 / 255.0));
        }
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

/// Stacks masks into an `[N, 1, H, W]` tensor of 0/1.
pub fn masks_to_tensor(masks: &[&Mask]) -> Result<Tensor> {
    let Some(first) = masks.first() else {
        return Err(Error::Data("empty mask batch".into()));
    };
    let (w, h) = (first.width, first.height);
    if masks.iter().any(|m| (m.width, m.height) != (w, h)) {
        return Err(Error::Data("masks in a batch differ in size".into()));
    }
    let data = masks.iter().flat_map(|m| m.data.iter().map(|&v| v as f32)).collect();
    Tensor::new(vec![masks.len(), 1, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_layout_is_planar() {
        let img = Image::new(2, 1, vec![255, 0, 0, 0, 0, 255]).unwrap();
        let t = images_to_tensor(&[&img]).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }
}
