use serde::{Deserialize, Serialize};

use super::augment::AugmentationSpec;
use super::normalize::{normalize_image, NormalizationSpec};
use crate::error::{ForgeError, Result};
use crate::tensor::{Rng, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One `[3, H, W]` image with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize, split: Split) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
            return Err(ForgeError::Index {
                what: "label",
                index: s.label,
                size: num_classes,
            });
        }
        Ok(Self {
            samples,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Concatenation of two datasets over the same label space.
    pub fn merged(&self, other: &Dataset) -> Result<Dataset> {
        if self.num_classes != other.num_classes {
            return Err(ForgeError::contract("cannot merge datasets with different class counts"));
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Dataset::new(samples, self.num_classes, self.split)
    }
}

/// Augmentation followed by normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    pub normalization: NormalizationSpec,
    pub augmentation: AugmentationSpec,
}

impl Preprocess {
    pub fn new(normalization: NormalizationSpec, augmentation: AugmentationSpec) -> Self {
        Self {
            normalization,
            augmentation,
        }
    }

    pub fn train_view(&self, img: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>> {
        normalize_image(&self.augmentation.train_view(img, rng)?, &self.normalization)
    }

    pub fn eval_view(&self, img: &Tensor<f32>) -> Result<Tensor<f32>> {
        normalize_image(&self.augmentation.eval_view(img)?, &self.normalization)
    }

    /// Stacks the selected samples into a `[b, 3, S, S]` batch. `rng` selects
    /// training augmentation; `None` gives the evaluation view.
    pub fn batch<T: Scalar>(
        &self,
        data: &Dataset,
        indices: &[usize],
        mut rng: Option<&mut Rng>,
    ) -> Result<(Tensor<T>, Vec<usize>)> {
        let s = self.augmentation.target_size;
        let mut out = Vec::with_capacity(indices.len() * 3 * s * s);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let sample = data.samples.get(i).ok_or(ForgeError::Index {
                what: "sample",
                index: i,
                size: data.len(),
            })?;
            let view = match rng.as_deref_mut() {
                Some(r) => self.train_view(&sample.image, r)?,
                None => self.eval_view(&sample.image)?,
            };
            out.extend(view.data().iter().map(|&v| T::of(v as f64)));
            labels.push(sample.label);
        }
        Ok((Tensor::new(&[indices.len(), 3, s, s], out)?, labels))
    }
}
