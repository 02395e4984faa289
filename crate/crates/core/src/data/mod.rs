//! Image preprocessing, synthetic transfer tasks and folder ingestion.

mod augment;
mod dataset;
mod folder;
mod normalize;
mod synth;

pub use augment::{
    crop_resize, horizontal_flip, random_resized_crop, resize, sample_crop, AugmentPolicy,
    AugmentationSpec,
};
pub use dataset::{Dataset, Preprocess, Sample, Split};
pub use folder::{load_image, load_image_folder, FolderDataset};
pub use normalize::{normalize_image, NormalizationKind, NormalizationSpec};
pub use synth::{
    prototypes, render, synth_task, synth_transfer_pair, Prototype, Shift, SynthSpec, TaskSplits,
    TransferPair,
};

#[cfg(test)]
mod tests;
