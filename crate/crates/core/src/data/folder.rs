use std::fs;
use std::path::{Path, PathBuf};

use super::dataset::{Dataset, Sample, Split};
use crate::error::{ForgeError, Result};
use crate::tensor::Tensor;

/// Result of scanning an image folder.
#[derive(Debug, Clone)]
pub struct FolderDataset {
    pub dataset: Dataset,
    /// Class names in index order.
    pub classes: Vec<String>,
    /// Class directories without any image.
    pub empty_classes: Vec<String>,
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v = fs::read_dir(dir)
        .map_err(|e| ingest(dir, e.to_string()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    v.sort();
    Ok(v)
}

fn ingest(path: &Path, message: impl Into<String>) -> ForgeError {
    ForgeError::Ingest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Decodes an 8-bit image into a `[3, H, W]` tensor in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| ingest(path, e.to_string()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Loads `root/<class>/<image>` with classes indexed alphabetically.
pub fn load_image_folder(root: &Path, split: Split) -> Result<FolderDataset> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(ingest(root, "no class subdirectories"));
    }
    let mut classes = Vec::new();
    let mut empty_classes = Vec::new();
    let mut samples = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let files: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| is_image(p)).collect();
        if files.is_empty() {
            log::warn!("class directory {} contains no images", dir.display());
            empty_classes.push(name.clone());
        }
        for f in files {
            samples.push(Sample {
                image: load_image(&f)?,
                label,
            });
        }
        classes.push(name);
    }
    Ok(FolderDataset {
        dataset: Dataset::new(samples, classes.len(), split)?,
        classes,
        empty_classes,
    })
}
