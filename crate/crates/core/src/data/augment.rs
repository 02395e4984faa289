use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::tensor::{Rng, Tensor};

fn dims(img: &Tensor<f32>, op: &'static str) -> Result<(usize, usize, usize)> {
    match img.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(ForgeError::shape(op, s, &[3, 0, 0])),
    }
}

/// Bilinear resize with half-pixel centers; `target` is the output side length.
pub fn resize(img: &Tensor<f32>, target: usize) -> Result<Tensor<f32>> {
    let (_, h, w) = dims(img, "resize")?;
    crop_resize(img, 0, 0, h, w, target)
}

/// Crops the `ch x cw` window at `(top, left)` and resamples it to `target x target`.
pub fn crop_resize(
    img: &Tensor<f32>,
    top: usize,
    left: usize,
    ch: usize,
    cw: usize,
    target: usize,
) -> Result<Tensor<f32>> {
    let (c, h, w) = dims(img, "crop_resize")?;
    if target == 0 {
        return Err(ForgeError::contract("resize target must be at least one pixel"));
    }
    if ch == 0 || cw == 0 || top + ch > h || left + cw > w {
        return Err(ForgeError::contract(format!(
            "crop {ch}x{cw} at ({top}, {left}) outside {h}x{w} image"
        )));
    }
    let src = img.data();
    let sy = ch as f64 / target as f64;
    let sx = cw as f64 / target as f64;
    let axis = |i: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let p = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, p - lo as f64)
    };
    let ys: Vec<_> = (0..target).map(|i| axis(i, sy, ch)).collect();
    let xs: Vec<_> = (0..target).map(|i| axis(i, sx, cw)).collect();
    let mut out = Vec::with_capacity(c * target * target);
    for k in 0..c {
        let plane = &src[k * h * w..(k + 1) * h * w];
        let at = |y: usize, x: usize| plane[(top + y) * w + left + x] as f64;
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let v = if fy == 0.0 && fx == 0.0 {
                    at(y0, x0)
                } else {
                    let a = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                    let b = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                    a * (1.0 - fy) + b * fy
                };
                out.push(v as f32);
            }
        }
    }
    Tensor::new(&[c, target, target], out)
}

/// Crop window `(top, left, height, width)` drawn with area fraction in
/// `[0.08, 1]` and log-uniform aspect ratio in `[3/4, 4/3]`. Falls back to the
/// full image after ten rejected draws.
pub fn sample_crop(h: usize, w: usize, rng: &mut Rng) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let (lo, hi) = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    for _ in 0..10 {
        let target = area * rng.uniform_range(0.08, 1.0);
        let aspect = rng.uniform_range(lo, hi).exp();
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let top = rng.below(h - ch + 1);
            let left = rng.below(w - cw + 1);
            return (top, left, ch, cw);
        }
    }
    (0, 0, h, w)
}

pub fn random_resized_crop(img: &Tensor<f32>, target: usize, rng: &mut Rng) -> Result<Tensor<f32>> {
    let (_, h, w) = dims(img, "random_resized_crop")?;
    let (top, left, ch, cw) = sample_crop(h, w, rng);
    crop_resize(img, top, left, ch, cw, target)
}

/// Mirrors the width axis with probability `p`.
pub fn horizontal_flip(img: &Tensor<f32>, rng: &mut Rng, p: f64) -> Result<Tensor<f32>> {
    let (_, _, w) = dims(img, "horizontal_flip")?;
    if !rng.bernoulli(p) {
        return Ok(img.clone());
    }
    let data = img
        .data()
        .chunks(w)
        .flat_map(|row| row.iter().rev().copied())
        .collect();
    Tensor::new(img.shape(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentPolicy {
    /// Resize only.
    VtabStyle,
    /// Random resized crop and horizontal flip at train time.
    FgvcStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub policy: AugmentPolicy,
    pub target_size: usize,
}

impl AugmentationSpec {
    pub fn vtab(target_size: usize) -> Self {
        Self {
            policy: AugmentPolicy::VtabStyle,
            target_size,
        }
    }

    pub fn fgvc(target_size: usize) -> Self {
        Self {
            policy: AugmentPolicy::FgvcStyle,
            target_size,
        }
    }

    /// Training view of an image.
    pub fn train_view(&self, img: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>> {
        match self.policy {
            AugmentPolicy::VtabStyle => self.eval_view(img),
            AugmentPolicy::FgvcStyle => {
                let c = random_resized_crop(img, self.target_size, rng)?;
                horizontal_flip(&c, rng, 0.5)
            }
        }
    }

    /// Evaluation view: resize only.
    pub fn eval_view(&self, img: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (_, h, w) = dims(img, "resize")?;
        if h == self.target_size && w == self.target_size {
            return Ok(img.clone());
        }
        resize(img, self.target_size)
    }
}
