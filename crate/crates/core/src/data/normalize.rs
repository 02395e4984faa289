use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationKind {
    Imagenet,
    Inception,
    Custom,
}

/// Per-channel input standardization `(x - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NormalizationSpec {
    pub kind: NormalizationKind,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormalizationSpec {
    pub fn imagenet() -> Self {
        Self {
            kind: NormalizationKind::Imagenet,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }

    /// Maps `[0, 1]` inputs onto `[-1, 1]`.
    pub fn inception() -> Self {
        Self {
            kind: NormalizationKind::Inception,
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }

    pub fn custom(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(ForgeError::config("normalization std must be positive and finite"));
        }
        Ok(Self {
            kind: NormalizationKind::Custom,
            mean,
            std,
        })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            NormalizationKind::Imagenet => "imagenet",
            NormalizationKind::Inception => "inception",
            NormalizationKind::Custom => "custom",
        }
    }
}

impl fmt::Display for NormalizationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NormalizationKind::Custom => write!(f, "custom({:?},{:?})", self.mean, self.std),
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for NormalizationSpec {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imagenet" => Ok(Self::imagenet()),
            "inception" => Ok(Self::inception()),
            other => Err(ForgeError::config(format!(
                "unknown normalization `{other}` (expected imagenet or inception)"
            ))),
        }
    }
}

impl TryFrom<String> for NormalizationSpec {
    type Error = ForgeError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<NormalizationSpec> for String {
    fn from(n: NormalizationSpec) -> String {
        n.to_string()
    }
}

/// Applies `spec` to a `[3, H, W]` image.
pub fn normalize_image(img: &Tensor<f32>, spec: &NormalizationSpec) -> Result<Tensor<f32>> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(ForgeError::shape("normalize_image", s, &[3, 0, 0]));
    }
    let plane = s[1] * s[2];
    let data = img
        .data()
        .chunks(plane)
        .zip(spec.mean.iter().zip(&spec.std))
        .flat_map(|(ch, (&m, &sd))| ch.iter().map(move |&v| ((v as f64 - m) / sd) as f32))
        .collect();
    Tensor::new(s, data)
}
