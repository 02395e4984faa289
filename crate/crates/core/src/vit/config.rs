use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

/// Hyperparameters of the vision-transformer backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_expansion: usize,
    /// Stochastic-depth rate of the deepest layer; shallower layers scale linearly down to 0.
    pub drop_path_max: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl BackboneConfig {
    /// Desk-scale default: d=64, N=4, M=4, 32x32 images with 8x8 patches.
    pub fn toy() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            hidden_dim: 64,
            num_layers: 4,
            num_heads: 4,
            ffn_expansion: 4,
            drop_path_max: 0.1,
        }
    }

    /// ViT-B/16 at 224 px.
    pub fn vit_b16() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            hidden_dim: 768,
            num_layers: 12,
            num_heads: 12,
            ffn_expansion: 4,
            drop_path_max: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_expansion", self.ffn_expansion),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ForgeError::config(format!("backbone.{name} must be positive")));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(ForgeError::config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(ForgeError::config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(0.0..=1.0).contains(&self.drop_path_max) {
            return Err(ForgeError::config("drop_path_max must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Sequence length including the CLS token.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_expansion * self.hidden_dim
    }

    /// Parameter count of the backbone, classifier excluded.
    pub fn backbone_params(&self) -> usize {
        let d = self.hidden_dim;
        let f = self.ffn_dim();
        let embed = self.patch_dim() * d + d + d + self.num_tokens() * d;
        let layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d;
        embed + self.num_layers * layer + 2 * d
    }
}

/// Linearly increasing stochastic-depth rate: `max_rate * i / (N - 1)`.
pub fn stochastic_depth_rate(layer_index: usize, num_layers: usize, max_rate: f64) -> f64 {
    if num_layers < 2 {
        return 0.0;
    }
    max_rate * layer_index as f64 / (num_layers - 1) as f64
}
