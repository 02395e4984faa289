use super::config::{stochastic_depth_rate, BackboneConfig};
use super::layers::{layer_forward, ForwardCtx, LayerNorm, Linear, Module, TransformerLayer};
use crate::autodiff::{Tape, Var};
use crate::error::{ForgeError, Result};
use crate::tensor::{sample_truncated_normal, ParamKind, Parameter, Rng, Scalar, Tensor};

/// Pre-norm vision transformer without a classification head.
#[derive(Debug, Clone)]
pub struct VisionTransformer<T> {
    pub config: BackboneConfig,
    pub patch_embed: Linear<T>,
    pub cls_token: Parameter<T>,
    pub pos_embed: Parameter<T>,
    pub layers: Vec<TransformerLayer<T>>,
    pub norm: LayerNorm<T>,
}

pub const BACKBONE_PREFIX: &str = "backbone";

impl<T: Scalar> VisionTransformer<T> {
    /// Random initialization: truncated normal (sigma 0.02) weights and
    /// embeddings, zero biases, unit layer norms.
    pub fn new(config: BackboneConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let p = BACKBONE_PREFIX;
        let patch_embed = Linear::trunc_normal(&format!("{p}.patch_embed"), config.patch_dim(), d, 0.02, rng);
        let cls_token = Parameter::new(
            format!("{p}.cls_token"),
            sample_truncated_normal(rng, 0.02, 0.04, &[d])?,
            ParamKind::Embedding,
        );
        let pos_embed = Parameter::new(
            format!("{p}.pos_embed"),
            sample_truncated_normal(rng, 0.02, 0.04, &[config.num_tokens(), d])?,
            ParamKind::Embedding,
        );
        let layers = (0..config.num_layers)
            .map(|i| TransformerLayer::init(p, i, d, config.num_heads, config.ffn_dim(), rng))
            .collect();
        Ok(Self {
            patch_embed,
            cls_token,
            pos_embed,
            layers,
            norm: LayerNorm::new(&format!("{p}.norm"), d),
            config,
        })
    }

    pub fn drop_rate(&self, layer_index: usize) -> f64 {
        stochastic_depth_rate(layer_index, self.config.num_layers, self.config.drop_path_max)
    }

    /// Flattens non-overlapping patches of `[b, 3, H, W]` images into `[b, P, 3 p^2]`.
    pub fn patchify<'t>(&self, images: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = images.shape();
        let c = &self.config;
        if s.len() != 4 || s[1] != 3 || s[2] != c.image_size || s[3] != c.image_size {
            return Err(ForgeError::shape(
                "patch_embed",
                &s,
                &[3, c.image_size, c.image_size],
            ));
        }
        let (b, g, p) = (s[0], c.grid(), c.patch_size);
        images
            .reshape(&[b, 3, g, p, g, p])?
            .permute(&[0, 2, 4, 1, 3, 5])?
            .reshape(&[b, g * g, 3 * p * p])
    }

    /// Token embedding of a batch: projected patches, CLS prepended, positions added.
    pub fn embed<'t>(&self, tape: &'t Tape<T>, images: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = images.shape()[0];
        let d = self.config.hidden_dim;
        let patches = self.patch_embed.forward(tape, self.patchify(images)?)?;
        let cls = tape
            .param(&self.cls_token)
            .reshape(&[1, 1, d])?
            .broadcast_to(&[b, 1, d])?;
        Var::concat(&[cls, patches], 1)?.add(tape.param(&self.pos_embed))
    }

    /// Embedding of a single `[3, H, W]` image as `[n, d]` tokens.
    pub fn patch_embed<'t>(&self, tape: &'t Tape<T>, image: &Tensor<T>) -> Result<Var<'t, T>> {
        let s = image.shape();
        if s.len() != 3 {
            return Err(ForgeError::shape("patch_embed", s, &[3, self.config.image_size, self.config.image_size]));
        }
        let batched = image.clone().reshape(&[1, s[0], s[1], s[2]])?;
        let tokens = self.embed(tape, tape.constant(batched))?;
        tokens.reshape(&[self.config.num_tokens(), self.config.hidden_dim])
    }

    /// Runs all layers and the final norm; returns `[b, n, d]` tokens.
    pub fn forward_tokens<'t>(
        &self,
        tape: &'t Tape<T>,
        images: Var<'t, T>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var<'t, T>> {
        let mut x = self.embed(tape, images)?;
        for layer in &self.layers {
            x = layer_forward(tape, x, layer, self.drop_rate(layer.index), ctx)?;
        }
        self.norm.forward(tape, x)
    }

    /// Final-normalized CLS features `[b, d]`.
    pub fn forward_features<'t>(
        &self,
        tape: &'t Tape<T>,
        images: Var<'t, T>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var<'t, T>> {
        let x = self.forward_tokens(tape, images, ctx)?;
        cls_features(x)
    }
}

pub(crate) fn cls_features<'t, T: Scalar>(tokens: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = tokens.shape();
    tokens.narrow(1, 0, 1)?.reshape(&[s[0], s[2]])
}

impl<T: Scalar> Module<T> for VisionTransformer<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = self.patch_embed.params();
        v.push(&self.cls_token);
        v.push(&self.pos_embed);
        for l in &self.layers {
            v.extend(l.params());
        }
        v.extend(self.norm.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.patch_embed.params_mut();
        v.push(&mut self.cls_token);
        v.push(&mut self.pos_embed);
        for l in &mut self.layers {
            v.extend(l.params_mut());
        }
        v.extend(self.norm.params_mut());
        v
    }
}
