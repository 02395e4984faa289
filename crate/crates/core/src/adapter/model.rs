use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::module::{init_adapter, AdapterModule};
use super::position::{wire_attention, wire_position};
use super::preset::AdapterPlacement;
use crate::autodiff::{Tape, Var};
use crate::error::{ForgeError, Result};
use crate::tensor::{ParamKind, Parameter, Rng, Scalar, Tensor};
use crate::vit::{
    attention_section, cls_features, ffn_forward, apply_stochastic_depth, read_checkpoint,
    write_checkpoint, BackboneConfig, ForwardCtx, Linear, Module, VisionTransformer,
};

pub const ADAPTER_PREFIX: &str = "adapter";
pub const HEAD_PREFIX: &str = "head";

/// Adapters attached to one transformer layer.
#[derive(Debug, Clone, Default)]
pub struct LayerAdapters<T> {
    pub attn: Option<AdapterModule<T>>,
    pub ffn: Option<AdapterModule<T>>,
}

/// Backbone, optional adapters and a linear classification head.
#[derive(Debug, Clone)]
pub struct AdaptedModel<T> {
    pub backbone: VisionTransformer<T>,
    pub placement: Option<AdapterPlacement>,
    pub adapters: Vec<LayerAdapters<T>>,
    pub head: Linear<T>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    backbone: BackboneConfig,
    placement: Option<AdapterPlacement>,
    num_classes: usize,
    adapter_only: bool,
}

impl<T: Scalar> AdaptedModel<T> {
    /// Attaches fresh adapters (if any) and a new head to `backbone`.
    pub fn new(
        backbone: VisionTransformer<T>,
        placement: Option<AdapterPlacement>,
        num_classes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(ForgeError::config("number of classes must be positive"));
        }
        let d = backbone.config.hidden_dim;
        let head = Linear::trunc_normal(HEAD_PREFIX, d, num_classes, 0.01, rng);
        let mut adapters = Vec::with_capacity(backbone.layers.len());
        for i in 0..backbone.layers.len() {
            let mut la = LayerAdapters::default();
            if let Some(p) = &placement {
                let base = format!("{ADAPTER_PREFIX}.layers.{i}");
                if p.attention {
                    la.attn = Some(init_adapter(&p.adapter, d, &format!("{base}.attn"), rng)?);
                }
                la.ffn = Some(init_adapter(&p.adapter, d, &format!("{base}.ffn"), rng)?);
            }
            adapters.push(la);
        }
        Ok(Self {
            backbone,
            placement,
            adapters,
            head,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head.fan_out()
    }

    /// Freezes the backbone, then re-enables backbone norms if the placement asks for it.
    pub fn freeze_backbone(&mut self) {
        self.backbone.set_trainable(false);
        if self.placement.as_ref().is_some_and(|p| p.tune_backbone_norms) {
            for p in self.backbone.params_mut() {
                if p.kind == ParamKind::Norm {
                    p.set_trainable(true);
                }
            }
        }
    }

    pub fn adapter_params(&self) -> Vec<&Parameter<T>> {
        let mut v = Vec::new();
        for la in &self.adapters {
            for m in la.attn.iter().chain(la.ffn.iter()) {
                v.extend(m.params());
            }
        }
        v
    }

    /// Logits `[b, c]` for `[b, 3, H, W]` images.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        images: Var<'t, T>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var<'t, T>> {
        let bb = &self.backbone;
        let mut x = bb.embed(tape, images)?;
        for (layer, la) in bb.layers.iter().zip(&self.adapters) {
            let rate = bb.drop_rate(layer.index);
            x = match &la.attn {
                Some(a) => wire_attention(tape, x, layer, a, rate, ctx)?,
                None => attention_section(tape, x, layer, rate, ctx)?,
            };
            x = match &la.ffn {
                Some(a) => wire_position(tape, x, layer, a, a.config.position, rate, ctx)?,
                None => {
                    let f = ffn_forward(tape, layer.ln2.forward(tape, x)?, layer)?;
                    apply_stochastic_depth(f, rate, ctx)?.add(x)?
                }
            };
        }
        let feats = cls_features(bb.norm.forward(tape, x)?)?;
        self.head.forward(tape, feats)
    }

    /// Convenience wrapper building a fresh tape over a batch tensor.
    pub fn logits(&self, images: &Tensor<T>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let out = self.forward(&tape, tape.constant(images.clone()), ctx)?;
        Ok(out.value())
    }

    fn meta(&self, adapter_only: bool) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(ModelMeta {
            backbone: self.backbone.config.clone(),
            placement: self.placement.clone(),
            num_classes: self.num_classes(),
            adapter_only,
        })?)
    }

    /// Writes every parameter.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, self.meta(false)?, &self.params())
    }

    /// Writes only adapter and head parameters.
    pub fn save_adapter(&self, path: &Path) -> Result<()> {
        let mut ps = self.adapter_params();
        ps.extend(self.head.params());
        write_checkpoint(path, self.meta(true)?, &ps)
    }

    /// Rebuilds a model from a full checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        let data = read_checkpoint::<T>(path)?;
        let meta: ModelMeta = serde_json::from_value(data.meta)
            .map_err(|e| ForgeError::Checkpoint(format!("bad model metadata: {e}")))?;
        if meta.adapter_only {
            return Err(ForgeError::Checkpoint(
                "adapter-only checkpoint needs a backbone; use load_adapter".into(),
            ));
        }
        let mut rng = Rng::new(0);
        let backbone = VisionTransformer::new(meta.backbone, &mut rng)?;
        let mut model = Self::new(backbone, meta.placement, meta.num_classes, &mut rng)?;
        model.overwrite(data.tensors, true)?;
        Ok(model)
    }

    /// Replaces adapter and head parameters with those stored at `path`.
    pub fn load_adapter(&mut self, path: &Path) -> Result<()> {
        let data = read_checkpoint::<T>(path)?;
        let meta: ModelMeta = serde_json::from_value(data.meta)
            .map_err(|e| ForgeError::Checkpoint(format!("bad model metadata: {e}")))?;
        if meta.placement != self.placement || meta.num_classes != self.num_classes() {
            return Err(ForgeError::Checkpoint(
                "adapter checkpoint does not match this model's placement or class count".into(),
            ));
        }
        self.overwrite(data.tensors, false)
    }

    fn overwrite(&mut self, tensors: Vec<crate::vit::StoredTensor<T>>, complete: bool) -> Result<()> {
        let mut by_name: HashMap<String, _> =
            tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        for p in self.params_mut() {
            match by_name.remove(&p.name) {
                Some(st) => {
                    if st.tensor.shape() != p.tensor.shape() {
                        return Err(ForgeError::Checkpoint(format!(
                            "tensor `{}` has shape {:?}, model expects {:?}",
                            p.name,
                            st.tensor.shape(),
                            p.tensor.shape()
                        )));
                    }
                    p.tensor = st.tensor;
                    p.set_trainable(st.trainable);
                }
                None if complete => {
                    return Err(ForgeError::Checkpoint(format!("missing tensor `{}`", p.name)))
                }
                None => {}
            }
        }
        if let Some(name) = by_name.keys().next() {
            return Err(ForgeError::Checkpoint(format!("unexpected tensor `{name}`")));
        }
        Ok(())
    }
}

impl<T: Scalar> Module<T> for AdaptedModel<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = self.backbone.params();
        v.extend(self.adapter_params());
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.backbone.params_mut();
        for la in &mut self.adapters {
            for m in la.attn.iter_mut().chain(la.ffn.iter_mut()) {
                v.extend(m.params_mut());
            }
        }
        v.extend(self.head.params_mut());
        v
    }
}
