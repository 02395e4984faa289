use super::config::{AdapterConfig, Init, Scaling};
use crate::autodiff::{Tape, Var};
use crate::error::{ForgeError, Result};
use crate::tensor::{
    kaiming_uniform_bound, sample_kaiming_uniform, sample_normal, sample_truncated_normal,
    ParamKind, Parameter, Rng, Scalar, Tensor,
};
use crate::tensor::rng_uniform;
use crate::vit::{apply_dropout, ForwardCtx, LayerNorm, Linear, Module};

/// Parameter block of one bottleneck adapter.
#[derive(Debug, Clone)]
pub struct AdapterModule<T> {
    pub config: AdapterConfig,
    pub norm: Option<LayerNorm<T>>,
    pub down: Linear<T>,
    pub up: Linear<T>,
    /// `[1]` for layer-wise, `[d]` for channel-wise learned scaling.
    pub scale: Option<Parameter<T>>,
}

/// Builds an adapter for hidden size `d` under `prefix` (e.g. `adapter.layers.3.ffn`).
pub fn init_adapter<T: Scalar>(
    config: &AdapterConfig,
    d: usize,
    prefix: &str,
    rng: &mut Rng,
) -> Result<AdapterModule<T>> {
    config.validate()?;
    let r = config.rank;
    if d < r {
        return Err(ForgeError::config(format!("adapter rank {r} exceeds hidden dim {d}")));
    }
    let mut down = Linear::zeros(&format!("{prefix}.down"), d, r, config.use_bias);
    let mut up = Linear::zeros(&format!("{prefix}.up"), r, d, config.use_bias);
    match config.init {
        Init::Houlsby => {
            down.weight.tensor = sample_truncated_normal(rng, 0.01, 0.02, &[d, r])?;
            up.weight.tensor = sample_truncated_normal(rng, 0.01, 0.02, &[r, d])?;
        }
        Init::Bert => {
            down.weight.tensor = sample_normal(rng, 0.02, &[d, r]);
            up.weight.tensor = sample_normal(rng, 0.02, &[r, d]);
        }
        Init::Lora => {
            down.weight.tensor = sample_kaiming_uniform(rng, d, &[d, r])?;
            if let Some(b) = &mut down.bias {
                b.tensor = rng_uniform(rng, kaiming_uniform_bound(d), &[r])?;
            }
        }
        Init::ZeroDegenerate => {}
    }
    let norm = config
        .use_layernorm
        .then(|| LayerNorm::new(&format!("{prefix}.norm"), d));
    let scale = match config.scaling {
        Scaling::LearnedLayer => Some(Tensor::ones(&[1])),
        Scaling::LearnedChannel => Some(Tensor::ones(&[d])),
        Scaling::None | Scaling::Fixed(_) => None,
    }
    .map(|t| Parameter::new(format!("{prefix}.scale"), t, ParamKind::Scale));
    Ok(AdapterModule {
        config: config.clone(),
        norm,
        down,
        up,
        scale,
    })
}

impl<T: Scalar> AdapterModule<T> {
    pub fn hidden_dim(&self) -> usize {
        self.down.fan_in()
    }

    /// Branch output `s * (GELU(LN(x) W_down + b_down) W_up + b_up)`, without any skip.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var<'t, T>> {
        let h = match &self.norm {
            Some(n) => n.forward(tape, x)?,
            None => x,
        };
        let h = self.down.forward(tape, h)?.gelu();
        let h = apply_dropout(h, self.config.dropout_rate, ctx)?;
        let y = self.up.forward(tape, h)?;
        match (&self.config.scaling, &self.scale) {
            (Scaling::Fixed(s), _) => Ok(y.scale(T::of(*s))),
            (_, Some(p)) => y.mul(tape.param(p)),
            _ => Ok(y),
        }
    }
}

/// Free-function form of [`AdapterModule::forward`].
pub fn adapter_forward<'t, T: Scalar>(
    tape: &'t Tape<T>,
    x: Var<'t, T>,
    m: &AdapterModule<T>,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var<'t, T>> {
    m.forward(tape, x, ctx)
}

impl<T: Scalar> Module<T> for AdapterModule<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = Vec::new();
        if let Some(n) = &self.norm {
            v.extend(n.params());
        }
        v.extend(self.down.params());
        v.extend(self.up.params());
        v.extend(self.scale.as_ref());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = Vec::new();
        if let Some(n) = &mut self.norm {
            v.extend(n.params_mut());
        }
        v.extend(self.down.params_mut());
        v.extend(self.up.params_mut());
        v.extend(self.scale.as_mut());
        v
    }
}
