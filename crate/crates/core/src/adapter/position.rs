use super::config::Position;
use super::module::AdapterModule;
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Scalar;
use crate::vit::{apply_stochastic_depth, ffn_forward, ForwardCtx, TransformerLayer};

/// FFN section of `layer` with `adapter` inserted at `position`.
///
/// `x` is the post-residual output of the attention section. `drop_rate` is the
/// backbone stochastic-depth rate of this layer; the adapter branch is dropped
/// with the adapter's own rate.
pub fn wire_position<'t, T: Scalar>(
    tape: &'t Tape<T>,
    x: Var<'t, T>,
    layer: &TransformerLayer<T>,
    adapter: &AdapterModule<T>,
    position: Position,
    drop_rate: f64,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var<'t, T>> {
    let ad_rate = adapter.config.drop_path_rate;
    let ffn = |v: Var<'t, T>| -> Result<Var<'t, T>> { ffn_forward(tape, layer.ln2.forward(tape, v)?, layer) };
    match position {
        Position::Pre => {
            let a = adapter.forward(tape, x, ctx)?;
            let y = apply_stochastic_depth(a, ad_rate, ctx)?.add(x)?;
            let f = ffn(y)?;
            apply_stochastic_depth(f, drop_rate, ctx)?.add(y)
        }
        Position::Post => {
            let f = ffn(x)?;
            let y = apply_stochastic_depth(f, drop_rate, ctx)?.add(x)?;
            let a = adapter.forward(tape, y, ctx)?;
            apply_stochastic_depth(a, ad_rate, ctx)?.add(y)
        }
        Position::Parallel => {
            let f = ffn(x)?;
            let f = apply_stochastic_depth(f, drop_rate, ctx)?;
            let a = adapter.forward(tape, x, ctx)?;
            f.add(apply_stochastic_depth(a, ad_rate, ctx)?)?.add(x)
        }
        Position::Intermediate => {
            let f = ffn(x)?;
            let a = adapter.forward(tape, f, ctx)?;
            let branch = apply_stochastic_depth(a, ad_rate, ctx)?.add(f)?;
            apply_stochastic_depth(branch, drop_rate, ctx)?.add(x)
        }
        Position::IntermediateNoskip => {
            let f = ffn(x)?;
            let a = adapter.forward(tape, f, ctx)?;
            let branch = apply_stochastic_depth(a, ad_rate, ctx)?;
            apply_stochastic_depth(branch, drop_rate, ctx)?.add(x)
        }
    }
}

/// Attention section with an adapter between the attention output and its
/// residual: `a = Attn(LN x); A(a) + a + x`.
pub fn wire_attention<'t, T: Scalar>(
    tape: &'t Tape<T>,
    x: Var<'t, T>,
    layer: &TransformerLayer<T>,
    adapter: &AdapterModule<T>,
    drop_rate: f64,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var<'t, T>> {
    let a = crate::vit::attention_forward(tape, layer.ln1.forward(tape, x)?, layer)?;
    let ad = adapter.forward(tape, a, ctx)?;
    let branch = apply_stochastic_depth(ad, adapter.config.drop_path_rate, ctx)?.add(a)?;
    apply_stochastic_depth(branch, drop_rate, ctx)?.add(x)
}
