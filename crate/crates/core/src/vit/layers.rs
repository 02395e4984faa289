//! Building blocks of a pre-norm transformer layer.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::{sample_truncated_normal, ParamKind, Parameter, Rng, Scalar, Tensor};

/// Layer-norm epsilon used everywhere in the model.
pub const LN_EPS: f64 = 1e-6;

/// Training/eval switch plus the random stream for stochastic regularizers.
pub struct ForwardCtx<'r> {
    pub train: bool,
    pub rng: &'r mut Rng,
}

impl<'r> ForwardCtx<'r> {
    pub fn eval(rng: &'r mut Rng) -> Self {
        Self { train: false, rng }
    }

    pub fn train(rng: &'r mut Rng) -> Self {
        Self { train: true, rng }
    }
}

/// Visits the parameters of a model component.
pub trait Module<T: Scalar> {
    fn params(&self) -> Vec<&Parameter<T>>;
    fn params_mut(&mut self) -> Vec<&mut Parameter<T>>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    fn num_trainable(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.numel()).sum()
    }

    /// Pulls accumulated tape gradients into the parameters' grad slots.
    fn absorb_grads(&mut self, tape: &Tape<T>) {
        for p in self.params_mut() {
            if let Some(g) = tape.param_grad(&p.name) {
                p.tensor.accumulate_grad(&g);
            }
        }
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.tensor.zero_grad();
        }
    }

    fn set_trainable(&mut self, trainable: bool) {
        for p in self.params_mut() {
            p.set_trainable(trainable);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                Tensor::zeros(&[fan_in, fan_out]),
                ParamKind::Weight,
            ),
            bias: bias.then(|| {
                Parameter::new(format!("{name}.bias"), Tensor::zeros(&[fan_out]), ParamKind::Bias)
            }),
        }
    }

    /// Truncated-normal weights (sigma, bound 2 sigma) and zero bias.
    pub fn trunc_normal(name: &str, fan_in: usize, fan_out: usize, sigma: f64, rng: &mut Rng) -> Self {
        let mut l = Self::zeros(name, fan_in, fan_out, true);
        l.weight.tensor = sample_truncated_normal(rng, sigma, 2.0 * sigma, &[fan_in, fan_out])
            .expect("positive sigma");
        l
    }

    pub fn fan_in(&self) -> usize {
        self.weight.tensor.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.tensor.shape()[1]
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.matmul(tape.param(&self.weight))?;
        match &self.bias {
            Some(b) => y.add(tape.param(b)),
            None => Ok(y),
        }
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(name: &str, d: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::ones(&[d]), ParamKind::Norm),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[d]), ParamKind::Norm),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(tape.param(&self.gamma), tape.param(&self.beta), T::of(LN_EPS))
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Frozen weights of one transformer layer.
#[derive(Debug, Clone)]
pub struct TransformerLayer<T> {
    pub index: usize,
    pub num_heads: usize,
    pub ln1: LayerNorm<T>,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> TransformerLayer<T> {
    pub fn init(prefix: &str, index: usize, d: usize, heads: usize, ffn: usize, rng: &mut Rng) -> Self {
        let p = format!("{prefix}.layers.{index}");
        Self {
            index,
            num_heads: heads,
            ln1: LayerNorm::new(&format!("{p}.ln1"), d),
            q: Linear::trunc_normal(&format!("{p}.attn.q"), d, d, 0.02, rng),
            k: Linear::trunc_normal(&format!("{p}.attn.k"), d, d, 0.02, rng),
            v: Linear::trunc_normal(&format!("{p}.attn.v"), d, d, 0.02, rng),
            o: Linear::trunc_normal(&format!("{p}.attn.o"), d, d, 0.02, rng),
            ln2: LayerNorm::new(&format!("{p}.ln2"), d),
            fc1: Linear::trunc_normal(&format!("{p}.ffn.fc1"), d, ffn, 0.02, rng),
            fc2: Linear::trunc_normal(&format!("{p}.ffn.fc2"), ffn, d, 0.02, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.q.fan_in()
    }
}

impl<T: Scalar> Module<T> for TransformerLayer<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = self.ln1.params();
        for l in [&self.q, &self.k, &self.v, &self.o] {
            v.extend(l.params());
        }
        v.extend(self.ln2.params());
        v.extend(self.fc1.params());
        v.extend(self.fc2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.ln1.params_mut();
        v.extend(self.q.params_mut());
        v.extend(self.k.params_mut());
        v.extend(self.v.params_mut());
        v.extend(self.o.params_mut());
        v.extend(self.ln2.params_mut());
        v.extend(self.fc1.params_mut());
        v.extend(self.fc2.params_mut());
        v
    }
}

fn as_batched<'t, T: Scalar>(x: Var<'t, T>) -> Result<(Var<'t, T>, bool)> {
    let s = x.shape();
    if s.len() == 2 {
        Ok((x.reshape(&[1, s[0], s[1]])?, true))
    } else {
        Ok((x, false))
    }
}

fn unbatch<'t, T: Scalar>(x: Var<'t, T>, squeezed: bool) -> Result<Var<'t, T>> {
    if squeezed {
        let s = x.shape();
        x.reshape(&s[1..])
    } else {
        Ok(x)
    }
}

/// Multi-head self-attention `O(concat_h softmax(Q K^T / sqrt(d')) V)`
/// on `[n, d]` or `[b, n, d]` tokens. The input is expected to be normalized already.
pub fn attention_forward<'t, T: Scalar>(
    tape: &'t Tape<T>,
    x: Var<'t, T>,
    layer: &TransformerLayer<T>,
) -> Result<Var<'t, T>> {
    let (x, squeezed) = as_batched(x)?;
    let s = x.shape();
    let (b, n, d) = (s[0], s[1], s[2]);
    let m = layer.num_heads;
    let dh = d / m;
    let heads = |l: &Linear<T>| -> Result<Var<'t, T>> {
        l.forward(tape, x)?.reshape(&[b, n, m, dh])?.permute(&[0, 2, 1, 3])
    };
    let q = heads(&layer.q)?;
    let k = heads(&layer.k)?;
    let v = heads(&layer.v)?;
    let scores = q
        .matmul(k.permute(&[0, 1, 3, 2])?)?
        .scale(T::one() / T::of(dh as f64).sqrt());
    let ctx = scores
        .softmax()
        .matmul(v)?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b, n, d])?;
    unbatch(layer.o.forward(tape, ctx)?, squeezed)
}

/// `GELU(x W1 + b1) W2 + b2`; the input is expected to be normalized already.
pub fn ffn_forward<'t, T: Scalar>(
    tape: &'t Tape<T>,
    x: Var<'t, T>,
    layer: &TransformerLayer<T>,
) -> Result<Var<'t, T>> {
    let h = layer.fc1.forward(tape, x)?.gelu();
    layer.fc2.forward(tape, h)
}

/// Drops whole residual branches per sample (leading axis) with probability
/// `rate` and rescales survivors by `1 / (1 - rate)`. Identity outside training.
pub fn apply_stochastic_depth<'t, T: Scalar>(
    branch: Var<'t, T>,
    rate: f64,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var<'t, T>> {
    if !ctx.train || rate <= 0.0 {
        return Ok(branch);
    }
    let shape = branch.shape();
    let batch = shape[0];
    let keep = T::of(if rate >= 1.0 { 0.0 } else { 1.0 / (1.0 - rate) });
    let mask: Vec<T> = (0..batch)
        .map(|_| if ctx.rng.bernoulli(rate) { T::zero() } else { keep })
        .collect();
    let mut mshape = vec![1; shape.len()];
    mshape[0] = batch;
    let mask = branch.tape().constant(Tensor::new(&mshape, mask)?);
    branch.mul(mask)
}

/// Elementwise dropout with inverted scaling.
pub fn apply_dropout<'t, T: Scalar>(
    x: Var<'t, T>,
    rate: f64,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var<'t, T>> {
    if !ctx.train || rate <= 0.0 {
        return Ok(x);
    }
    let shape = x.shape();
    let keep = T::of(if rate >= 1.0 { 0.0 } else { 1.0 / (1.0 - rate) });
    let n: usize = shape.iter().product();
    let mask: Vec<T> = (0..n)
        .map(|_| if ctx.rng.bernoulli(rate) { T::zero() } else { keep })
        .collect();
    x.mul(x.tape().constant(Tensor::new(&shape, mask)?))
}

/// One unadapted layer: `x + DP(Attn(LN x))`, then `x + DP(FFN(LN x))`.
pub fn layer_forward<'t, T: Scalar>(
    tape: &'t Tape<T>,
    x: Var<'t, T>,
    layer: &TransformerLayer<T>,
    drop_rate: f64,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var<'t, T>> {
    let (x, squeezed) = as_batched(x)?;
    let x = attention_section(tape, x, layer, drop_rate, ctx)?;
    let f = ffn_forward(tape, layer.ln2.forward(tape, x)?, layer)?;
    let out = apply_stochastic_depth(f, drop_rate, ctx)?.add(x)?;
    unbatch(out, squeezed)
}

/// `x + DP(Attn(LN x))` on batched tokens.
pub fn attention_section<'t, T: Scalar>(
    tape: &'t Tape<T>,
    x: Var<'t, T>,
    layer: &TransformerLayer<T>,
    drop_rate: f64,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var<'t, T>> {
    let a = attention_forward(tape, layer.ln1.forward(tape, x)?, layer)?;
    apply_stochastic_depth(a, drop_rate, ctx)?.add(x)
}
