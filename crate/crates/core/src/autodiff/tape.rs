//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s during a
//! forward pass. [`Tape::backward`] then walks the record in reverse and
//! accumulates gradients into every leaf that requires them. Leaf
//! gradients persist on the tape across calls, so two `backward` calls on
//! the same loss produce twice the gradient.

use std::cell::RefCell;
use std::collections::HashMap;

use super::shape::{broadcast_shape, permute_gather, BroadcastMap};
use crate::error::{ForgeError, Result};
use crate::tensor::{numel, Parameter, Scalar, Tensor};

pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

pub(crate) enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    MatMul(usize, usize),
    Gelu(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Concat(Vec<usize>, usize),
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
    },
    BroadcastTo(usize),
}

/// Records a computation graph for one forward/backward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    leaf_grads: RefCell<HashMap<usize, Vec<T>>>,
    params: RefCell<HashMap<String, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            leaf_grads: RefCell::new(HashMap::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        debug_assert_eq!(numel(&shape), data.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a leaf; gradients flow into it when the tensor requires them.
    pub fn leaf(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&self, t: Tensor<T>) -> Var<'_, T> {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Records a named parameter once; later calls return the same leaf.
    pub fn param(&self, p: &Parameter<T>) -> Var<'_, T> {
        if let Some(&id) = self.params.borrow().get(&p.name) {
            return Var { tape: self, id };
        }
        let v = self.push(
            p.tensor.shape().to_vec(),
            p.tensor.data().to_vec(),
            Op::Leaf,
            p.trainable,
        );
        self.params.borrow_mut().insert(p.name.clone(), v.id);
        v
    }

    /// Accumulated gradient of a recorded parameter.
    pub fn param_grad(&self, name: &str) -> Option<Vec<T>> {
        let id = *self.params.borrow().get(name)?;
        self.leaf_grads.borrow().get(&id).cloned()
    }

    pub fn grad(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        let g = self.leaf_grads.borrow().get(&v.id).cloned()?;
        Some(Tensor::new(&v.shape(), g).expect("gradient matches its node"))
    }

    /// Back-propagates from a scalar loss into every participating leaf.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.data.len() != 1 {
            return Err(ForgeError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                let mut store = self.leaf_grads.borrow_mut();
                match store.get_mut(&id) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    None => {
                        store.insert(id, g);
                    }
                }
                continue;
            }
            backprop(&nodes, node, &g, &mut grads);
        }
        // Leaves that participated but got no signal still own a zero gradient.
        let mut store = self.leaf_grads.borrow_mut();
        for &id in self.params.borrow().values() {
            if id <= loss.id && nodes[id].requires_grad {
                store.entry(id).or_insert_with(|| vec![T::zero(); nodes[id].data.len()]);
            }
        }
        Ok(())
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn data(&self) -> Vec<T> {
        self.tape.nodes.borrow()[self.id].data.clone()
    }

    pub fn value(&self) -> Tensor<T> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(&n.shape, n.data.clone()).expect("recorded node is consistent")
    }

    /// Single element of a scalar node.
    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn rg(&self, other: &Var<'t, T>) -> bool {
        let nodes = self.tape.nodes.borrow();
        nodes[self.id].requires_grad || nodes[other.id].requires_grad
    }

    fn binary(
        self,
        other: Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let shape = broadcast_shape(&a.shape, &b.shape)
                .map_err(|_| ForgeError::shape(name, &a.shape, &b.shape))?;
            let n = numel(&shape);
            let data: Vec<T> = if a.shape == b.shape {
                a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
            } else {
                let ma = BroadcastMap::new(&shape, &a.shape);
                let mb = BroadcastMap::new(&shape, &b.shape);
                (0..n).map(|i| f(a.data[ma.get(i)], b.data[mb.get(i)])).collect()
            };
            (shape, data)
        };
        let rg = self.rg(&other);
        Ok(self.tape.push(shape, data, op, rg))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, s: T) -> Var<'t, T> {
        let (shape, data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (a.shape.clone(), a.data.iter().map(|&x| x * s).collect(), a.requires_grad)
        };
        self.tape.push(shape, data, Op::Scale(self.id, s), rg)
    }

    /// `[..., p, q] @ [q, r]` or batched `[..., p, q] @ [..., q, r]`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let dims = matmul_dims(&a.shape, &b.shape)?;
            let mut out = vec![T::zero(); dims.batch * dims.p * dims.r];
            gemm_forward(&dims, &a.data, &b.data, &mut out);
            let mut shape = a.shape[..a.shape.len() - 1].to_vec();
            shape.push(dims.r);
            (shape, out)
        };
        let rg = self.rg(&other);
        Ok(self.tape.push(shape, data, Op::MatMul(self.id, other.id), rg))
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(self) -> Var<'t, T> {
        let (shape, data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (
                a.shape.clone(),
                a.data.iter().map(|&x| gelu(x)).collect(),
                a.requires_grad,
            )
        };
        self.tape.push(shape, data, Op::Gelu(self.id), rg)
    }

    /// Max-shifted softmax over the last axis.
    pub fn softmax(self) -> Var<'t, T> {
        let (shape, data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let d = *a.shape.last().expect("non-empty shape");
            let mut out = a.data.clone();
            for row in out.chunks_mut(d) {
                softmax_row(row);
            }
            (a.shape.clone(), out, a.requires_grad)
        };
        self.tape.push(shape, data, Op::Softmax(self.id), rg)
    }

    /// Layer normalization over the last axis with population variance.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let (shape, data, xhat, rstd, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (x, g, b) = (&nodes[self.id], &nodes[gamma.id], &nodes[beta.id]);
            let d = *x.shape.last().expect("non-empty shape");
            if g.shape != [d] || b.shape != [d] {
                return Err(ForgeError::shape("layer_norm", &x.shape, &g.shape));
            }
            let rows = x.data.len() / d;
            let mut out = vec![T::zero(); x.data.len()];
            let mut xhat = vec![T::zero(); x.data.len()];
            let mut rstd = Vec::with_capacity(rows);
            let dn = T::of(d as f64);
            for r in 0..rows {
                let row = &x.data[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                let rs = T::one() / (var + eps).sqrt();
                rstd.push(rs);
                for j in 0..d {
                    let h = (row[j] - mean) * rs;
                    xhat[r * d + j] = h;
                    out[r * d + j] = g.data[j] * h + b.data[j];
                }
            }
            let rg = x.requires_grad || g.requires_grad || b.requires_grad;
            (x.shape.clone(), out, xhat, rstd, rg)
        };
        Ok(self.tape.push(
            shape,
            data,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `labels` under softmax(`self`), `[b, c]` logits.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t, T>> {
        let (loss, probs, rg) = {
            let nodes = self.tape.nodes.borrow();
            let z = &nodes[self.id];
            if z.shape.len() != 2 || z.shape[0] != labels.len() {
                return Err(ForgeError::shape("cross_entropy", &z.shape, &[labels.len()]));
            }
            let c = z.shape[1];
            let mut probs = z.data.clone();
            let mut total = T::zero();
            for (row, (&y, logits)) in probs.chunks_mut(c).zip(labels.iter().zip(z.data.chunks(c))) {
                if y >= c {
                    return Err(ForgeError::Index {
                        what: "class logits",
                        index: y,
                        size: c,
                    });
                }
                let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let lse = logits.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
                total = total + (lse - logits[y]);
                softmax_row(row);
            }
            (total / T::of(labels.len() as f64), probs, z.requires_grad)
        };
        Ok(self.tape.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(self) -> Var<'t, T> {
        let (s, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (a.data.iter().copied().sum::<T>(), a.requires_grad)
        };
        self.tape.push(vec![1], vec![s], Op::Sum(self.id), rg)
    }

    pub fn mean(self) -> Var<'t, T> {
        let (s, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (
                a.data.iter().copied().sum::<T>() / T::of(a.data.len() as f64),
                a.requires_grad,
            )
        };
        self.tape.push(vec![1], vec![s], Op::Mean(self.id), rg)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let (data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if numel(shape) != a.data.len() {
                return Err(ForgeError::shape("reshape", &a.shape, shape));
            }
            (a.data.clone(), a.requires_grad)
        };
        Ok(self.tape.push(shape.to_vec(), data, Op::Reshape(self.id), rg))
    }

    /// Reorders axes; output axis `k` is input axis `axes[k]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let (shape, data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let mut seen = vec![false; a.shape.len()];
            if axes.len() != a.shape.len() || axes.iter().any(|&x| x >= seen.len() || std::mem::replace(&mut seen[x], true)) {
                return Err(ForgeError::shape("permute", &a.shape, axes));
            }
            let gather = permute_gather(&a.shape, axes);
            let data = gather.iter().map(|&i| a.data[i]).collect();
            (axes.iter().map(|&k| a.shape[k]).collect(), data, a.requires_grad)
        };
        Ok(self.tape.push(shape, data, Op::Permute(self.id, axes.to_vec()), rg))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let tape = parts.first().ok_or_else(|| ForgeError::contract("concat of nothing"))?.tape;
        let (shape, data, rg) = {
            let nodes = tape.nodes.borrow();
            let first = &nodes[parts[0].id].shape;
            if axis >= first.len() {
                return Err(ForgeError::shape("concat", first, &[axis]));
            }
            let mut shape = first.clone();
            shape[axis] = 0;
            for p in parts {
                let s = &nodes[p.id].shape;
                if s.len() != first.len()
                    || s.iter().zip(first).enumerate().any(|(k, (x, y))| k != axis && x != y)
                {
                    return Err(ForgeError::shape("concat", first, s));
                }
                shape[axis] += s[axis];
            }
            let outer: usize = shape[..axis].iter().product();
            let mut data = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for p in parts {
                    let n = &nodes[p.id];
                    let inner: usize = n.shape[axis..].iter().product();
                    data.extend_from_slice(&n.data[o * inner..(o + 1) * inner]);
                }
            }
            let rg = parts.iter().any(|p| nodes[p.id].requires_grad);
            (shape, data, rg)
        };
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(shape, data, Op::Concat(ids, axis), rg))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let (shape, data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if axis >= a.shape.len() || len == 0 || start + len > a.shape[axis] {
                return Err(ForgeError::shape("narrow", &a.shape, &[axis, start, len]));
            }
            let outer: usize = a.shape[..axis].iter().product();
            let inner: usize = a.shape[axis + 1..].iter().product();
            let full = a.shape[axis] * inner;
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * full + start * inner;
                data.extend_from_slice(&a.data[base..base + len * inner]);
            }
            let mut shape = a.shape.clone();
            shape[axis] = len;
            (shape, data, a.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            data,
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
            rg,
        ))
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let (data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let out = broadcast_shape(&a.shape, shape)?;
            if out != shape {
                return Err(ForgeError::shape("broadcast_to", &a.shape, shape));
            }
            let m = BroadcastMap::new(shape, &a.shape);
            ((0..numel(shape)).map(|i| a.data[m.get(i)]).collect(), a.requires_grad)
        };
        Ok(self.tape.push(shape.to_vec(), data, Op::BroadcastTo(self.id), rg))
    }
}

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    x * phi_cdf(x)
}

fn phi_cdf<T: Scalar>(x: T) -> T {
    // erfc keeps the negative tail accurate
    T::of(0.5) * (-x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erfc()
}

fn phi_pdf<T: Scalar>(x: T) -> T {
    T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt()) * (-(x * x) * T::of(0.5)).exp()
}

fn softmax_row<T: Scalar>(row: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s = s + *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}

pub(crate) struct MatmulDims {
    batch: usize,
    p: usize,
    q: usize,
    r: usize,
    /// Right operand is a single matrix shared across the batch.
    shared: bool,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatmulDims> {
    if a.len() < 2 || b.len() < 2 {
        return Err(ForgeError::shape("matmul", a, b));
    }
    let (p, q) = (a[a.len() - 2], a[a.len() - 1]);
    let (q2, r) = (b[b.len() - 2], b[b.len() - 1]);
    if q != q2 {
        return Err(ForgeError::shape("matmul", a, b));
    }
    let batch: usize = a[..a.len() - 2].iter().product();
    if b.len() == 2 {
        Ok(MatmulDims { batch, p, q, r, shared: true })
    } else if b[..b.len() - 2] == a[..a.len() - 2] {
        Ok(MatmulDims { batch, p, q, r, shared: false })
    } else {
        Err(ForgeError::shape("matmul", a, b))
    }
}

fn gemm_forward<T: Scalar>(d: &MatmulDims, a: &[T], b: &[T], out: &mut [T]) {
    let (p, q, r) = (d.p, d.q, d.r);
    // SAFETY: every view below lies inside its slice; dimensions were checked.
    unsafe {
        if d.shared {
            T::gemm(
                d.batch * p, q, r, T::one(),
                a.as_ptr(), q as isize, 1,
                b.as_ptr(), r as isize, 1,
                T::zero(), out.as_mut_ptr(), r as isize, 1,
            );
        } else {
            for i in 0..d.batch {
                T::gemm(
                    p, q, r, T::one(),
                    a.as_ptr().add(i * p * q), q as isize, 1,
                    b.as_ptr().add(i * q * r), r as isize, 1,
                    T::zero(), out.as_mut_ptr().add(i * p * r), r as isize, 1,
                );
            }
        }
    }
}

fn grad_slot<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, len: usize) -> &mut Vec<T> {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

fn backprop<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let n = g.len();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
            for (id, s) in [(*a, T::one()), (*b, sign)] {
                let inp = &nodes[id];
                if !inp.requires_grad {
                    continue;
                }
                let m = BroadcastMap::new(&node.shape, &inp.shape);
                let slot = grad_slot(grads, id, inp.data.len());
                for i in 0..n {
                    slot[m.get(i)] = slot[m.get(i)] + s * g[i];
                }
            }
        }
        Op::Mul(a, b) => {
            let (na, nb) = (&nodes[*a], &nodes[*b]);
            let ma = BroadcastMap::new(&node.shape, &na.shape);
            let mb = BroadcastMap::new(&node.shape, &nb.shape);
            if na.requires_grad {
                let slot = grad_slot(grads, *a, na.data.len());
                for i in 0..n {
                    slot[ma.get(i)] = slot[ma.get(i)] + g[i] * nb.data[mb.get(i)];
                }
            }
            if nb.requires_grad {
                let slot = grad_slot(grads, *b, nb.data.len());
                for i in 0..n {
                    slot[mb.get(i)] = slot[mb.get(i)] + g[i] * na.data[ma.get(i)];
                }
            }
        }
        Op::Scale(a, s) => {
            let slot = grad_slot(grads, *a, n);
            for i in 0..n {
                slot[i] = slot[i] + g[i] * *s;
            }
        }
        Op::MatMul(a, b) => {
            let (na, nb) = (&nodes[*a], &nodes[*b]);
            let d = matmul_dims(&na.shape, &nb.shape).expect("checked in forward");
            let (p, q, r) = (d.p, d.q, d.r);
            if na.requires_grad {
                let slot = grad_slot(grads, *a, na.data.len());
                // dA += dC @ B^T
                unsafe {
                    if d.shared {
                        T::gemm(
                            d.batch * p, r, q, T::one(),
                            g.as_ptr(), r as isize, 1,
                            nb.data.as_ptr(), 1, r as isize,
                            T::one(), slot.as_mut_ptr(), q as isize, 1,
                        );
                    } else {
                        for i in 0..d.batch {
                            T::gemm(
                                p, r, q, T::one(),
                                g.as_ptr().add(i * p * r), r as isize, 1,
                                nb.data.as_ptr().add(i * q * r), 1, r as isize,
                                T::one(), slot.as_mut_ptr().add(i * p * q), q as isize, 1,
                            );
                        }
                    }
                }
            }
            if nb.requires_grad {
                let slot = grad_slot(grads, *b, nb.data.len());
                // dB += A^T @ dC
                unsafe {
                    if d.shared {
                        T::gemm(
                            q, d.batch * p, r, T::one(),
                            na.data.as_ptr(), 1, q as isize,
                            g.as_ptr(), r as isize, 1,
                            T::one(), slot.as_mut_ptr(), r as isize, 1,
                        );
                    } else {
                        for i in 0..d.batch {
                            T::gemm(
                                q, p, r, T::one(),
                                na.data.as_ptr().add(i * p * q), 1, q as isize,
                                g.as_ptr().add(i * p * r), r as isize, 1,
                                T::one(), slot.as_mut_ptr().add(i * q * r), r as isize, 1,
                            );
                        }
                    }
                }
            }
        }
        Op::Gelu(a) => {
            let x = &nodes[*a].data;
            let slot = grad_slot(grads, *a, n);
            for i in 0..n {
                let d = phi_cdf(x[i]) + x[i] * phi_pdf(x[i]);
                slot[i] = slot[i] + g[i] * d;
            }
        }
        Op::Softmax(a) => {
            let d = *node.shape.last().expect("non-empty");
            let slot = grad_slot(grads, *a, n);
            for ((y, gy), gs) in node.data.chunks(d).zip(g.chunks(d)).zip(slot.chunks_mut(d)) {
                let dot: T = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                for j in 0..d {
                    gs[j] = gs[j] + y[j] * (gy[j] - dot);
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
            let d = *node.shape.last().expect("non-empty");
            let gam = &nodes[*gamma].data;
            if nodes[*gamma].requires_grad {
                let slot = grad_slot(grads, *gamma, d);
                for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        slot[j] = slot[j] + gr[j] * hr[j];
                    }
                }
            }
            if nodes[*beta].requires_grad {
                let slot = grad_slot(grads, *beta, d);
                for gr in g.chunks(d) {
                    for j in 0..d {
                        slot[j] = slot[j] + gr[j];
                    }
                }
            }
            if nodes[*x].requires_grad {
                let dn = T::of(d as f64);
                let slot = grad_slot(grads, *x, n);
                let mut dxhat = vec![T::zero(); d];
                for (row, rs) in rstd.iter().enumerate() {
                    let gr = &g[row * d..(row + 1) * d];
                    let hr = &xhat[row * d..(row + 1) * d];
                    for j in 0..d {
                        dxhat[j] = gr[j] * gam[j];
                    }
                    let m1 = dxhat.iter().copied().sum::<T>() / dn;
                    let m2 = dxhat.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / dn;
                    let out = &mut slot[row * d..(row + 1) * d];
                    for j in 0..d {
                        out[j] = out[j] + *rs * (dxhat[j] - m1 - hr[j] * m2);
                    }
                }
            }
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let c = nodes[*logits].shape[1];
            let scale = g[0] / T::of(labels.len() as f64);
            let slot = grad_slot(grads, *logits, probs.len());
            for (i, &y) in labels.iter().enumerate() {
                for j in 0..c {
                    let onehot = if j == y { T::one() } else { T::zero() };
                    slot[i * c + j] = slot[i * c + j] + scale * (probs[i * c + j] - onehot);
                }
            }
        }
        Op::Sum(a) | Op::Mean(a) => {
            let len = nodes[*a].data.len();
            let v = if matches!(node.op, Op::Mean(_)) {
                g[0] / T::of(len as f64)
            } else {
                g[0]
            };
            let slot = grad_slot(grads, *a, len);
            slot.iter_mut().for_each(|s| *s = *s + v);
        }
        Op::Reshape(a) => {
            let slot = grad_slot(grads, *a, n);
            slot.iter_mut().zip(g).for_each(|(s, &v)| *s = *s + v);
        }
        Op::Permute(a, axes) => {
            let gather = permute_gather(&nodes[*a].shape, axes);
            let slot = grad_slot(grads, *a, n);
            for (i, &src) in gather.iter().enumerate() {
                slot[src] = slot[src] + g[i];
            }
        }
        Op::Concat(ids, axis) => {
            let outer: usize = node.shape[..*axis].iter().product();
            let mut offset = 0;
            for o in 0..outer {
                for &id in ids {
                    let inp = &nodes[id];
                    let inner: usize = inp.shape[*axis..].iter().product();
                    if inp.requires_grad {
                        let slot = grad_slot(grads, id, inp.data.len());
                        let dst = &mut slot[o * inner..(o + 1) * inner];
                        dst.iter_mut()
                            .zip(&g[offset..offset + inner])
                            .for_each(|(s, &v)| *s = *s + v);
                    }
                    offset += inner;
                }
            }
        }
        Op::Narrow { x, axis, start } => {
            let inp = &nodes[*x];
            let outer: usize = inp.shape[..*axis].iter().product();
            let inner: usize = inp.shape[axis + 1..].iter().product();
            let full = inp.shape[*axis] * inner;
            let len = node.shape[*axis] * inner;
            let slot = grad_slot(grads, *x, inp.data.len());
            for o in 0..outer {
                let base = o * full + start * inner;
                slot[base..base + len]
                    .iter_mut()
                    .zip(&g[o * len..(o + 1) * len])
                    .for_each(|(s, &v)| *s = *s + v);
            }
        }
        Op::BroadcastTo(a) => {
            let inp = &nodes[*a];
            let m = BroadcastMap::new(&node.shape, &inp.shape);
            let slot = grad_slot(grads, *a, inp.data.len());
            for i in 0..n {
                slot[m.get(i)] = slot[m.get(i)] + g[i];
            }
        }
    }
}
