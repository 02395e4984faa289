//! Shape arithmetic shared by the tape operations.

use crate::error::{ForgeError, Result};

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(ForgeError::shape("broadcast", a, b)),
        };
    }
    Ok(out)
}

/// How an output element index maps back to an element of a broadcast input.
pub(crate) enum BroadcastMap {
    Same,
    /// The input is a trailing block repeated: `i % n`.
    Cyclic(usize),
    /// Arbitrary pattern, one source index per output element.
    Gather(Vec<usize>),
}

impl BroadcastMap {
    pub(crate) fn new(out: &[usize], inp: &[usize]) -> Self {
        let trimmed: Vec<usize> = {
            let first = inp.iter().position(|&d| d != 1).unwrap_or(inp.len());
            inp[first..].to_vec()
        };
        let in_n: usize = inp.iter().product();
        let out_n: usize = out.iter().product();
        if in_n == out_n {
            return BroadcastMap::Same;
        }
        if trimmed.len() <= out.len() && out[out.len() - trimmed.len()..] == trimmed[..] {
            return BroadcastMap::Cyclic(in_n);
        }
        let nd = out.len();
        let off = nd - inp.len();
        let in_strides = strides(inp);
        let mut eff = vec![0; nd];
        for k in 0..inp.len() {
            eff[k + off] = if inp[k] == 1 { 0 } else { in_strides[k] };
        }
        let mut idx = vec![0usize; nd];
        let mut map = Vec::with_capacity(out_n);
        let mut src = 0usize;
        for _ in 0..out_n {
            map.push(src);
            for k in (0..nd).rev() {
                idx[k] += 1;
                src += eff[k];
                if idx[k] < out[k] {
                    break;
                }
                src -= eff[k] * idx[k];
                idx[k] = 0;
            }
        }
        BroadcastMap::Gather(map)
    }

    #[inline]
    pub(crate) fn get(&self, i: usize) -> usize {
        match self {
            BroadcastMap::Same => i,
            BroadcastMap::Cyclic(n) => i % n,
            BroadcastMap::Gather(m) => m[i],
        }
    }
}

/// Source offsets of a permuted view, listed in output order.
pub(crate) fn permute_gather(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let nd = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n: usize = shape.iter().product();
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(src);
        for k in (0..nd).rev() {
            idx[k] += 1;
            src += eff[k];
            if idx[k] < out_shape[k] {
                break;
            }
            src -= eff[k] * idx[k];
            idx[k] = 0;
        }
    }
    out
}
