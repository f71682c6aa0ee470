use ifthen_tensor::{Graph, Scalar, Tensor, Var};

use crate::corpus::PAD;
use crate::error::{validation, Result};

/// Additive bias applied to scores of masked positions.
pub const MASK_BIAS: f64 = -1e9;

/// Attendable source positions, row-major `[batch, len]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceMask {
    batch: usize,
    len: usize,
    keep: Vec<bool>,
}

impl SourceMask {
    /// Masks PAD positions. A row that is entirely PAD keeps position 0 as a
    /// sentinel so attention stays defined.
    pub fn from_ids(ids: &[usize], batch: usize, len: usize) -> Self {
        let mut keep: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
        for r in 0..batch {
            if len > 0 && !keep[r * len..(r + 1) * len].iter().any(|&k| k) {
                keep[r * len] = true;
            }
        }
        Self { batch, len, keep }
    }

    /// Mask taken as given; fully-masked rows are rejected when attended over.
    pub fn from_keep(keep: Vec<bool>, batch: usize, len: usize) -> Result<Self> {
        if keep.len() != batch * len {
            return validation(format!("mask of {} entries for {batch}x{len}", keep.len()));
        }
        Ok(Self { batch, len, keep })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn keeps(&self, row: usize, pos: usize) -> bool {
        self.keep[row * self.len + pos]
    }

    pub fn validate(&self) -> Result<()> {
        for r in 0..self.batch {
            if !(0..self.len).any(|p| self.keeps(r, p)) {
                return validation(format!("row {r} masks every source position"));
            }
        }
        Ok(())
    }

    /// Bias tensor `[batch, heads, queries, len]` (heads omitted when `None`).
    pub fn bias<T: Scalar>(&self, heads: Option<usize>, queries: usize) -> Tensor<T> {
        let reps = heads.unwrap_or(1) * queries;
        let masked = T::from_f64_lossy(MASK_BIAS);
        let mut data = Vec::with_capacity(self.batch * reps * self.len);
        for r in 0..self.batch {
            let row: Vec<T> = (0..self.len)
                .map(|p| if self.keeps(r, p) { T::zero() } else { masked })
                .collect();
            for _ in 0..reps {
                data.extend_from_slice(&row);
            }
        }
        let shape = match heads {
            Some(h) => vec![self.batch, h, queries, self.len],
            None => vec![self.batch, queries, self.len],
        };
        Tensor::new(shape, data).expect("bias shape")
    }
}

/// Upper-triangular `[queries, queries]` bias blocking attention to later positions.
pub fn causal_bias<T: Scalar>(queries: usize) -> Tensor<T> {
    let masked = T::from_f64_lossy(MASK_BIAS);
    let data = (0..queries * queries)
        .map(|i| if i % queries > i / queries { masked } else { T::zero() })
        .collect();
    Tensor::new(vec![queries, queries], data).expect("square")
}

/// How query/memory pairs are scored.
#[derive(Clone, Copy, Debug)]
pub enum Scoring<'g, T> {
    /// `q^T W m` with `W: [memory_dim, query_dim]`.
    Multiplicative(Var<'g, T>),
    /// `q^T m / sqrt(d)`.
    ScaledDot,
    /// `v^T tanh(W_q q + W_k m)` with `W_q: [query_dim, a]`, `W_k: [memory_dim, a]`, `v: [a, 1]`.
    Additive {
        query: Var<'g, T>,
        key: Var<'g, T>,
        v: Var<'g, T>,
    },
}

/// Softmax over the last axis of `scores + bias`, then weights x `values`.
pub fn masked_attention<'g, T: Scalar>(
    scores: Var<'g, T>,
    bias: Var<'g, T>,
    values: Var<'g, T>,
) -> Result<(Var<'g, T>, Var<'g, T>)> {
    let axis = scores.shape().len() - 1;
    let weights = scores.add(bias)?.softmax(axis)?;
    Ok((weights.matmul(values)?, weights))
}

/// `query [b, q, dq]` over `memory [b, s, dm]`; returns `(context [b, q, dm], weights [b, q, s])`.
pub fn attention<'g, T: Scalar>(
    query: Var<'g, T>,
    memory: Var<'g, T>,
    mask: &SourceMask,
    scoring: Scoring<'g, T>,
) -> Result<(Var<'g, T>, Var<'g, T>)> {
    mask.validate()?;
    let g: &Graph<T> = query.graph();
    let qs = query.shape();
    let ms = memory.shape();
    if qs.len() != 3 || ms.len() != 3 || qs[0] != ms[0] || ms[0] != mask.batch() || ms[1] != mask.len() {
        return validation(format!(
            "attention shapes query {qs:?}, memory {ms:?}, mask {}x{}",
            mask.batch(),
            mask.len()
        ));
    }
    let scores = match scoring {
        Scoring::Multiplicative(w) => query.matmul(memory.matmul(w)?.transpose(1, 2)?)?,
        Scoring::ScaledDot => query
            .matmul(memory.transpose(1, 2)?)?
            .scale(1.0 / (qs[2] as f64).sqrt()),
        Scoring::Additive { query: wq, key: wk, v } => {
            let a = wq.shape()[1];
            let qa = query.matmul(wq)?.reshape(&[qs[0], qs[1], 1, a])?;
            let ka = memory.matmul(wk)?.reshape(&[ms[0], 1, ms[1], a])?;
            qa.add(ka)?.tanh().matmul(v)?.reshape(&[qs[0], qs[1], ms[1]])?
        }
    };
    let bias = g.constant(mask.bias(None, qs[1]));
    masked_attention(scores, bias, memory)
}
