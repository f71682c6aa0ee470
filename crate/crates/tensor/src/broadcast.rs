//! Numpy-style broadcasting for elementwise binary ops.

use crate::error::{shape_err, Result};
use crate::tensor::strides;

/// How an operand's flat index is derived from the output's flat index.
#[derive(Clone, Debug)]
pub(crate) enum IndexMap {
    Identity,
    /// operand is a trailing block of the output, repeated
    Modulo(usize),
    /// operand is a leading block of the output, each value repeated `inner` times
    Div(usize),
    Explicit(Vec<usize>),
}

impl IndexMap {
    #[inline]
    pub(crate) fn get(&self, i: usize) -> usize {
        match self {
            IndexMap::Identity => i,
            IndexMap::Modulo(n) => i % n,
            IndexMap::Div(inner) => i / inner,
            IndexMap::Explicit(map) => map[i],
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Broadcast {
    pub out_shape: Vec<usize>,
    pub lhs: IndexMap,
    pub rhs: IndexMap,
}

impl Broadcast {
    pub(crate) fn new(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Self> {
        let rank = lhs.len().max(rhs.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pl, pr) = (pad(lhs), pad(rhs));
        let mut out_shape = Vec::with_capacity(rank);
        for (&a, &b) in pl.iter().zip(&pr) {
            out_shape.push(match (a, b) {
                (a, b) if a == b => a,
                (1, b) => b,
                (a, 1) => a,
                _ => return shape_err(op, lhs, rhs),
            });
        }
        let lhs = index_map(&pl, &out_shape);
        let rhs = index_map(&pr, &out_shape);
        Ok(Self {
            out_shape,
            lhs,
            rhs,
        })
    }

    pub(crate) fn numel(&self) -> usize {
        self.out_shape.iter().product()
    }
}

fn index_map(operand: &[usize], out: &[usize]) -> IndexMap {
    if operand == out {
        return IndexMap::Identity;
    }
    let numel: usize = operand.iter().product();
    // first axis where operand stops being broadcast (leading ones)
    let lead = operand.iter().take_while(|&&d| d == 1).count();
    if operand[lead..] == out[lead..] {
        return IndexMap::Modulo(numel.max(1));
    }
    let trail = operand.iter().rev().take_while(|&&d| d == 1).count();
    let cut = operand.len() - trail;
    if operand[..cut] == out[..cut] {
        return IndexMap::Div(out[cut..].iter().product::<usize>().max(1));
    }
    let in_strides = strides(operand);
    let eff: Vec<usize> = operand
        .iter()
        .zip(&in_strides)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; out.len()];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for ax in (0..out.len()).rev() {
            counter[ax] += 1;
            offset += eff[ax];
            if counter[ax] < out[ax] {
                break;
            }
            offset -= eff[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    IndexMap::Explicit(map)
}
