//! Tape-based computation graph.
//!
//! Every op appends a node holding its forward value; nodes are therefore in
//! topological order and the backward pass is a single reverse sweep.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::broadcast::Broadcast;
use crate::error::{invalid, shape_err, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{split_axis, strides, Tensor};

pub(crate) type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Unary {
    Tanh,
    Sigmoid,
    Relu,
}

pub(crate) enum Op<T> {
    Leaf,
    Param(ParamId),
    Binary(Binary, NodeId, NodeId),
    Scale(NodeId, T),
    Unary(Unary, NodeId),
    MatMul(NodeId, NodeId),
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        input: NodeId,
        axis: usize,
        start: usize,
    },
    Permute {
        input: NodeId,
        perm: Vec<usize>,
    },
    Reshape(NodeId),
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
    },
    Softmax {
        input: NodeId,
        axis: usize,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Dropout {
        input: NodeId,
        mask: Vec<T>,
    },
    LstmCell {
        x: NodeId,
        h: NodeId,
        c: NodeId,
        w_ih: NodeId,
        w_hh: NodeId,
        bias: NodeId,
        /// post-activation gates i, f, g, o per row
        gates: Vec<T>,
        tanh_c: Vec<T>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        ignore: Option<usize>,
        probs: Vec<T>,
        count: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

#[derive(Default)]
pub(crate) struct Tape<T> {
    pub nodes: Vec<Node<T>>,
    params: HashMap<ParamId, NodeId>,
}

/// A single forward (and optionally backward) pass.
pub struct Graph<T> {
    pub(crate) tape: RefCell<Tape<T>>,
    train: bool,
    rng: RefCell<ChaCha8Rng>,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T> {
    graph: &'g Graph<T>,
    pub(crate) id: NodeId,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Scalar> Graph<T> {
    /// Inference graph: dropout disabled.
    pub fn inference() -> Self {
        Self::new(false, 0)
    }

    /// Training graph; `seed` drives every dropout mask drawn in this pass.
    pub fn training(seed: u64) -> Self {
        Self::new(true, seed)
    }

    pub fn new(train: bool, seed: u64) -> Self {
        Self {
            tape: RefCell::new(Tape {
                nodes: Vec::new(),
                params: HashMap::new(),
            }),
            train,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut tape = self.tape.borrow_mut();
        let id = tape.nodes.len();
        tape.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { graph: self, id }
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        let tape = self.tape.borrow();
        ids.iter().any(|&i| tape.nodes[i].requires_grad)
    }

    /// Input that gradients are tracked for (not tied to a parameter).
    pub fn variable(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Input excluded from differentiation.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.tape.borrow().params.get(&id) {
            return Var { graph: self, id: node };
        }
        let var = self.push(store.value(id).clone(), Op::Param(id), true);
        self.tape.borrow_mut().params.insert(id, var.id);
        var
    }

    /// Row-wise concatenation helper for stacking many handles at once.
    pub fn concat(&self, vars: &[Var<'_, T>], axis: usize) -> Result<Var<'_, T>> {
        if vars.is_empty() {
            return invalid("concat of zero tensors");
        }
        let ids: Vec<NodeId> = vars.iter().map(|v| v.id).collect();
        let (value, requires) = {
            let tape = self.tape.borrow();
            let first = tape.nodes[ids[0]].value.shape().to_vec();
            if axis >= first.len() {
                return invalid(format!("concat axis {axis} out of range for {first:?}"));
            }
            let mut total = 0;
            for &i in &ids {
                let s = tape.nodes[i].value.shape();
                let same_rank = s.len() == first.len();
                if !same_rank
                    || s.iter()
                        .zip(&first)
                        .enumerate()
                        .any(|(ax, (a, b))| ax != axis && a != b)
                {
                    return shape_err("concat", &first, s);
                }
                total += s[axis];
            }
            let mut shape = first.clone();
            shape[axis] = total;
            let (outer, _, inner) = split_axis(&shape, axis);
            let mut data = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for &i in &ids {
                    let v = &tape.nodes[i].value;
                    let block = v.shape()[axis] * inner;
                    data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
                }
            }
            let requires = ids.iter().any(|&i| tape.nodes[i].requires_grad);
            (Tensor::new(shape, data)?, requires)
        };
        Ok(self.push(value, Op::Concat { inputs: ids, axis }, requires))
    }

    pub(crate) fn draw_mask(&self, n: usize, p: f64) -> Vec<T> {
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let mut rng = self.rng.borrow_mut();
        (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect()
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    /// Borrow of the forward value.
    pub fn value(&self) -> Ref<'g, Tensor<T>> {
        Ref::map(self.graph.tape.borrow(), |t| &t.nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.value().clone()
    }

    fn unary_value<F>(&self, f: F) -> Tensor<T>
    where
        F: Fn(&Tensor<T>) -> Tensor<T>,
    {
        f(&self.value())
    }

    fn binary(self, kind: Binary, rhs: Var<'g, T>, name: &'static str) -> Result<Var<'g, T>> {
        let value = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id].value;
            let b = &tape.nodes[rhs.id].value;
            let bc = Broadcast::new(name, a.shape(), b.shape())?;
            let (ad, bd) = (a.data(), b.data());
            let n = bc.numel();
            let data: Vec<T> = match kind {
                Binary::Add => (0..n).map(|i| ad[bc.lhs.get(i)] + bd[bc.rhs.get(i)]).collect(),
                Binary::Sub => (0..n).map(|i| ad[bc.lhs.get(i)] - bd[bc.rhs.get(i)]).collect(),
                Binary::Mul => (0..n).map(|i| ad[bc.lhs.get(i)] * bd[bc.rhs.get(i)]).collect(),
            };
            Tensor::new(bc.out_shape, data)?
        };
        let rg = self.graph.needs(&[self.id, rhs.id]);
        Ok(self.graph.push(value, Op::Binary(kind, self.id, rhs.id), rg))
    }

    /// Elementwise sum with broadcasting.
    // Fallible on shape mismatch, so these cannot be the std operator traits.
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(Binary::Add, rhs, "add")
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(Binary::Sub, rhs, "sub")
    }

    /// Elementwise product with broadcasting.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(Binary::Mul, rhs, "mul")
    }

    pub fn scale(self, factor: f64) -> Var<'g, T> {
        let c = T::from_f64_lossy(factor);
        let value = self.unary_value(|t| {
            let data = t.data().iter().map(|&v| v * c).collect();
            Tensor::new(t.shape().to_vec(), data).expect("same shape")
        });
        let rg = self.graph.needs(&[self.id]);
        self.graph.push(value, Op::Scale(self.id, c), rg)
    }

    fn activation(self, kind: Unary) -> Var<'g, T> {
        let value = self.unary_value(|t| {
            let f = |v: T| match kind {
                Unary::Tanh => v.tanh(),
                Unary::Sigmoid => sigmoid(v),
                Unary::Relu => v.max(T::zero()),
            };
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
                .expect("same shape")
        });
        let rg = self.graph.needs(&[self.id]);
        self.graph.push(value, Op::Unary(kind, self.id), rg)
    }

    pub fn tanh(self) -> Var<'g, T> {
        self.activation(Unary::Tanh)
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        self.activation(Unary::Sigmoid)
    }

    pub fn relu(self) -> Var<'g, T> {
        self.activation(Unary::Relu)
    }

    /// Matrix product.
    ///
    /// `[.., m, k] x [k, n]` flattens the leading dims of the left operand;
    /// `[b.., m, k] x [b.., k, n]` multiplies matching batches.
    pub fn matmul(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        let value = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id].value;
            let b = &tape.nodes[rhs.id].value;
            let plan = MatMulPlan::new(a.shape(), b.shape())?;
            let mut out = vec![T::zero(); plan.batch * plan.m * plan.n];
            for bi in 0..plan.batch {
                let (ao, bo) = plan.offsets(bi);
                T::gemm(
                    plan.m,
                    plan.k,
                    plan.n,
                    &a.data()[ao..],
                    (plan.k as isize, 1),
                    &b.data()[bo..],
                    (plan.n as isize, 1),
                    T::zero(),
                    &mut out[bi * plan.m * plan.n..],
                );
            }
            Tensor::new(plan.out_shape, out)?
        };
        let rg = self.graph.needs(&[self.id, rhs.id]);
        Ok(self.graph.push(value, Op::MatMul(self.id, rhs.id), rg))
    }

    pub fn concat(self, other: Var<'g, T>, axis: usize) -> Result<Var<'g, T>> {
        self.graph.concat(&[self, other], axis)
    }

    /// `self[.., start..end, ..]` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'g, T>> {
        let value = {
            let t = self.value();
            let shape = t.shape();
            if axis >= shape.len() || start >= end || end > shape[axis] {
                return invalid(format!(
                    "slice {start}..{end} on axis {axis} of shape {shape:?}"
                ));
            }
            let (outer, n, inner) = split_axis(shape, axis);
            let width = (end - start) * inner;
            let mut data = Vec::with_capacity(outer * width);
            for o in 0..outer {
                let base = o * n * inner + start * inner;
                data.extend_from_slice(&t.data()[base..base + width]);
            }
            let mut out_shape = shape.to_vec();
            out_shape[axis] = end - start;
            Tensor::new(out_shape, data)?
        };
        let rg = self.graph.needs(&[self.id]);
        Ok(self.graph.push(
            value,
            Op::Slice {
                input: self.id,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'g, T>> {
        let value = {
            let t = self.value();
            let shape = t.shape();
            let mut seen = vec![false; shape.len()];
            if perm.len() != shape.len()
                || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
            {
                return invalid(format!("bad permutation {perm:?} for shape {shape:?}"));
            }
            let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
            let data = permute_data(t.data(), shape, perm);
            Tensor::new(out_shape, data)?
        };
        let rg = self.graph.needs(&[self.id]);
        Ok(self.graph.push(
            value,
            Op::Permute {
                input: self.id,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps two axes.
    pub fn transpose(self, a: usize, b: usize) -> Result<Var<'g, T>> {
        let rank = self.value().rank();
        if a >= rank || b >= rank {
            return invalid(format!("transpose axes ({a}, {b}) for rank {rank}"));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let value = self.value().clone().reshape(shape.to_vec())?;
        let rg = self.graph.needs(&[self.id]);
        Ok(self.graph.push(value, Op::Reshape(self.id), rg))
    }

    /// Rows of the `[vocab, dim]` table `self`; output shape is `ids_shape + [dim]`.
    pub fn embedding(self, ids: &[usize], ids_shape: &[usize]) -> Result<Var<'g, T>> {
        let value = {
            let table = self.value();
            if table.rank() != 2 {
                return invalid(format!("embedding table must be 2-d, got {:?}", table.shape()));
            }
            if ids_shape.iter().product::<usize>() != ids.len() {
                return shape_err("embedding", ids_shape, &[ids.len()]);
            }
            let (rows, dim) = (table.shape()[0], table.shape()[1]);
            let mut data = Vec::with_capacity(ids.len() * dim);
            for &id in ids {
                if id >= rows {
                    return invalid(format!("embedding id {id} out of range for {rows} rows"));
                }
                data.extend_from_slice(&table.data()[id * dim..(id + 1) * dim]);
            }
            let mut shape = ids_shape.to_vec();
            shape.push(dim);
            Tensor::new(shape, data)?
        };
        let rg = self.graph.needs(&[self.id]);
        Ok(self.graph.push(
            value,
            Op::Embedding {
                table: self.id,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'g, T>> {
        let value = {
            let t = self.value();
            if axis >= t.rank() {
                return invalid(format!("softmax axis {axis} for shape {:?}", t.shape()));
            }
            let (outer, n, inner) = split_axis(t.shape(), axis);
            let src = t.data();
            let mut out = vec![T::zero(); src.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * n * inner + j * inner + i;
                    let mut max = T::neg_infinity();
                    for j in 0..n {
                        max = max.max(src[at(j)]);
                    }
                    let mut total = T::zero();
                    for j in 0..n {
                        let e = (src[at(j)] - max).exp();
                        out[at(j)] = e;
                        total += e;
                    }
                    for j in 0..n {
                        out[at(j)] /= total;
                    }
                }
            }
            Tensor::new(t.shape().to_vec(), out)?
        };
        let rg = self.graph.needs(&[self.id]);
        Ok(self.graph.push(value, Op::Softmax { input: self.id, axis }, rg))
    }

    /// Normalizes over the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(self, gamma: Var<'g, T>, beta: Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
        let (value, xhat, rstd) = {
            let tape = self.graph.tape.borrow();
            let x = &tape.nodes[self.id].value;
            let g = &tape.nodes[gamma.id].value;
            let b = &tape.nodes[beta.id].value;
            let d = *x.shape().last().ok_or_else(|| {
                crate::TensorError::Invalid("layer_norm on a scalar".into())
            })?;
            if g.shape() != [d] || b.shape() != [d] {
                return shape_err("layer_norm", x.shape(), g.shape());
            }
            let eps = T::from_f64_lossy(eps);
            let dn = T::from_usize(d).expect("dim");
            let rows = x.numel() / d.max(1);
            let mut xhat = vec![T::zero(); x.numel()];
            let mut out = vec![T::zero(); x.numel()];
            let mut rstd = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = &x.data()[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                let rs = (var + eps).sqrt().recip();
                rstd.push(rs);
                for j in 0..d {
                    let xh = (row[j] - mean) * rs;
                    xhat[r * d + j] = xh;
                    out[r * d + j] = xh * g.data()[j] + b.data()[j];
                }
            }
            (Tensor::new(x.shape().to_vec(), out)?, xhat, rstd)
        };
        let rg = self.graph.needs(&[self.id, gamma.id, beta.id]);
        Ok(self.graph.push(
            value,
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

    /// Inverted dropout; identity outside training graphs.
    pub fn dropout(self, p: f64) -> Result<Var<'g, T>> {
        if !(0.0..1.0).contains(&p) {
            return invalid(format!("dropout probability {p} outside [0, 1)"));
        }
        if !self.graph.train || p == 0.0 {
            return Ok(self);
        }
        let n = self.value().numel();
        let mask = self.graph.draw_mask(n, p);
        let value = self.unary_value(|t| {
            let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            Tensor::new(t.shape().to_vec(), data).expect("same shape")
        });
        let rg = self.graph.needs(&[self.id]);
        Ok(self.graph.push(
            value,
            Op::Dropout {
                input: self.id,
                mask,
            },
            rg,
        ))
    }

    /// Mean token-level negative log-likelihood of `targets` under `self`
    /// (logits, last axis = classes), skipping positions equal to `ignore`.
    pub fn cross_entropy(self, targets: &[usize], ignore: Option<usize>) -> Result<Var<'g, T>> {
        let (probs, loss, count) = {
            let t = self.value();
            let classes = *t.shape().last().unwrap_or(&0);
            if classes == 0 || t.numel() / classes != targets.len() {
                return shape_err("cross_entropy", t.shape(), &[targets.len()]);
            }
            let mut probs = vec![T::zero(); t.numel()];
            let mut loss = T::zero();
            let mut count = 0usize;
            for (r, &target) in targets.iter().enumerate() {
                let row = &t.data()[r * classes..(r + 1) * classes];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let total: T = row.iter().map(|&v| (v - max).exp()).sum();
                let log_z = total.ln() + max;
                for (j, &v) in row.iter().enumerate() {
                    probs[r * classes + j] = (v - log_z).exp();
                }
                if Some(target) == ignore {
                    continue;
                }
                if target >= classes {
                    return invalid(format!("target id {target} out of range for {classes} classes"));
                }
                loss += log_z - row[target];
                count += 1;
            }
            if count == 0 {
                return invalid("every target position is ignored");
            }
            (probs, loss / T::from_usize(count).expect("count"), count)
        };
        let rg = self.graph.needs(&[self.id]);
        Ok(self.graph.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
            rg,
        ))
    }

    pub fn sum(self) -> Var<'g, T> {
        let total = self.value().data().iter().copied().sum();
        let rg = self.graph.needs(&[self.id]);
        self.graph.push(Tensor::scalar(total), Op::Sum(self.id), rg)
    }

    pub fn mean(self) -> Var<'g, T> {
        let (total, n) = {
            let v = self.value();
            (v.data().iter().copied().sum::<T>(), v.numel())
        };
        let mean = total / T::from_usize(n.max(1)).expect("count");
        let rg = self.graph.needs(&[self.id]);
        self.graph.push(Tensor::scalar(mean), Op::Mean(self.id), rg)
    }
}

/// One LSTM step. Gate layout along the `4 * hidden` axis is input, forget,
/// cell candidate, output.
///
/// Shapes: `x [b, e]`, `h, c [b, h]`, `w_ih [e, 4h]`, `w_hh [h, 4h]`, `bias [4h]`.
pub fn lstm_cell_step<'g, T: Scalar>(
    x: Var<'g, T>,
    h: Var<'g, T>,
    c: Var<'g, T>,
    w_ih: Var<'g, T>,
    w_hh: Var<'g, T>,
    bias: Var<'g, T>,
) -> Result<(Var<'g, T>, Var<'g, T>)> {
    let graph = x.graph;
    let (value, gates, tanh_c, hidden) = {
        let tape = graph.tape.borrow();
        let xv = &tape.nodes[x.id].value;
        let hv = &tape.nodes[h.id].value;
        let cv = &tape.nodes[c.id].value;
        let wi = &tape.nodes[w_ih.id].value;
        let wh = &tape.nodes[w_hh.id].value;
        let bv = &tape.nodes[bias.id].value;
        if xv.rank() != 2 || hv.rank() != 2 {
            return shape_err("lstm_cell_step", xv.shape(), hv.shape());
        }
        let (batch, input) = (xv.shape()[0], xv.shape()[1]);
        let hidden = hv.shape()[1];
        let four = 4 * hidden;
        if hv.shape()[0] != batch || cv.shape() != hv.shape() {
            return shape_err("lstm_cell_step", hv.shape(), cv.shape());
        }
        if wi.shape() != [input, four] {
            return shape_err("lstm_cell_step", xv.shape(), wi.shape());
        }
        if wh.shape() != [hidden, four] {
            return shape_err("lstm_cell_step", hv.shape(), wh.shape());
        }
        if bv.shape() != [four] {
            return shape_err("lstm_cell_step", &[four], bv.shape());
        }
        let mut z: Vec<T> = (0..batch).flat_map(|_| bv.data().iter().copied()).collect();
        T::gemm(batch, input, four, xv.data(), (input as isize, 1), wi.data(), (four as isize, 1), T::one(), &mut z);
        T::gemm(batch, hidden, four, hv.data(), (hidden as isize, 1), wh.data(), (four as isize, 1), T::one(), &mut z);
        let mut out = vec![T::zero(); batch * 2 * hidden];
        let mut tanh_c = vec![T::zero(); batch * hidden];
        for r in 0..batch {
            let zr = &mut z[r * four..(r + 1) * four];
            for j in 0..hidden {
                zr[j] = sigmoid(zr[j]);
                zr[hidden + j] = sigmoid(zr[hidden + j]);
                zr[2 * hidden + j] = zr[2 * hidden + j].tanh();
                zr[3 * hidden + j] = sigmoid(zr[3 * hidden + j]);
                let c_new = zr[hidden + j] * cv.data()[r * hidden + j] + zr[j] * zr[2 * hidden + j];
                let tc = c_new.tanh();
                tanh_c[r * hidden + j] = tc;
                out[r * 2 * hidden + j] = zr[3 * hidden + j] * tc;
                out[r * 2 * hidden + hidden + j] = c_new;
            }
        }
        (Tensor::new(vec![batch, 2 * hidden], out)?, z, tanh_c, hidden)
    };
    let rg = graph.needs(&[x.id, h.id, c.id, w_ih.id, w_hh.id, bias.id]);
    let joint = graph.push(
        value,
        Op::LstmCell {
            x: x.id,
            h: h.id,
            c: c.id,
            w_ih: w_ih.id,
            w_hh: w_hh.id,
            bias: bias.id,
            gates,
            tanh_c,
        },
        rg,
    );
    Ok((joint.slice(1, 0, hidden)?, joint.slice(1, hidden, 2 * hidden)?))
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        (T::one() + (-v).exp()).recip()
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn permute_data<T: Scalar>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    let mut counter = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(src[offset]);
        for ax in (0..out_shape.len()).rev() {
            counter[ax] += 1;
            offset += step[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= step[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    out
}

pub(crate) struct MatMulPlan {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// right operand shared across the batch
    pub shared_rhs: bool,
    pub out_shape: Vec<usize>,
}

impl MatMulPlan {
    pub(crate) fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return shape_err("matmul", a, b);
        }
        let k = a[a.len() - 1];
        if b.len() == 2 {
            if b[0] != k {
                return shape_err("matmul", a, b);
            }
            let m = a[..a.len() - 1].iter().product();
            let mut out_shape = a[..a.len() - 1].to_vec();
            out_shape.push(b[1]);
            return Ok(Self {
                batch: 1,
                m,
                k,
                n: b[1],
                shared_rhs: true,
                out_shape,
            });
        }
        let nb = a.len() - 2;
        if b.len() != a.len() || a[..nb] != b[..nb] || b[nb] != k {
            return shape_err("matmul", a, b);
        }
        let mut out_shape = a[..nb + 1].to_vec();
        out_shape.push(b[nb + 1]);
        Ok(Self {
            batch: a[..nb].iter().product(),
            m: a[nb],
            k,
            n: b[nb + 1],
            shared_rhs: false,
            out_shape,
        })
    }

    pub(crate) fn offsets(&self, bi: usize) -> (usize, usize) {
        let bo = if self.shared_rhs { 0 } else { bi * self.k * self.n };
        (bi * self.m * self.k, bo)
    }
}
