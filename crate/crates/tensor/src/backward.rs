use crate::broadcast::Broadcast;
use crate::error::{invalid, Result};
use crate::graph::{permute_data, Binary, Graph, MatMulPlan, Op, Unary, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::split_axis;

/// Gradients produced by one backward sweep, indexed by graph node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `var`, if it was reached.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Adds every parameter gradient into the store's `grad` buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(pid).grad.add_assign(g);
            }
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, len: usize) -> &mut Vec<T> {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Graph<T> {
    /// Backward pass that also accumulates into the parameter store.
    pub fn backward_into(&self, loss: Var<'_, T>, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        grads.accumulate_into(store);
        Ok(grads)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let tape = self.tape.borrow();
        let nodes = &tape.nodes;
        if nodes[loss.id].value.numel() != 1 {
            return invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        let mut params = Vec::new();
        let needs = |id: usize| nodes[id].requires_grad;
        let len = |id: usize| nodes[id].value.numel();

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Param(pid) => {
                    params.push((*pid, id));
                    grads[id] = Some(g);
                }
                Op::Binary(kind, a, b) => {
                    let (a, b) = (*a, *b);
                    let av = &nodes[a].value;
                    let bv = &nodes[b].value;
                    let bc = Broadcast::new("backward", av.shape(), bv.shape())?;
                    if needs(a) {
                        let ga = slot(&mut grads, a, len(a));
                        for (i, &gi) in g.iter().enumerate() {
                            let d = match kind {
                                Binary::Add | Binary::Sub => gi,
                                Binary::Mul => gi * bv.data()[bc.rhs.get(i)],
                            };
                            ga[bc.lhs.get(i)] += d;
                        }
                    }
                    if needs(b) {
                        let gb = slot(&mut grads, b, len(b));
                        for (i, &gi) in g.iter().enumerate() {
                            let d = match kind {
                                Binary::Add => gi,
                                Binary::Sub => -gi,
                                Binary::Mul => gi * av.data()[bc.lhs.get(i)],
                            };
                            gb[bc.rhs.get(i)] += d;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for (d, &gi) in ga.iter_mut().zip(&g) {
                        *d += gi * *c;
                    }
                }
                Op::Unary(kind, a) => {
                    let y = node.value.data();
                    let x = nodes[*a].value.data();
                    let ga = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i]
                            * match kind {
                                Unary::Tanh => T::one() - y[i] * y[i],
                                Unary::Sigmoid => y[i] * (T::one() - y[i]),
                                Unary::Relu => {
                                    if x[i] > T::zero() {
                                        T::one()
                                    } else {
                                        T::zero()
                                    }
                                }
                            };
                    }
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = &nodes[a].value;
                    let bv = &nodes[b].value;
                    let plan = MatMulPlan::new(av.shape(), bv.shape())?;
                    let (m, k, n) = (plan.m, plan.k, plan.n);
                    if needs(a) {
                        let ga = slot(&mut grads, a, len(a));
                        for bi in 0..plan.batch {
                            let (ao, bo) = plan.offsets(bi);
                            // dA = dC * B^T
                            T::gemm(
                                m,
                                n,
                                k,
                                &g[bi * m * n..],
                                (n as isize, 1),
                                &bv.data()[bo..],
                                (1, n as isize),
                                T::one(),
                                &mut ga[ao..],
                            );
                        }
                    }
                    if needs(b) {
                        let gb = slot(&mut grads, b, len(b));
                        for bi in 0..plan.batch {
                            let (ao, bo) = plan.offsets(bi);
                            // dB = A^T * dC
                            T::gemm(
                                k,
                                m,
                                n,
                                &av.data()[ao..],
                                (1, k as isize),
                                &g[bi * m * n..],
                                (n as isize, 1),
                                T::one(),
                                &mut gb[bo..],
                            );
                        }
                    }
                }
                Op::Concat { inputs, axis } => {
                    let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                    let mut offset = 0;
                    for &inp in inputs {
                        let width = nodes[inp].value.shape()[*axis];
                        if needs(inp) {
                            let gi = slot(&mut grads, inp, len(inp));
                            let block = width * inner;
                            for o in 0..outer {
                                let src = o * total * inner + offset * inner;
                                for (d, &s) in gi[o * block..(o + 1) * block]
                                    .iter_mut()
                                    .zip(&g[src..src + block])
                                {
                                    *d += s;
                                }
                            }
                        }
                        offset += width;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let (outer, n, inner) = split_axis(nodes[*input].value.shape(), *axis);
                    let width = node.value.shape()[*axis] * inner;
                    let gi = slot(&mut grads, *input, len(*input));
                    for o in 0..outer {
                        let base = o * n * inner + start * inner;
                        for (d, &s) in gi[base..base + width]
                            .iter_mut()
                            .zip(&g[o * width..(o + 1) * width])
                        {
                            *d += s;
                        }
                    }
                }
                Op::Permute { input, perm } => {
                    let mut inverse = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inverse[p] = i;
                    }
                    let back = permute_data(&g, node.value.shape(), &inverse);
                    let gi = slot(&mut grads, *input, back.len());
                    for (d, s) in gi.iter_mut().zip(back) {
                        *d += s;
                    }
                }
                Op::Reshape(input) => {
                    let gi = slot(&mut grads, *input, g.len());
                    for (d, &s) in gi.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                Op::Embedding { table, ids } => {
                    let dim = nodes[*table].value.shape()[1];
                    let gt = slot(&mut grads, *table, len(*table));
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..dim {
                            gt[id * dim + j] += g[r * dim + j];
                        }
                    }
                }
                Op::Softmax { input, axis } => {
                    let y = node.value.data();
                    let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                    let gi = slot(&mut grads, *input, g.len());
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * n * inner + j * inner + i;
                            let dot: T = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..n {
                                gi[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let d = nodes[*gamma].value.numel();
                    let gam = nodes[*gamma].value.data();
                    let rows = rstd.len();
                    if needs(*gamma) {
                        let gg = slot(&mut grads, *gamma, d);
                        for r in 0..rows {
                            for j in 0..d {
                                gg[j] += g[r * d + j] * xhat[r * d + j];
                            }
                        }
                    }
                    if needs(*beta) {
                        let gb = slot(&mut grads, *beta, d);
                        for r in 0..rows {
                            for j in 0..d {
                                gb[j] += g[r * d + j];
                            }
                        }
                    }
                    if needs(*x) {
                        let dn = T::from_usize(d).expect("dim");
                        let gx = slot(&mut grads, *x, rows * d);
                        for r in 0..rows {
                            let mut sum_d = T::zero();
                            let mut sum_dx = T::zero();
                            for j in 0..d {
                                let dxh = g[r * d + j] * gam[j];
                                sum_d += dxh;
                                sum_dx += dxh * xhat[r * d + j];
                            }
                            for j in 0..d {
                                let dxh = g[r * d + j] * gam[j];
                                gx[r * d + j] +=
                                    rstd[r] / dn * (dn * dxh - sum_d - xhat[r * d + j] * sum_dx);
                            }
                        }
                    }
                }
                Op::Dropout { input, mask } => {
                    let gi = slot(&mut grads, *input, g.len());
                    for i in 0..g.len() {
                        gi[i] += g[i] * mask[i];
                    }
                }
                Op::LstmCell {
                    x,
                    h,
                    c,
                    w_ih,
                    w_hh,
                    bias,
                    gates,
                    tanh_c,
                } => {
                    let hidden = nodes[*h].value.shape()[1];
                    let batch = nodes[*h].value.shape()[0];
                    let input = nodes[*x].value.shape()[1];
                    let four = 4 * hidden;
                    let cv = nodes[*c].value.data();
                    let mut dz = vec![T::zero(); batch * four];
                    let mut dc_prev = vec![T::zero(); batch * hidden];
                    for r in 0..batch {
                        let gr = &gates[r * four..(r + 1) * four];
                        for j in 0..hidden {
                            let (ig, fg, cg, og) =
                                (gr[j], gr[hidden + j], gr[2 * hidden + j], gr[3 * hidden + j]);
                            let tc = tanh_c[r * hidden + j];
                            let dh = g[r * 2 * hidden + j];
                            let dc = g[r * 2 * hidden + hidden + j]
                                + dh * og * (T::one() - tc * tc);
                            let zr = &mut dz[r * four..(r + 1) * four];
                            zr[j] = dc * cg * ig * (T::one() - ig);
                            zr[hidden + j] = dc * cv[r * hidden + j] * fg * (T::one() - fg);
                            zr[2 * hidden + j] = dc * ig * (T::one() - cg * cg);
                            zr[3 * hidden + j] = dh * tc * og * (T::one() - og);
                            dc_prev[r * hidden + j] = dc * fg;
                        }
                    }
                    if needs(*c) {
                        let gc = slot(&mut grads, *c, batch * hidden);
                        for (d, s) in gc.iter_mut().zip(dc_prev) {
                            *d += s;
                        }
                    }
                    if needs(*x) {
                        let wi = nodes[*w_ih].value.data();
                        let gx = slot(&mut grads, *x, batch * input);
                        T::gemm(batch, four, input, &dz, (four as isize, 1), wi, (1, four as isize), T::one(), gx);
                    }
                    if needs(*h) {
                        let wh = nodes[*w_hh].value.data();
                        let gh = slot(&mut grads, *h, batch * hidden);
                        T::gemm(batch, four, hidden, &dz, (four as isize, 1), wh, (1, four as isize), T::one(), gh);
                    }
                    if needs(*w_ih) {
                        let xv = nodes[*x].value.data();
                        let gw = slot(&mut grads, *w_ih, input * four);
                        T::gemm(input, batch, four, xv, (1, input as isize), &dz, (four as isize, 1), T::one(), gw);
                    }
                    if needs(*w_hh) {
                        let hv = nodes[*h].value.data();
                        let gw = slot(&mut grads, *w_hh, hidden * four);
                        T::gemm(hidden, batch, four, hv, (1, hidden as isize), &dz, (four as isize, 1), T::one(), gw);
                    }
                    if needs(*bias) {
                        let gb = slot(&mut grads, *bias, four);
                        for r in 0..batch {
                            for j in 0..four {
                                gb[j] += dz[r * four + j];
                            }
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    ignore,
                    probs,
                    count,
                } => {
                    let classes = probs.len() / targets.len();
                    let scale = g[0] / T::from_usize(*count).expect("count");
                    let gl = slot(&mut grads, *logits, probs.len());
                    for (r, &t) in targets.iter().enumerate() {
                        if Some(t) == *ignore {
                            continue;
                        }
                        for j in 0..classes {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            gl[r * classes + j] += scale * (probs[r * classes + j] - onehot);
                        }
                    }
                }
                Op::Sum(a) => {
                    let ga = slot(&mut grads, *a, len(*a));
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Mean(a) => {
                    let n = len(*a);
                    let share = g[0] / T::from_usize(n.max(1)).expect("count");
                    let ga = slot(&mut grads, *a, n);
                    ga.iter_mut().for_each(|d| *d += share);
                }
            }
        }
        Ok(Gradients { grads, params })
    }
}
