use std::cell::{Cell, Ref, RefCell};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::kernels::{gemm_acc, permute_index, reduce_index, MatRef};
use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Backward rule and the input references it needs. Forward values of every
/// node stay on the tape, so rules read their saved operands from there.
enum Op {
    Leaf,
    /// No input requires a gradient; nothing to propagate.
    Detached,
    MatMul {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        c: f64,
    },
    Permute {
        a: usize,
        axes: Vec<usize>,
    },
    Reshape {
        a: usize,
    },
    Slice {
        a: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    BroadcastLeading {
        a: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu {
        a: usize,
    },
    Relu {
        a: usize,
    },
    Softmax {
        a: usize,
        axis: usize,
    },
    Sum {
        a: usize,
        axes: Vec<usize>,
    },
    Mean {
        a: usize,
        axes: Vec<usize>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    SigmoidBce {
        logits: usize,
        targets: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of primitive applications.
///
/// Nodes are appended in execution order, which is a topological order;
/// [`Tape::backward`] visits them in exact reverse. A tape supports one
/// backward pass; call [`Tape::reset`] to allow another over the same graph.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros when it received none.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape().as_slice()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    /// Allow another backward pass over the recorded graph.
    pub fn reset(&self) {
        self.consumed.set(false);
    }

    fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op: if requires_grad { op } else { Op::Detached },
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(
            std::ptr::eq(loss.tape, self),
            "loss belongs to another tape"
        );
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::MissingTape(
                "loss does not depend on any tensor that requires grad".into(),
            ));
        }
        if self.consumed.replace(true) {
            return Err(Error::MissingTape(
                "tape already consumed by a backward pass; call reset()".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.id + 1);
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            propagate(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.map(|data| Tensor {
                    shape: nodes[id].value.shape().to_vec(),
                    data,
                })
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(slot);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Batch count, rows and columns of a (possibly batched) matrix shape.
fn mat_dims(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    (numel(&shape[..r - 2]), shape[r - 2], shape[r - 1])
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf | Op::Detached => {}
        Op::MatMul { a, b } => {
            let (batch, m, k) = mat_dims(val(*a).shape());
            let n = val(*b).shape().last().copied().unwrap_or(1);
            let (av, bv) = (val(*a).data(), val(*b).data());
            // dA = dC B^T ; dB = A^T dC, per batch.
            accumulate(grads, nodes, *a, |ga| {
                for p in 0..batch {
                    gemm_acc(
                        m,
                        n,
                        k,
                        MatRef {
                            data: &g[p * m * n..],
                            rs: n as isize,
                            cs: 1,
                        },
                        MatRef {
                            data: &bv[p * k * n..],
                            rs: 1,
                            cs: n as isize,
                        },
                        &mut ga[p * m * k..(p + 1) * m * k],
                    );
                }
            });
            accumulate(grads, nodes, *b, |gb| {
                for p in 0..batch {
                    gemm_acc(
                        k,
                        m,
                        n,
                        MatRef {
                            data: &av[p * m * k..],
                            rs: 1,
                            cs: k as isize,
                        },
                        MatRef {
                            data: &g[p * m * n..],
                            rs: n as isize,
                            cs: 1,
                        },
                        &mut gb[p * k * n..(p + 1) * k * n],
                    );
                }
            });
        }
        Op::Add { a, b } => {
            accumulate(grads, nodes, *a, |ga| add_into(ga, g));
            accumulate(grads, nodes, *b, |gb| add_into(gb, g));
        }
        Op::Sub { a, b } => {
            accumulate(grads, nodes, *a, |ga| add_into(ga, g));
            accumulate(grads, nodes, *b, |gb| {
                for (d, s) in gb.iter_mut().zip(g) {
                    *d -= s;
                }
            });
        }
        Op::Mul { a, b } => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            accumulate(grads, nodes, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * bv[i];
                }
            });
            accumulate(grads, nodes, *b, |gb| {
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            });
        }
        Op::Scale { a, c } => accumulate(grads, nodes, *a, |ga| {
            for (d, s) in ga.iter_mut().zip(g) {
                *d += c * s;
            }
        }),
        Op::Permute { a, axes } => {
            let src = permute_index(val(*a).shape(), axes);
            accumulate(grads, nodes, *a, |ga| {
                for (o, &s) in src.iter().enumerate() {
                    ga[s] += g[o];
                }
            });
        }
        Op::Reshape { a } => accumulate(grads, nodes, *a, |ga| add_into(ga, g)),
        Op::Slice { a, axis, start } => {
            let shape = val(*a).shape();
            let outer = numel(&shape[..*axis]);
            let inner = numel(&shape[axis + 1..]);
            let len = node.value.shape()[*axis];
            let full = shape[*axis];
            accumulate(grads, nodes, *a, |ga| {
                for o in 0..outer {
                    let src = (o * full + start) * inner;
                    let dst = o * len * inner;
                    add_into(&mut ga[src..src + len * inner], &g[dst..dst + len * inner]);
                }
            });
        }
        Op::Concat { parts, axis } => {
            let out_shape = node.value.shape();
            let outer = numel(&out_shape[..*axis]);
            let inner = numel(&out_shape[axis + 1..]);
            let total = out_shape[*axis];
            let mut offset = 0;
            for &p in parts {
                let len = val(p).shape()[*axis];
                accumulate(grads, nodes, p, |gp| {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * len * inner;
                        add_into(&mut gp[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                });
                offset += len;
            }
        }
        Op::BroadcastLeading { a } => {
            let inner = val(*a).len();
            accumulate(grads, nodes, *a, |ga| {
                for chunk in g.chunks_exact(inner) {
                    add_into(ga, chunk);
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let d = val(*gain).len();
            let gv = val(*gain).data();
            accumulate(grads, nodes, *x, |gx| {
                for (r, &istd) in inv_std.iter().enumerate() {
                    let rows = r * d..(r + 1) * d;
                    let (gr, xr) = (&g[rows.clone()], &xhat[rows.clone()]);
                    let mut mean_dx = 0.0;
                    let mut mean_dx_x = 0.0;
                    for j in 0..d {
                        let dxhat = gr[j] * gv[j];
                        mean_dx += dxhat;
                        mean_dx_x += dxhat * xr[j];
                    }
                    mean_dx /= d as f64;
                    mean_dx_x /= d as f64;
                    let out = &mut gx[rows];
                    for j in 0..d {
                        out[j] += istd * (gr[j] * gv[j] - mean_dx - xr[j] * mean_dx_x);
                    }
                }
            });
            accumulate(grads, nodes, *gain, |gg| {
                for (gr, xr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for j in 0..d {
                        gg[j] += gr[j] * xr[j];
                    }
                }
            });
            accumulate(grads, nodes, *bias, |gb| {
                for gr in g.chunks_exact(d) {
                    add_into(gb, gr);
                }
            });
        }
        Op::Gelu { a } => {
            let av = val(*a).data();
            accumulate(grads, nodes, *a, |ga| {
                let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
                for i in 0..g.len() {
                    let x = av[i];
                    let cdf = 0.5 * (1.0 + erf(x * FRAC_1_SQRT_2));
                    let pdf = inv_sqrt_2pi * (-0.5 * x * x).exp();
                    ga[i] += g[i] * (cdf + x * pdf);
                }
            });
        }
        Op::Relu { a } => {
            let av = val(*a).data();
            accumulate(grads, nodes, *a, |ga| {
                for i in 0..g.len() {
                    if av[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            });
        }
        Op::Softmax { a, axis } => {
            let y = node.value.data();
            let shape = node.value.shape();
            let (outer, len, inner) = (
                numel(&shape[..*axis]),
                shape[*axis],
                numel(&shape[axis + 1..]),
            );
            accumulate(grads, nodes, *a, |ga| {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |t: usize| (o * len + t) * inner + i;
                        let dot: f64 = (0..len).map(|t| g[at(t)] * y[at(t)]).sum();
                        for t in 0..len {
                            ga[at(t)] += y[at(t)] * (g[at(t)] - dot);
                        }
                    }
                }
            });
        }
        Op::Sum { a, axes } | Op::Mean { a, axes } => {
            let (map, _) = reduce_index(val(*a).shape(), axes);
            let factor = if matches!(node.op, Op::Mean { .. }) {
                let reduced: usize = axes.iter().map(|&ax| val(*a).shape()[ax]).product();
                1.0 / reduced as f64
            } else {
                1.0
            };
            accumulate(grads, nodes, *a, |ga| {
                for (i, &o) in map.iter().enumerate() {
                    ga[i] += factor * g[o];
                }
            });
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let classes = probs.len() / targets.len();
            let scale = g[0] / targets.len() as f64;
            accumulate(grads, nodes, *logits, |gl| {
                for (r, &t) in targets.iter().enumerate() {
                    for c in 0..classes {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        gl[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                    }
                }
            });
        }
        Op::SigmoidBce { logits, targets } => {
            let z = val(*logits).data();
            let scale = g[0] / targets.len() as f64;
            accumulate(grads, nodes, *logits, |gl| {
                for i in 0..targets.len() {
                    gl[i] += scale * (sigmoid(z[i]) - targets[i]);
                }
            });
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        self.tape.value(self.id)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands live on different tapes"
        );
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, rg, op)
    }

    fn binary(&self, other: &Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, rg, op)
    }

    fn elementwise(
        &self,
        other: &Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::dim(name, a.shape(), b.shape()));
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor {
            shape: a.shape().to_vec(),
            data,
        })
    }

    /// Matrix product over the last two axes. Operands are either both 2-D
    /// or share identical leading (batch) dimensions.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let out = {
            let (a, b) = (self.value(), other.value());
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return Err(Error::dim("matmul", sa, sb));
            }
            let (batch, m, k) = mat_dims(sa);
            let (_, k2, n) = mat_dims(sb);
            if k != k2 {
                return Err(Error::dim("matmul", sa, sb));
            }
            let mut c = vec![0.0; batch * m * n];
            for p in 0..batch {
                gemm_acc(
                    m,
                    k,
                    n,
                    MatRef {
                        data: &a.data()[p * m * k..],
                        rs: k as isize,
                        cs: 1,
                    },
                    MatRef {
                        data: &b.data()[p * k * n..],
                        rs: n as isize,
                        cs: 1,
                    },
                    &mut c[p * m * n..(p + 1) * m * n],
                );
            }
            let mut shape = sa.to_vec();
            *shape.last_mut().unwrap() = n;
            Tensor { shape, data: c }
        };
        Ok(self.binary(
            other,
            out,
            Op::MatMul {
                a: self.id,
                b: other.id,
            },
        ))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let out = self.elementwise(other, "add", |x, y| x + y)?;
        Ok(self.binary(
            other,
            out,
            Op::Add {
                a: self.id,
                b: other.id,
            },
        ))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let out = self.elementwise(other, "sub", |x, y| x - y)?;
        Ok(self.binary(
            other,
            out,
            Op::Sub {
                a: self.id,
                b: other.id,
            },
        ))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let out = self.elementwise(other, "mul", |x, y| x * y)?;
        Ok(self.binary(
            other,
            out,
            Op::Mul {
                a: self.id,
                b: other.id,
            },
        ))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let out = {
            let a = self.value();
            Tensor {
                shape: a.shape().to_vec(),
                data: a.data().iter().map(|v| v * c).collect(),
            }
        };
        self.unary(out, Op::Scale { a: self.id, c })
    }

    /// General axis permutation; `out.shape[i] = in.shape[axes[i]]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let mut seen = vec![false; a.shape().len()];
            if axes.len() != seen.len()
                || axes
                    .iter()
                    .any(|&x| x >= seen.len() || std::mem::replace(&mut seen[x], true))
            {
                return Err(Error::dim("permute", a.shape(), axes));
            }
            let src = permute_index(a.shape(), axes);
            Tensor {
                shape: axes.iter().map(|&x| a.shape()[x]).collect(),
                data: src.iter().map(|&s| a.data()[s]).collect(),
            }
        };
        Ok(self.unary(
            out,
            Op::Permute {
                a: self.id,
                axes: axes.to_vec(),
            },
        ))
    }

    /// Swap two axes.
    pub fn transpose(&self, d0: usize, d1: usize) -> Result<Var<'t>> {
        let rank = self.value().shape().len();
        if d0 >= rank || d1 >= rank {
            return Err(Error::dim("transpose", &self.shape(), &[d0, d1]));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(d0, d1);
        self.permute(&axes)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.to_tensor().reshape(shape)?;
        Ok(self.unary(out, Op::Reshape { a: self.id }))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let shape = a.shape();
            if axis >= shape.len() || start >= end || end > shape[axis] {
                return Err(Error::dim("slice", shape, &[axis, start, end]));
            }
            let outer = numel(&shape[..axis]);
            let inner = numel(&shape[axis + 1..]);
            let len = end - start;
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let src = (o * shape[axis] + start) * inner;
                data.extend_from_slice(&a.data()[src..src + len * inner]);
            }
            let mut out_shape = shape.to_vec();
            out_shape[axis] = len;
            Tensor {
                shape: out_shape,
                data,
            }
        };
        Ok(self.unary(
            out,
            Op::Slice {
                a: self.id,
                axis,
                start,
            },
        ))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("concat of zero tensors".into()))?;
        let out = {
            let values: Vec<_> = parts
                .iter()
                .map(|p| {
                    first.same_tape(p);
                    p.value()
                })
                .collect();
            let base = values[0].shape().to_vec();
            if axis >= base.len() {
                return Err(Error::dim("concat", &base, &[axis]));
            }
            let mut total = 0;
            for v in &values {
                let s = v.shape();
                if s.len() != base.len()
                    || s.iter()
                        .enumerate()
                        .any(|(i, &d)| i != axis && d != base[i])
                {
                    return Err(Error::dim("concat", &base, s));
                }
                total += s[axis];
            }
            let outer = numel(&base[..axis]);
            let inner = numel(&base[axis + 1..]);
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for v in &values {
                    let len = v.shape()[axis] * inner;
                    data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
                }
            }
            let mut shape = base;
            shape[axis] = total;
            Tensor { shape, data }
        };
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(first.tape.push(
            out,
            rg,
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
                axis,
            },
        ))
    }

    /// Explicit broadcast: stack `n` copies along a new leading axis.
    pub fn broadcast_leading(&self, n: usize) -> Result<Var<'t>> {
        if n == 0 {
            return Err(Error::Input("broadcast to zero copies".into()));
        }
        let out = {
            let a = self.value();
            let mut shape = vec![n];
            shape.extend_from_slice(a.shape());
            let mut data = Vec::with_capacity(n * a.len());
            for _ in 0..n {
                data.extend_from_slice(a.data());
            }
            Tensor { shape, data }
        };
        Ok(self.unary(out, Op::BroadcastLeading { a: self.id }))
    }

    /// Normalize over the last axis, then apply per-feature gain and bias.
    pub fn layernorm(&self, gain: &Var<'t>, bias: &Var<'t>, eps: f64) -> Result<Var<'t>> {
        self.same_tape(gain);
        self.same_tape(bias);
        let (out, xhat, inv_std) = {
            let (x, g, b) = (self.value(), gain.value(), bias.value());
            let d = *x
                .shape()
                .last()
                .ok_or_else(|| Error::dim("layernorm", x.shape(), g.shape()))?;
            if g.shape() != [d] || b.shape() != [d] {
                return Err(Error::dim("layernorm", x.shape(), g.shape()));
            }
            let rows = x.len() / d;
            let mut xhat = Vec::with_capacity(x.len());
            let mut inv_std = Vec::with_capacity(rows);
            let mut out = Vec::with_capacity(x.len());
            for row in x.data().chunks_exact(d) {
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let istd = 1.0 / (var + eps).sqrt();
                inv_std.push(istd);
                for (j, v) in row.iter().enumerate() {
                    let h = (v - mean) * istd;
                    xhat.push(h);
                    out.push(h * g.data()[j] + b.data()[j]);
                }
            }
            (
                Tensor {
                    shape: x.shape().to_vec(),
                    data: out,
                },
                xhat,
                inv_std,
            )
        };
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            out,
            rg,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
        ))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let a = self.value();
        Tensor {
            shape: a.shape().to_vec(),
            data: a.data().iter().map(|&v| f(v)).collect(),
        }
    }

    /// Exact GELU, `x * Phi(x)` with the erf-based normal CDF.
    pub fn gelu(&self) -> Var<'t> {
        let out = self.map(|x| 0.5 * x * (1.0 + erf(x * FRAC_1_SQRT_2)));
        self.unary(out, Op::Gelu { a: self.id })
    }

    /// `max(0, x)`; the backward pass uses subgradient 0 at exactly 0.
    pub fn relu(&self) -> Var<'t> {
        let out = self.map(|x| if x > 0.0 { x } else { 0.0 });
        self.unary(out, Op::Relu { a: self.id })
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let shape = a.shape();
            if axis >= shape.len() {
                return Err(Error::dim("softmax", shape, &[axis]));
            }
            let (outer, len, inner) = (
                numel(&shape[..axis]),
                shape[axis],
                numel(&shape[axis + 1..]),
            );
            let x = a.data();
            let mut y = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |t: usize| (o * len + t) * inner + i;
                    let max = (0..len).map(|t| x[at(t)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for t in 0..len {
                        let e = (x[at(t)] - max).exp();
                        y[at(t)] = e;
                        total += e;
                    }
                    for t in 0..len {
                        y[at(t)] /= total;
                    }
                }
            }
            Tensor {
                shape: shape.to_vec(),
                data: y,
            }
        };
        Ok(self.unary(out, Op::Softmax { a: self.id, axis }))
    }

    fn reduce(&self, axes: &[usize], name: &'static str) -> Result<(Tensor, Vec<usize>)> {
        let a = self.value();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.iter().any(|&x| x >= a.shape().len()) {
            return Err(Error::dim(name, a.shape(), &axes));
        }
        let (map, out_shape) = reduce_index(a.shape(), &axes);
        let mut data = vec![0.0; numel(&out_shape)];
        for (v, &o) in a.data().iter().zip(&map) {
            data[o] += v;
        }
        Ok((
            Tensor {
                shape: out_shape,
                data,
            },
            axes,
        ))
    }

    /// Sum over `axes` (removed from the shape); all axes gives a scalar.
    pub fn sum(&self, axes: &[usize]) -> Result<Var<'t>> {
        let (out, axes) = self.reduce(axes, "sum")?;
        Ok(self.unary(out, Op::Sum { a: self.id, axes }))
    }

    pub fn mean(&self, axes: &[usize]) -> Result<Var<'t>> {
        let (mut out, axes) = self.reduce(axes, "mean")?;
        let shape = self.shape();
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        for v in out.data_mut() {
            *v /= count as f64;
        }
        Ok(self.unary(out, Op::Mean { a: self.id, axes }))
    }

    pub fn sum_all(&self) -> Result<Var<'t>> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.sum(&axes)
    }

    /// Mean softmax cross-entropy of `(rows, classes)` logits against class
    /// indices.
    pub fn cross_entropy_with_logits(&self, targets: &[usize]) -> Result<Var<'t>> {
        let (loss, probs) = {
            let a = self.value();
            let s = a.shape();
            if s.len() != 2 || s[0] != targets.len() {
                return Err(Error::dim("cross_entropy", s, &[targets.len()]));
            }
            let classes = s[1];
            if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
                return Err(Error::Input(format!("class {t} out of {classes}")));
            }
            let mut probs = Vec::with_capacity(a.len());
            let mut loss = 0.0;
            for (row, &t) in a.data().chunks_exact(classes).zip(targets) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - row[t];
                probs.extend(row.iter().map(|v| (v - lse).exp()));
            }
            (loss / targets.len() as f64, probs)
        };
        Ok(self.unary(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Mean elementwise binary cross-entropy between `sigmoid(self)` and
    /// `targets` in `[0, 1]`, computed in the stable
    /// `max(z, 0) - z t + ln(1 + e^-|z|)` form.
    pub fn sigmoid_bce(&self, targets: &Tensor) -> Result<Var<'t>> {
        let loss = {
            let z = self.value();
            if z.shape() != targets.shape() {
                return Err(Error::dim("sigmoid_bce", z.shape(), targets.shape()));
            }
            let total: f64 = z
                .data()
                .iter()
                .zip(targets.data())
                .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
                .sum();
            total / z.len() as f64
        };
        Ok(self.unary(
            Tensor::scalar(loss),
            Op::SigmoidBce {
                logits: self.id,
                targets: targets.data().to_vec(),
            },
        ))
    }
}
