use statrs::function::gamma::{digamma, ln_gamma};

use super::array::DiffArray;
use crate::error::{Error, Result};
use crate::parallel;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis selection for reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce every element to a scalar.
    All,
    /// Reduce along one axis; the axis is removed from the output shape.
    Dim(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Exp,
    /// Natural log; fails on non-positive input.
    Log,
    Sigmoid,
    Relu,
    Negate,
    Scale(f64),
    Offset(f64),
    Clamp {
        lo: f64,
        hi: f64,
    },
    /// `log(1 + e^x)`, evaluated without overflow.
    Softplus,
    /// `log Γ(x)`; fails on non-positive input.
    LnGamma,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    LogSumExp,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Unary(UnaryOp, Var),
    Binary {
        op: BinaryOp,
        lhs: Var,
        rhs: Var,
        // output index -> input index, present only when broadcasting
        lhs_map: Option<Vec<usize>>,
        rhs_map: Option<Vec<usize>>,
    },
    MatMul {
        lhs: Var,
        rhs: Var,
        p: usize,
        q: usize,
        r: usize,
    },
    Reduce {
        op: ReduceOp,
        input: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Softmax {
        input: Var,
        width: usize,
    },
    Reshape(Var),
    RowNorm {
        input: Var,
        width: usize,
    },
    Select {
        input: Var,
        width: usize,
        index: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Dynamic reverse-mode tape. Rebuilt on every forward pass and cleared by
/// [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the tape's leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `var` into `target.grad`. Does nothing if `target`
    /// does not require gradients or the leaf was unreachable from the loss.
    pub fn accumulate_into(&self, var: Var, target: &mut DiffArray) {
        if let Some(g) = self.get(var) {
            target.add_grad(g);
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for d in 0..nd {
        let da = if d + a.len() >= nd {
            a[d + a.len() - nd]
        } else {
            1
        };
        let db = if d + b.len() >= nd {
            b[d + b.len() - nd]
        } else {
            1
        };
        out[d] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn broadcast_map(out: &[usize], input: &[usize]) -> Vec<usize> {
    let nd = out.len();
    let offset = nd - input.len();
    let mut in_strides = vec![0usize; nd];
    let mut stride = 1;
    for d in (0..input.len()).rev() {
        if input[d] != 1 {
            in_strides[d + offset] = stride;
        }
        stride *= input[d];
    }
    let n: usize = out.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; nd];
    let mut pos = 0usize;
    for _ in 0..n {
        map.push(pos);
        for d in (0..nd).rev() {
            idx[d] += 1;
            pos += in_strides[d];
            if idx[d] < out[d] {
                break;
            }
            pos -= in_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a trainable array. The array's `requires_grad` flag decides
    /// whether the leaf collects a gradient.
    pub fn leaf(&mut self, array: &DiffArray) -> Var {
        let op = if array.requires_grad() {
            Op::Leaf
        } else {
            Op::Constant
        };
        self.push(
            array.shape().to_vec(),
            array.values().to_vec(),
            op,
            array.requires_grad(),
        )
    }

    /// A gradient-collecting leaf built from raw values.
    pub fn leaf_values(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        Self::check_len(shape, &values)?;
        Ok(self.push(shape.to_vec(), values, Op::Leaf, true))
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        Self::check_len(shape, &values)?;
        Ok(self.push(shape.to_vec(), values, Op::Constant, false))
    }

    /// Binds the values of `array` without gradient tracking.
    pub fn frozen(&mut self, array: &DiffArray) -> Var {
        self.push(
            array.shape().to_vec(),
            array.values().to_vec(),
            Op::Constant,
            false,
        )
    }

    pub fn scalar(&mut self, c: f64) -> Var {
        self.push(Vec::new(), vec![c], Op::Constant, false)
    }

    fn check_len(shape: &[usize], values: &[f64]) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::dim("constant", shape, &[values.len()]));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let value = parallel::gemm_nn(self.value(a), self.value(b), p, q, r);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(
            vec![p, r],
            value,
            Op::MatMul {
                lhs: a,
                rhs: b,
                p,
                q,
                r,
            },
            rg,
        ))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| {
            Error::dim(
                match op {
                    BinaryOp::Add => "add",
                    BinaryOp::Sub => "sub",
                    BinaryOp::Mul => "mul",
                },
                &sa,
                &sb,
            )
        })?;
        let lhs_map = (sa != out_shape).then(|| broadcast_map(&out_shape, &sa));
        let rhs_map = (sb != out_shape).then(|| broadcast_map(&out_shape, &sb));
        let n: usize = out_shape.iter().product();
        let (va, vb) = (self.value(a), self.value(b));
        let f = match op {
            BinaryOp::Add => |x: f64, y: f64| x + y,
            BinaryOp::Sub => |x: f64, y: f64| x - y,
            BinaryOp::Mul => |x: f64, y: f64| x * y,
        };
        let value: Vec<f64> = match (&lhs_map, &rhs_map) {
            (None, None) => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            (Some(ma), None) => (0..n).map(|i| f(va[ma[i]], vb[i])).collect(),
            (None, Some(mb)) => (0..n).map(|i| f(va[i], vb[mb[i]])).collect(),
            (Some(ma), Some(mb)) => (0..n).map(|i| f(va[ma[i]], vb[mb[i]])).collect(),
        };
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(
            out_shape,
            value,
            Op::Binary {
                op,
                lhs: a,
                rhs: b,
                lhs_map,
                rhs_map,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let input = self.value(x);
        let value: Vec<f64> = match op {
            UnaryOp::Exp => input.iter().map(|v| v.exp()).collect(),
            UnaryOp::Log => {
                if let Some(bad) = input.iter().find(|&&v| !(v > 0.0)) {
                    return Err(Error::NumericDomain {
                        op: "log",
                        detail: format!("non-positive argument {bad}"),
                    });
                }
                input.iter().map(|v| v.ln()).collect()
            }
            UnaryOp::Sigmoid => input.iter().map(|&v| stable_sigmoid(v)).collect(),
            UnaryOp::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
            UnaryOp::Negate => input.iter().map(|&v| -v).collect(),
            UnaryOp::Scale(c) => input.iter().map(|&v| c * v).collect(),
            UnaryOp::Offset(c) => input.iter().map(|&v| v + c).collect(),
            UnaryOp::Clamp { lo, hi } => input.iter().map(|&v| v.clamp(lo, hi)).collect(),
            UnaryOp::Softplus => input.iter().map(|&v| softplus(v)).collect(),
            UnaryOp::LnGamma => {
                if let Some(bad) = input.iter().find(|&&v| !(v > 0.0)) {
                    return Err(Error::NumericDomain {
                        op: "lgamma",
                        detail: format!("non-positive argument {bad}"),
                    });
                }
                input.iter().map(|&v| ln_gamma(v)).collect()
            }
            UnaryOp::Square => input.iter().map(|&v| v * v).collect(),
        };
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(shape, value, Op::Unary(op, x), rg))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Negate, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(UnaryOp::Scale(c), x)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(UnaryOp::Offset(c), x)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(UnaryOp::Clamp { lo, hi }, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Softplus, x)
    }

    pub fn ln_gamma(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::LnGamma, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, x)
    }

    pub fn reduce(&mut self, op: ReduceOp, x: Var, axis: Axis) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner, out_shape) = match axis {
            Axis::All => (1, shape.iter().product(), 1, Vec::new()),
            Axis::Dim(a) => {
                if a >= shape.len() {
                    return Err(Error::dim("reduce", &shape, &[a]));
                }
                let mut out = shape.clone();
                out.remove(a);
                (
                    shape[..a].iter().product(),
                    shape[a],
                    shape[a + 1..].iter().product(),
                    out,
                )
            }
        };
        let input = self.value(x);
        let mut value = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| input[(o * len + l) * inner + i];
                value[o * inner + i] = match op {
                    ReduceOp::Sum => (0..len).map(at).sum(),
                    ReduceOp::Mean => (0..len).map(at).sum::<f64>() / len as f64,
                    ReduceOp::LogSumExp => {
                        let m = (0..len).map(at).fold(f64::NEG_INFINITY, f64::max);
                        if m.is_infinite() {
                            m
                        } else {
                            m + (0..len).map(|l| (at(l) - m).exp()).sum::<f64>().ln()
                        }
                    }
                };
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(
            out_shape,
            value,
            Op::Reduce {
                op,
                input: x,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, x, Axis::All)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceOp::Sum, x, Axis::Dim(axis))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, x, Axis::All)
    }

    pub fn logsumexp(&mut self, x: Var, axis: Axis) -> Result<Var> {
        self.reduce(ReduceOp::LogSumExp, x, axis)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape
            .last()
            .ok_or_else(|| Error::dim("softmax", &shape, &[]))?;
        let input = self.value(x);
        let mut value = vec![0.0; input.len()];
        if width > 0 {
            for (row, out) in input.chunks(width).zip(value.chunks_mut(width)) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = (v - m).exp();
                    z += *o;
                }
                out.iter_mut().for_each(|o| *o /= z);
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(shape, value, Op::Softmax { input: x, width }, rg))
    }

    /// `x - logsumexp(x)` over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let nd = self.shape(x).len();
        if nd == 0 {
            return Err(Error::dim("log_softmax", &[], &[]));
        }
        let lse = self.logsumexp(x, Axis::Dim(nd - 1))?;
        let mut keep = self.shape(x).to_vec();
        keep[nd - 1] = 1;
        let lse = self.reshape(lse, &keep)?;
        self.sub(x, lse)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::dim("reshape", self.shape(x), shape));
        }
        let value = self.value(x).to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), rg))
    }

    /// Euclidean norm over the last axis. The gradient at the origin is zero.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape
            .last()
            .ok_or_else(|| Error::dim("row_norm", &shape, &[]))?;
        let value: Vec<f64> = if width == 0 {
            Vec::new()
        } else {
            self.value(x)
                .chunks(width)
                .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect()
        };
        let rg = self.requires_grad(x);
        Ok(self.push(
            shape[..shape.len() - 1].to_vec(),
            value,
            Op::RowNorm { input: x, width },
            rg,
        ))
    }

    /// Picks `x[row, index[row]]` along the last axis.
    pub fn select_last(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape
            .last()
            .ok_or_else(|| Error::dim("select_last", &shape, &[]))?;
        let rows: usize = shape[..shape.len() - 1].iter().product();
        if index.len() != rows {
            return Err(Error::dim("select_last", &shape, &[index.len()]));
        }
        if let Some(&bad) = index.iter().find(|&&k| k >= width) {
            return Err(Error::Index {
                what: "select_last",
                index: bad,
                limit: width,
            });
        }
        let input = self.value(x);
        let value: Vec<f64> = index
            .iter()
            .enumerate()
            .map(|(r, &k)| input[r * width + k])
            .collect();
        let rg = self.requires_grad(x);
        Ok(self.push(
            shape[..shape.len() - 1].to_vec(),
            value,
            Op::Select {
                input: x,
                width,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Runs reverse accumulation from a single-element `loss` and clears the
    /// tape. Leaves that the loss does not reach get no entry.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let nodes = std::mem::take(&mut self.nodes);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn slot<'g>(
            grads: &'g mut [Option<Vec<f64>>],
            nodes: &[Node],
            v: Var,
        ) -> Option<&'g mut Vec<f64>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let n = nodes[v.0].value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
        }

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf | Op::Constant => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Unary(op, x) => {
                    let xv = &nodes[x.0].value;
                    let y = &node.value;
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        for i in 0..g.len() {
                            gx[i] += g[i]
                                * match *op {
                                    UnaryOp::Exp => y[i],
                                    UnaryOp::Log => 1.0 / xv[i],
                                    UnaryOp::Sigmoid => y[i] * (1.0 - y[i]),
                                    UnaryOp::Relu => {
                                        if xv[i] > 0.0 {
                                            1.0
                                        } else {
                                            0.0
                                        }
                                    }
                                    UnaryOp::Negate => -1.0,
                                    UnaryOp::Scale(c) => c,
                                    UnaryOp::Offset(_) => 1.0,
                                    UnaryOp::Clamp { lo, hi } => {
                                        if xv[i] >= lo && xv[i] <= hi {
                                            1.0
                                        } else {
                                            0.0
                                        }
                                    }
                                    UnaryOp::Softplus => stable_sigmoid(xv[i]),
                                    UnaryOp::LnGamma => digamma(xv[i]),
                                    UnaryOp::Square => 2.0 * xv[i],
                                };
                        }
                    }
                }
                Op::Binary {
                    op,
                    lhs,
                    rhs,
                    lhs_map,
                    rhs_map,
                } => {
                    let va = &nodes[lhs.0].value;
                    let vb = &nodes[rhs.0].value;
                    let ia = |i: usize| lhs_map.as_ref().map_or(i, |m| m[i]);
                    let ib = |i: usize| rhs_map.as_ref().map_or(i, |m| m[i]);
                    if let Some(ga) = slot(&mut grads, &nodes, *lhs) {
                        for i in 0..g.len() {
                            ga[ia(i)] += match op {
                                BinaryOp::Add | BinaryOp::Sub => g[i],
                                BinaryOp::Mul => g[i] * vb[ib(i)],
                            };
                        }
                    }
                    if let Some(gb) = slot(&mut grads, &nodes, *rhs) {
                        for i in 0..g.len() {
                            gb[ib(i)] += match op {
                                BinaryOp::Add => g[i],
                                BinaryOp::Sub => -g[i],
                                BinaryOp::Mul => g[i] * va[ia(i)],
                            };
                        }
                    }
                }
                Op::MatMul { lhs, rhs, p, q, r } => {
                    let (p, q, r) = (*p, *q, *r);
                    if nodes[lhs.0].requires_grad {
                        let d = parallel::gemm_nt(&g, &nodes[rhs.0].value, p, q, r);
                        let ga = slot(&mut grads, &nodes, *lhs).expect("requires grad");
                        ga.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
                    }
                    if nodes[rhs.0].requires_grad {
                        let d = parallel::gemm_tn(&nodes[lhs.0].value, &g, p, q, r);
                        let gb = slot(&mut grads, &nodes, *rhs).expect("requires grad");
                        gb.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
                    }
                }
                Op::Reduce {
                    op,
                    input,
                    outer,
                    len,
                    inner,
                } => {
                    let xv = &nodes[input.0].value;
                    let y = &node.value;
                    if let Some(gx) = slot(&mut grads, &nodes, *input) {
                        for o in 0..*outer {
                            for i in 0..*inner {
                                let go = g[o * inner + i];
                                for l in 0..*len {
                                    let at = (o * len + l) * inner + i;
                                    gx[at] += match op {
                                        ReduceOp::Sum => go,
                                        ReduceOp::Mean => go / *len as f64,
                                        ReduceOp::LogSumExp => {
                                            let yo = y[o * inner + i];
                                            if yo.is_infinite() {
                                                0.0
                                            } else {
                                                go * (xv[at] - yo).exp()
                                            }
                                        }
                                    };
                                }
                            }
                        }
                    }
                }
                Op::Softmax { input, width } => {
                    let y = &node.value;
                    let w = *width;
                    if let Some(gx) = slot(&mut grads, &nodes, *input) {
                        if let Some(rows) = y.len().checked_div(w) {
                            for r in 0..rows {
                                let ys = &y[r * w..(r + 1) * w];
                                let gs = &g[r * w..(r + 1) * w];
                                let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                                for k in 0..w {
                                    gx[r * w + k] += ys[k] * (gs[k] - dot);
                                }
                            }
                        }
                    }
                }
                Op::Reshape(x) => {
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        gx.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    }
                }
                Op::RowNorm { input, width } => {
                    let xv = &nodes[input.0].value;
                    let y = &node.value;
                    let w = *width;
                    if let Some(gx) = slot(&mut grads, &nodes, *input) {
                        for r in 0..y.len() {
                            if y[r] > 0.0 {
                                for k in 0..w {
                                    gx[r * w + k] += g[r] * xv[r * w + k] / y[r];
                                }
                            }
                        }
                    }
                }
                Op::Select {
                    input,
                    width,
                    index,
                } => {
                    if let Some(gx) = slot(&mut grads, &nodes, *input) {
                        for (r, &k) in index.iter().enumerate() {
                            gx[r * width + k] += g[r];
                        }
                    }
                }
            }
        }
        // keep leaf gradients only
        for (i, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matmul_identity_and_hand_cases() {
        let mut t = Tape::new();
        let eye = t.constant(&[2, 2], vec![1., 0., 0., 1.]).unwrap();
        let b = t.constant(&[2, 1], vec![2., 3.]).unwrap();
        let c = t.matmul(eye, b).unwrap();
        assert_eq!(t.value(c), &[2., 3.]);
        assert_eq!(t.shape(c), &[2, 1]);

        let a = t.constant(&[1, 2], vec![1., 2.]).unwrap();
        let b = t.constant(&[2, 1], vec![3., 4.]).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c), &[11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(&[2, 3], vec![0.; 6]).unwrap();
        let b = t.constant(&[2, 3], vec![0.; 6]).unwrap();
        match t.matmul(a, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matmul_backward_wrt_lhs() {
        let mut t = Tape::new();
        let a = t.leaf_values(&[1, 2], vec![0.3, -0.7]).unwrap();
        let b = t.constant(&[2, 1], vec![3., 4.]).unwrap();
        let c = t.matmul(a, b).unwrap();
        let s = t.sum(c).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[3., 4.]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf_values(&[1], vec![0.0]).unwrap();
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y), &[0.5]);
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.25]);
    }

    #[test]
    fn softmax_uniform_and_exp_log_inverse() {
        let mut t = Tape::new();
        let x = t.constant(&[3], vec![0., 0., 0.]).unwrap();
        let y = t.softmax(x).unwrap();
        for &v in t.value(y) {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let x = t.constant(&[1], vec![2.5]).unwrap();
        let l = t.log(x).unwrap();
        let e = t.exp(l).unwrap();
        assert_abs_diff_eq!(t.value(e)[0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut t = Tape::new();
        let x = t.constant(&[2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(t.log(x), Err(Error::NumericDomain { .. })));
        let c = t.clamp(x, 1e-10, f64::INFINITY).unwrap();
        assert!(t.log(c).is_ok());
    }

    #[test]
    fn logsumexp_closed_forms() {
        let mut t = Tape::new();
        let x = t.constant(&[2], vec![0., 0.]).unwrap();
        let l = t.logsumexp(x, Axis::All).unwrap();
        assert_abs_diff_eq!(t.value(l)[0], 2f64.ln(), epsilon = 1e-15);
        let x = t.constant(&[2], vec![1000., 1000.]).unwrap();
        let l = t.logsumexp(x, Axis::All).unwrap();
        assert_abs_diff_eq!(t.value(l)[0], 1000.0 + 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn reduce_rejects_bad_axis() {
        let mut t = Tape::new();
        let x = t.constant(&[2, 2], vec![0.; 4]).unwrap();
        assert!(matches!(
            t.reduce(ReduceOp::Sum, x, Axis::Dim(2)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn sum_backward_distributes_ones() {
        let mut t = Tape::new();
        let x = t
            .leaf_values(&[2, 3], vec![1., 2., 3., 4., 5., 6.])
            .unwrap();
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient_and_accumulation() {
        let mut p = DiffArray::new(&[1], vec![3.0]).unwrap();
        for expected in [6.0, 12.0] {
            let mut t = Tape::new();
            let x = t.leaf(&p);
            let y = t.mul(x, x).unwrap();
            let s = t.sum(y).unwrap();
            let g = t.backward(s).unwrap();
            assert!(t.is_empty());
            g.accumulate_into(x, &mut p);
            assert_eq!(p.grad(), &[expected]);
        }
    }

    #[test]
    fn backward_contracts() {
        let mut t = Tape::new();
        assert!(matches!(t.backward(Var(0)), Err(Error::Contract(_))));
        let x = t.leaf_values(&[2], vec![1., 2.]).unwrap();
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcasting_add_and_backward_reduces() {
        let mut t = Tape::new();
        let a = t.leaf_values(&[2, 3], vec![0.; 6]).unwrap();
        let b = t.leaf_values(&[3], vec![1., 2., 3.]).unwrap();
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c), &[1., 2., 3., 1., 2., 3.]);
        let s = t.sum(c).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap(), &[2., 2., 2.]);

        let mut t = Tape::new();
        let z = t.constant(&[2, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let mu = t.constant(&[3, 2], vec![0., 0., 1., 1., 2., 2.]).unwrap();
        let d = t.sub(z, mu).unwrap();
        assert_eq!(t.shape(d), &[2, 3, 2]);
        assert_eq!(
            t.value(d),
            &[1., 2., 0., 1., -1., 0., 3., 4., 2., 3., 1., 2.]
        );
        let bad = t.constant(&[4], vec![0.; 4]).unwrap();
        assert!(t.add(d, bad).is_err());
    }

    #[test]
    fn row_norm_gradient_zero_at_origin() {
        let mut t = Tape::new();
        let x = t.leaf_values(&[2, 2], vec![0., 0., 3., 4.]).unwrap();
        let n = t.row_norm(x).unwrap();
        assert_eq!(t.value(n), &[0., 5.]);
        let s = t.sum(n).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0., 0., 0.6, 0.8]);
    }

    #[test]
    fn select_last_routes_gradient() {
        let mut t = Tape::new();
        let x = t
            .leaf_values(&[2, 3], vec![1., 2., 3., 4., 5., 6.])
            .unwrap();
        let s = t.select_last(x, &[2, 0]).unwrap();
        assert_eq!(t.value(s), &[3., 4.]);
        let l = t.sum(s).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0., 0., 1., 1., 0., 0.]);
        let mut t = Tape::new();
        let x = t.leaf_values(&[1, 3], vec![0.; 3]).unwrap();
        assert!(matches!(t.select_last(x, &[3]), Err(Error::Index { .. })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(&[1], vec![2.0]).unwrap();
        let x = t.leaf_values(&[1], vec![1.0]).unwrap();
        let y = t.mul(c, x).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap(), &[2.0]);
    }
}
