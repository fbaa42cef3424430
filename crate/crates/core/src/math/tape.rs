//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are recorded on a [`Tape`] in execution order. Each recorded
//! node keeps its forward value and whatever the backward rule needs;
//! [`Tape::backward`] walks the nodes in exact reverse order and accumulates
//! gradients into the [`ParamStore`] the parameters were read from.
//!
//! Batched operations use a leading batch axis: convolutions take
//! `N×C×H×W`, linear layers `N×D`. Unbatched inputs (`C×H×W`, `D`) are
//! accepted and produce unbatched outputs.

use std::collections::HashMap;

use super::kernels::{col2im_add, gemm, im2col, ConvGeometry};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        geom: ConvGeometry,
        batch: usize,
        c_out: usize,
        cols: Vec<f64>,
    },
    ChannelBias {
        input: NodeId,
        bias: NodeId,
        channels: usize,
        plane: usize,
    },
    Relu(NodeId),
    GlobalAvgPool {
        input: NodeId,
        plane: usize,
    },
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        rows: usize,
        d_in: usize,
        d_out: usize,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    ConcatCols {
        a: NodeId,
        b: NodeId,
        rows: usize,
        da: usize,
        db: usize,
    },
    GatherRows {
        input: NodeId,
        rows: Vec<usize>,
        cols: usize,
    },
    RowSqDist {
        a: NodeId,
        b: NodeId,
        cols: usize,
    },
    Reshape(NodeId),
    ScaleGrad(NodeId, f64),
    SoftmaxXent {
        scores: NodeId,
        target: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `node`, if it was reached.
    pub fn get(&self, node: NodeId) -> Option<Tensor> {
        self.grads[node.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[node.0].clone(), g.clone()))
    }
}

/// Records operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf whose gradient is reported by [`Gradients::get`].
    pub fn var(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Reads a parameter onto the tape. Reading the same parameter twice
    /// yields the same node, so shared weights accumulate one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let node = self.push(store.get(id).value.clone(), Op::Leaf, true);
        self.nodes[node.0].param = Some(id);
        self.param_nodes.insert(id, node);
        node
    }

    /// A copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.input(v)
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        let xs = self.value(input).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        let (batch, c_in, h, w, batched) = match xs.as_slice() {
            [c, h, w] => (1, *c, *h, *w, false),
            [n, c, h, w] => (*n, *c, *h, *w, true),
            _ => return Err(Error::shape("conv2d", format!("input must be C×H×W or N×C×H×W, got {xs:?}"))),
        };
        let (c_out, k) = match ks.as_slice() {
            [co, ci, k1, k2] if *ci == c_in && k1 == k2 => (*co, *k1),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernels {ks:?} incompatible with input channels {c_in}"),
                ))
            }
        };
        let geom = ConvGeometry::new(c_in, h, w, k, stride, padding).ok_or_else(|| {
            Error::shape(
                "conv2d",
                format!("kernel {k} with padding {padding} and stride {stride} does not fit {h}×{w}"),
            )
        })?;
        let pl = geom.patch_len();
        let pos = geom.out_positions();
        let mut cols = vec![0.0; batch * pl * pos];
        let mut out = vec![0.0; batch * c_out * pos];
        let x = self.value(input).data();
        let kd = self.value(kernel).data();
        for n in 0..batch {
            let col = &mut cols[n * pl * pos..(n + 1) * pl * pos];
            im2col(&geom, &x[n * c_in * h * w..(n + 1) * c_in * h * w], col);
            gemm(c_out, pl, pos, kd, false, col, false, 0.0, &mut out[n * c_out * pos..(n + 1) * c_out * pos]);
        }
        let shape = if batched {
            vec![batch, c_out, geom.h_out, geom.w_out]
        } else {
            vec![c_out, geom.h_out, geom.w_out]
        };
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Conv2d {
                input,
                kernel,
                geom,
                batch,
                c_out,
                cols,
            },
            rg,
        ))
    }

    /// Adds a per-channel bias to a `C×H×W` or `N×C×H×W` tensor.
    pub fn channel_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.value(input).shape().to_vec();
        let channels = match xs.as_slice() {
            [c, _, _] | [_, c, _, _] => *c,
            _ => return Err(Error::shape("channel_bias", format!("unsupported input {xs:?}"))),
        };
        if self.value(bias).shape() != [channels] {
            return Err(Error::shape(
                "channel_bias",
                format!("bias {:?} for {channels} channels", self.value(bias).shape()),
            ));
        }
        let plane = xs[xs.len() - 2] * xs[xs.len() - 1];
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(input).data().to_vec();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bc = b[i % channels];
            chunk.iter_mut().for_each(|v| *v += bc);
        }
        let rg = self.rg(input) || self.rg(bias);
        Ok(self.push(
            Tensor::from_parts(xs, out),
            Op::ChannelBias {
                input,
                bias,
                channels,
                plane,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let out = x.data().iter().map(|v| v.max(0.0)).collect();
        let shape = x.shape().to_vec();
        let rg = self.rg(input);
        self.push(Tensor::from_parts(shape, out), Op::Relu(input), rg)
    }

    /// `C×H×W → C` or `N×C×H×W → N×C` channel means.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let xs = self.value(input).shape().to_vec();
        let (out_shape, plane) = match xs.as_slice() {
            [c, h, w] => (vec![*c], h * w),
            [n, c, h, w] => (vec![*n, *c], h * w),
            _ => return Err(Error::shape("global_avg_pool", format!("unsupported input {xs:?}"))),
        };
        let out = self
            .value(input)
            .data()
            .chunks(plane)
            .map(|ch| ch.iter().sum::<f64>() / plane as f64)
            .collect();
        let rg = self.rg(input);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::GlobalAvgPool { input, plane },
            rg,
        ))
    }

    /// `weight · x + bias` for `x: D_in` or each row of `x: N×D_in`.
    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.value(input).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let (rows, d_in, batched) = match xs.as_slice() {
            [d] => (1, *d, false),
            [n, d] => (*n, *d, true),
            _ => return Err(Error::shape("linear", format!("unsupported input {xs:?}"))),
        };
        let d_out = match ws.as_slice() {
            [o, i] if *i == d_in => *o,
            _ => return Err(Error::shape("linear", format!("weight {ws:?} for input width {d_in}"))),
        };
        if self.value(bias).shape() != [d_out] {
            return Err(Error::shape(
                "linear",
                format!("bias {:?} for output width {d_out}", self.value(bias).shape()),
            ));
        }
        let mut out = Vec::with_capacity(rows * d_out);
        for _ in 0..rows {
            out.extend_from_slice(self.value(bias).data());
        }
        gemm(
            rows,
            d_in,
            d_out,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            1.0,
            &mut out,
        );
        let shape = if batched { vec![rows, d_out] } else { vec![d_out] };
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Linear {
                input,
                weight,
                bias,
                rows,
                d_in,
                d_out,
            },
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, op: Op, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(shape, out), op, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    fn map(&mut self, input: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let x = self.value(input);
        let out = x.data().iter().map(|v| f(*v)).collect();
        let shape = x.shape().to_vec();
        let rg = self.rg(input);
        self.push(Tensor::from_parts(shape, out), op, rg)
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        self.map(input, Op::Scale(input, factor), |v| v * factor)
    }

    pub fn add_scalar(&mut self, input: NodeId, c: f64) -> NodeId {
        self.map(input, Op::AddScalar(input), |v| v + c)
    }

    /// Identity in the forward pass; multiplies the incoming gradient by
    /// `factor` in the backward pass.
    pub fn scale_grad(&mut self, input: NodeId, factor: f64) -> NodeId {
        self.map(input, Op::ScaleGrad(input, factor), |v| v)
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).data().iter().sum();
        let rg = self.rg(input);
        self.push(Tensor::scalar(s), Op::Sum(input), rg)
    }

    pub fn mean(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        let rg = self.rg(input);
        self.push(Tensor::scalar(s), Op::Mean(input), rg)
    }

    pub fn reshape(&mut self, input: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let v = self.value(input).clone().reshape(shape)?;
        let rg = self.rg(input);
        Ok(self.push(v, Op::Reshape(input), rg))
    }

    /// Row-wise concatenation of `N×Da` and `N×Db` into `N×(Da+Db)`.
    /// One-dimensional operands are treated as a single row.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, da, batched) = rows_cols(self.value(a).shape())
            .ok_or_else(|| Error::shape("concat_cols", format!("{:?}", self.value(a).shape())))?;
        let (rb, db, _) = rows_cols(self.value(b).shape())
            .ok_or_else(|| Error::shape("concat_cols", format!("{:?}", self.value(b).shape())))?;
        if ra != rb || self.value(a).ndim() != self.value(b).ndim() {
            return Err(Error::shape(
                "concat_cols",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = Vec::with_capacity(ra * (da + db));
        for r in 0..ra {
            out.extend_from_slice(&self.value(a).data()[r * da..(r + 1) * da]);
            out.extend_from_slice(&self.value(b).data()[r * db..(r + 1) * db]);
        }
        let shape = if batched { vec![ra, da + db] } else { vec![da + db] };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::ConcatCols {
                a,
                b,
                rows: ra,
                da,
                db,
            },
            rg,
        ))
    }

    /// Selects rows (with repetition allowed) of an `N×D` tensor.
    pub fn gather_rows(&mut self, input: NodeId, rows: &[usize]) -> Result<NodeId> {
        let xs = self.value(input).shape().to_vec();
        let (n, cols) = match xs.as_slice() {
            [n, d] => (*n, *d),
            _ => return Err(Error::shape("gather_rows", format!("input must be N×D, got {xs:?}"))),
        };
        if rows.is_empty() {
            return Err(Error::shape("gather_rows", "no rows selected"));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape("gather_rows", format!("row {r} out of {n}")));
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            out.extend_from_slice(&x[r * cols..(r + 1) * cols]);
        }
        let rg = self.rg(input);
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), cols], out),
            Op::GatherRows {
                input,
                rows: rows.to_vec(),
                cols,
            },
            rg,
        ))
    }

    /// Squared Euclidean distance between matching rows: `N×D, N×D → N`.
    pub fn row_sq_dist(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("row_sq_dist", a, b)?;
        let (rows, cols, _) = rows_cols(self.value(a).shape())
            .ok_or_else(|| Error::shape("row_sq_dist", format!("{:?}", self.value(a).shape())))?;
        let out = self
            .value(a)
            .data()
            .chunks(cols)
            .zip(self.value(b).data().chunks(cols))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum())
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![rows], out), Op::RowSqDist { a, b, cols }, rg))
    }

    /// `−log softmax(scores)[target]` for a one-hot `target`, stabilised by
    /// subtracting the maximum score.
    pub fn softmax_cross_entropy(&mut self, scores: NodeId, target: &Tensor) -> Result<NodeId> {
        let s = self.value(scores);
        if s.ndim() != 1 || target.shape() != s.shape() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("scores {:?}, target {:?}", s.shape(), target.shape()),
            ));
        }
        let index = one_hot_index(target)?;
        let max = s.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = s.data().iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = z.ln() - (s.data()[index] - max);
        let probs = exps.iter().map(|e| e / z).collect();
        let rg = self.rg(scores);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                scores,
                target: index,
                probs,
            },
            rg,
        ))
    }

    /// Propagates `∂loss/∂·` through the tape, accumulates parameter
    /// gradients into `store` and returns the per-node gradients.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, shape is {:?}", lv.shape()),
            ));
        }
        lv.check_finite("loss")?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, grads[idx].as_ref()) {
                let p = store.get_mut(pid);
                for (acc, v) in p.grad.data_mut().iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let want = |id: NodeId| nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                geom,
                batch,
                c_out,
                cols,
            } => {
                let pl = geom.patch_len();
                let pos = geom.out_positions();
                let img = geom.c_in * geom.h * geom.w;
                if want(*kernel) {
                    let gk = accum(grads, *kernel, nodes);
                    for n in 0..*batch {
                        gemm(
                            *c_out,
                            pos,
                            pl,
                            &g[n * c_out * pos..(n + 1) * c_out * pos],
                            false,
                            &cols[n * pl * pos..(n + 1) * pl * pos],
                            true,
                            1.0,
                            gk,
                        );
                    }
                }
                if want(*input) {
                    let kd = nodes[kernel.0].value.data();
                    let mut dcols = vec![0.0; pl * pos];
                    let gi = accum(grads, *input, nodes);
                    for n in 0..*batch {
                        gemm(
                            pl,
                            *c_out,
                            pos,
                            kd,
                            true,
                            &g[n * c_out * pos..(n + 1) * c_out * pos],
                            false,
                            0.0,
                            &mut dcols,
                        );
                        col2im_add(geom, &dcols, &mut gi[n * img..(n + 1) * img]);
                    }
                }
            }
            Op::ChannelBias {
                input,
                bias,
                channels,
                plane,
            } => {
                if want(*input) {
                    add_into(accum(grads, *input, nodes), g);
                }
                if want(*bias) {
                    let gb = accum(grads, *bias, nodes);
                    for (i, chunk) in g.chunks(*plane).enumerate() {
                        gb[i % channels] += chunk.iter().sum::<f64>();
                    }
                }
            }
            Op::Relu(input) => {
                if want(*input) {
                    let x = nodes[input.0].value.data();
                    let gi = accum(grads, *input, nodes);
                    for ((acc, gv), xv) in gi.iter_mut().zip(g).zip(x) {
                        if *xv > 0.0 {
                            *acc += gv;
                        }
                    }
                }
            }
            Op::GlobalAvgPool { input, plane } => {
                if want(*input) {
                    let gi = accum(grads, *input, nodes);
                    let inv = 1.0 / *plane as f64;
                    for (chunk, gv) in gi.chunks_mut(*plane).zip(g) {
                        chunk.iter_mut().for_each(|v| *v += gv * inv);
                    }
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
                rows,
                d_in,
                d_out,
            } => {
                if want(*input) {
                    let w = nodes[weight.0].value.data();
                    let gi = accum(grads, *input, nodes);
                    gemm(*rows, *d_out, *d_in, g, false, w, false, 1.0, gi);
                }
                if want(*weight) {
                    let x = nodes[input.0].value.data();
                    let gw = accum(grads, *weight, nodes);
                    gemm(*d_out, *rows, *d_in, g, true, x, false, 1.0, gw);
                }
                if want(*bias) {
                    let gb = accum(grads, *bias, nodes);
                    for row in g.chunks(*d_out) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    if want(*id) {
                        add_into(accum(grads, *id, nodes), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    add_into(accum(grads, *a, nodes), g);
                }
                if want(*b) {
                    let gb = accum(grads, *b, nodes);
                    gb.iter_mut().zip(g).for_each(|(acc, v)| *acc -= v);
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    let y = nodes[b.0].value.data();
                    let ga = accum(grads, *a, nodes);
                    for ((acc, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        *acc += gv * yv;
                    }
                }
                if want(*b) {
                    let x = nodes[a.0].value.data();
                    let gb = accum(grads, *b, nodes);
                    for ((acc, gv), xv) in gb.iter_mut().zip(g).zip(x) {
                        *acc += gv * xv;
                    }
                }
            }
            Op::Scale(input, f) | Op::ScaleGrad(input, f) => {
                if want(*input) {
                    let gi = accum(grads, *input, nodes);
                    gi.iter_mut().zip(g).for_each(|(acc, v)| *acc += f * v);
                }
            }
            Op::AddScalar(input) | Op::Reshape(input) => {
                if want(*input) {
                    add_into(accum(grads, *input, nodes), g);
                }
            }
            Op::Sum(input) => {
                if want(*input) {
                    accum(grads, *input, nodes).iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Mean(input) => {
                if want(*input) {
                    let gi = accum(grads, *input, nodes);
                    let s = g[0] / gi.len() as f64;
                    gi.iter_mut().for_each(|v| *v += s);
                }
            }
            Op::ConcatCols { a, b, rows, da, db } => {
                let width = da + db;
                if want(*a) {
                    let ga = accum(grads, *a, nodes);
                    for r in 0..*rows {
                        add_into(&mut ga[r * da..(r + 1) * da], &g[r * width..r * width + da]);
                    }
                }
                if want(*b) {
                    let gb = accum(grads, *b, nodes);
                    for r in 0..*rows {
                        add_into(&mut gb[r * db..(r + 1) * db], &g[r * width + da..(r + 1) * width]);
                    }
                }
            }
            Op::GatherRows { input, rows, cols } => {
                if want(*input) {
                    let gi = accum(grads, *input, nodes);
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut gi[r * cols..(r + 1) * cols], &g[i * cols..(i + 1) * cols]);
                    }
                }
            }
            Op::RowSqDist { a, b, cols } => {
                let x = nodes[a.0].value.data();
                let y = nodes[b.0].value.data();
                let diff: Vec<f64> = x
                    .iter()
                    .zip(y)
                    .enumerate()
                    .map(|(i, (p, q))| 2.0 * (p - q) * g[i / cols])
                    .collect();
                if want(*a) {
                    add_into(accum(grads, *a, nodes), &diff);
                }
                if want(*b) {
                    let gb = accum(grads, *b, nodes);
                    gb.iter_mut().zip(&diff).for_each(|(acc, d)| *acc -= d);
                }
            }
            Op::SoftmaxXent { scores, target, probs } => {
                if want(*scores) {
                    let gs = accum(grads, *scores, nodes);
                    for (i, (acc, p)) in gs.iter_mut().zip(probs).enumerate() {
                        let t = if i == *target { 1.0 } else { 0.0 };
                        *acc += g[0] * (p - t);
                    }
                }
            }
        }
    }
}

fn accum<'a>(grads: &'a mut [Option<Vec<f64>>], id: NodeId, nodes: &[Node]) -> &'a mut [f64] {
    grads[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].value.len()])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn rows_cols(shape: &[usize]) -> Option<(usize, usize, bool)> {
    match shape {
        [d] => Some((1, *d, false)),
        [n, d] => Some((*n, *d, true)),
        _ => None,
    }
}

/// Index of the single `1` in a one-hot tensor.
pub fn one_hot_index(target: &Tensor) -> Result<usize> {
    let mut index = None;
    for (i, &v) in target.data().iter().enumerate() {
        if v == 1.0 {
            if index.is_some() {
                return Err(Error::InvalidArgument("target has more than one hot entry".into()));
            }
            index = Some(i);
        } else if v != 0.0 {
            return Err(Error::InvalidArgument(format!("target entry {i} is {v}, expected 0 or 1")));
        }
    }
    index.ok_or_else(|| Error::InvalidArgument("target has no hot entry".into()))
}

/// One-hot vector of length `len` with a `1` at `index`.
pub fn one_hot(len: usize, index: usize) -> Tensor {
    Tensor::from_fn([len], |i| if i == index { 1.0 } else { 0.0 })
}
