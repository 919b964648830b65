use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        geom: ConvGeom,
        cols: Vec<Vec<T>>,
    },
    MaxPool2d {
        input: NodeId,
        argmax: Vec<u32>,
    },
    MaxRows {
        input: NodeId,
        argmax: Vec<usize>,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    GatherRows {
        input: NodeId,
        rows: Vec<usize>,
    },
    Select {
        input: NodeId,
        index: Vec<usize>,
    },
    ScaleRows {
        input: NodeId,
        scale: NodeId,
    },
    ScatterRows {
        parts: Vec<(NodeId, Vec<usize>)>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitive applications in forward order and replays them in
/// reverse to compute gradients.
///
/// A tape supports exactly one backward pass. Gradients are kept only for
/// leaves; intermediate buffers are released as the sweep passes them.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn matrix_dims(op: &'static str, t: &[usize]) -> Result<(usize, usize)> {
    match t {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::Dimension {
            op,
            msg: format!("expected a matrix, got shape {t:?}"),
        }),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input. Leaves with `requires_grad` collect gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Every recorded node in recording order.
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, id: NodeId) -> Option<Tensor<T>> {
        let g = self.grads.get(id.0)?.as_ref()?;
        Some(Tensor::new(self.shape(id), g.clone()).expect("gradient matches its node"))
    }

    pub(crate) fn grad_slice(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0)?.as_deref()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = matrix_dims("matmul", self.shape(a))?;
        let (k2, n) = matrix_dims("matmul", self.shape(b))?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, T::zero(), &mut out);
        let value = Tensor::new(&[m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// `x · wᵀ + b` with `x: [B, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, inp) = matrix_dims("linear", self.shape(x))?;
        let (out_dim, win) = matrix_dims("linear", self.shape(w))?;
        if inp != win {
            return Err(shape_err("linear", self.shape(x), self.shape(w)));
        }
        if self.value(b).len() != out_dim {
            return Err(shape_err("linear", self.shape(w), self.shape(b)));
        }
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(rows * out_dim);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        T::gemm(rows, inp, out_dim, self.value(x).data(), false, self.value(w).data(), true, T::one(), &mut out);
        let value = Tensor::new(&[rows, out_dim], out)?;
        self.push("linear", value, Op::Linear { x, w, b }, &[x, w, b])
    }

    fn zip_same(&mut self, name: &'static str, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product of two same-shaped tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a single row (`[n]` or `[1, n]`) to every row of `a: [B, n]`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let vr = self.value(row);
        let n = va.cols();
        if va.rank() != 2 || vr.len() != n {
            return Err(shape_err("add_row", va.shape(), vr.shape()));
        }
        let r = vr.data();
        let data = va
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| x + y))
            .collect();
        let value = Tensor::new(va.shape(), data)?;
        self.push("add_row", value, Op::AddRow(a, row), &[a, row])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v.max(T::zero()));
        self.push("relu", value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(kernels::sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let n = *va.shape().last().unwrap_or(&1);
        let value = Tensor::new(va.shape(), kernels::softmax_rows(va.data(), n))?;
        self.push("softmax", value, Op::Softmax(a), &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    /// Collapses all but the leading axis.
    pub fn flatten(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = (self.value(a).rows(), self.value(a).cols());
        self.reshape(a, &[r, c])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let total: f64 = self.value(a).data().iter().map(|v| v.as_f64()).sum();
        self.push("sum", Tensor::scalar(T::from_f64(total)), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let total: f64 = va.data().iter().map(|v| v.as_f64()).sum();
        let mean = total / va.len() as f64;
        self.push("mean", Tensor::scalar(T::from_f64(mean)), Op::Mean(a), &[a])
    }

    /// Valid, stride-1 cross-correlation of `[B, C, H, W]` with `[O, C, kh, kw]`.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vi, vk, vb) = (self.value(input), self.value(kernel), self.value(bias));
        let (&[batch, in_ch, h, w], &[out_ch, kc, kh, kw]) = (vi.shape(), vk.shape()) else {
            return Err(shape_err("conv2d", vi.shape(), vk.shape()));
        };
        if kc != in_ch || vb.len() != out_ch {
            return Err(shape_err("conv2d", vi.shape(), vk.shape()));
        }
        let Some((oh, ow)) = kernels::conv2d_output_dims(h, w, kh, kw) else {
            return Err(Error::Dimension {
                op: "conv2d",
                msg: format!("kernel {kh}x{kw} larger than input {h}x{w}"),
            });
        };
        let geom = ConvGeom {
            batch,
            in_ch,
            h,
            w,
            out_ch,
            kh,
            kw,
            oh,
            ow,
        };
        let needs_grad = self.requires_grad(kernel) || self.requires_grad(input);
        let (out, cols) = kernels::conv2d_forward(&geom, vi.data(), vk.data(), vb.data(), needs_grad);
        let value = Tensor::new(&[batch, out_ch, oh, ow], out)?;
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            &[input, kernel, bias],
        )
    }

    /// 2x2 stride-2 max pooling over `[B, C, H, W]` with even `H`, `W`.
    pub fn maxpool2d(&mut self, input: NodeId) -> Result<NodeId> {
        let vi = self.value(input);
        let &[b, c, h, w] = vi.shape() else {
            return Err(Error::Dimension {
                op: "maxpool2d",
                msg: format!("expected [B, C, H, W], got {:?}", vi.shape()),
            });
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimension {
                op: "maxpool2d",
                msg: format!("odd spatial extent {h}x{w}"),
            });
        }
        let (out, argmax) = kernels::maxpool2x2(vi.data(), b * c, h, w);
        let value = Tensor::new(&[b, c, h / 2, w / 2], out)?;
        self.push("maxpool2d", value, Op::MaxPool2d { input, argmax }, &[input])
    }

    /// Column-wise maximum over the rows of `[B, n]`, giving `[1, n]`.
    /// Ties go to the earliest row.
    pub fn max_rows(&mut self, input: NodeId) -> Result<NodeId> {
        let vi = self.value(input);
        let (rows, n) = matrix_dims("max_rows", vi.shape())?;
        let d = vi.data();
        let mut argmax = vec![0usize; n];
        for r in 1..rows {
            for (c, best) in argmax.iter_mut().enumerate() {
                if d[r * n + c] > d[*best * n + c] {
                    *best = r;
                }
            }
        }
        let out = argmax.iter().enumerate().map(|(c, &r)| d[r * n + c]).collect();
        let value = Tensor::new(&[1, n], out)?;
        self.push("max_rows", value, Op::MaxRows { input, argmax }, &[input])
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits: [B, C]`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let vl = self.value(logits);
        let (rows, classes) = matrix_dims("cross_entropy", vl.shape())?;
        if labels.len() != rows {
            return Err(shape_err("cross_entropy", vl.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                limit: classes,
            });
        }
        let lse = kernels::logsumexp_rows(vl.data(), classes);
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| lse[r] - vl.data()[r * classes + l].as_f64())
            .sum();
        let probs = kernels::softmax_rows(vl.data(), classes);
        let value = Tensor::scalar(T::from_f64(total / rows as f64));
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.push("cross_entropy", value, op, &[logits])
    }

    /// Copies the listed rows (repeats allowed) into a new tensor.
    pub fn gather_rows(&mut self, input: NodeId, rows: &[usize]) -> Result<NodeId> {
        let vi = self.value(input);
        if let Some(&bad) = rows.iter().find(|&&r| r >= vi.rows()) {
            return Err(Error::Index {
                what: "gather row",
                index: bad,
                limit: vi.rows(),
            });
        }
        if rows.is_empty() {
            return Err(Error::Dimension {
                op: "gather_rows",
                msg: "empty row list".into(),
            });
        }
        let value = vi.select_rows(rows);
        self.push(
            "gather_rows",
            value,
            Op::GatherRows {
                input,
                rows: rows.to_vec(),
            },
            &[input],
        )
    }

    /// Picks elements by flat index into a tensor of the given shape.
    pub fn select(&mut self, input: NodeId, index: &[usize], shape: &[usize]) -> Result<NodeId> {
        let vi = self.value(input);
        if let Some(&bad) = index.iter().find(|&&i| i >= vi.len()) {
            return Err(Error::Index {
                what: "select element",
                index: bad,
                limit: vi.len(),
            });
        }
        let data = index.iter().map(|&i| vi.data()[i]).collect();
        let value = Tensor::new(shape, data)?;
        self.push(
            "select",
            value,
            Op::Select {
                input,
                index: index.to_vec(),
            },
            &[input],
        )
    }

    /// Multiplies row `r` of `input: [m, n]` by `scale[r]` (`scale` has `m` values).
    pub fn scale_rows(&mut self, input: NodeId, scale: NodeId) -> Result<NodeId> {
        let (vi, vs) = (self.value(input), self.value(scale));
        let (m, n) = matrix_dims("scale_rows", vi.shape())?;
        if vs.len() != m {
            return Err(shape_err("scale_rows", vi.shape(), vs.shape()));
        }
        let s = vs.data();
        let data = vi
            .data()
            .chunks(n)
            .zip(s)
            .flat_map(|(row, &k)| row.iter().map(move |&v| v * k))
            .collect();
        let value = Tensor::new(&[m, n], data)?;
        self.push("scale_rows", value, Op::ScaleRows { input, scale }, &[input, scale])
    }

    /// Sums row blocks into a zero `[rows, n]` tensor: row `i` of each part
    /// lands on output row `part_rows[i]`.
    pub fn scatter_rows(&mut self, rows: usize, parts: Vec<(NodeId, Vec<usize>)>) -> Result<NodeId> {
        let Some(&(first, _)) = parts.first() else {
            return Err(Error::Dimension {
                op: "scatter_rows",
                msg: "no parts".into(),
            });
        };
        let n = self.value(first).cols();
        let mut out = vec![T::zero(); rows * n];
        for (part, idx) in &parts {
            let vp = self.value(*part);
            if vp.cols() != n || vp.rows() != idx.len() {
                return Err(shape_err("scatter_rows", vp.shape(), &[idx.len(), n]));
            }
            for (i, &r) in idx.iter().enumerate() {
                if r >= rows {
                    return Err(Error::Index {
                        what: "scatter row",
                        index: r,
                        limit: rows,
                    });
                }
                for (d, &s) in out[r * n..(r + 1) * n].iter_mut().zip(vp.row(i)) {
                    *d += s;
                }
            }
        }
        let value = Tensor::new(&[rows, n], out)?;
        let inputs: Vec<NodeId> = parts.iter().map(|p| p.0).collect();
        self.push("scatter_rows", value, Op::ScatterRows { parts }, &inputs)
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate into
    /// buffers readable through [`Tape::grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this tape; record a fresh forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            backprop(&self.nodes, &mut self.grads, node, &g);
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(())
    }
}

/// Adds into the gradient buffer of `id`, allocating it on first use.
/// Does nothing for nodes outside the differentiable subgraph.
fn accum<'a, T: Real>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    id: NodeId,
) -> Option<&'a mut Vec<T>> {
    if !nodes[id.0].requires_grad {
        return None;
    }
    let len = nodes[id.0].value.len();
    Some(grads[id.0].get_or_insert_with(|| vec![T::zero(); len]))
}

fn backprop<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], node: &Node<T>, g: &[T]) {
    let val = |id: NodeId| nodes[id.0].value.data();
    let dims = |id: NodeId| nodes[id.0].value.shape();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (dims(*a)[0], dims(*a)[1]);
            let n = dims(*b)[1];
            if let Some(da) = accum(nodes, grads, *a) {
                T::gemm(m, n, k, g, false, val(*b), true, T::one(), da);
            }
            if let Some(db) = accum(nodes, grads, *b) {
                T::gemm(k, m, n, val(*a), true, g, false, T::one(), db);
            }
        }
        Op::Linear { x, w, b } => {
            let (rows, inp) = (dims(*x)[0], dims(*x)[1]);
            let out = dims(*w)[0];
            if let Some(dx) = accum(nodes, grads, *x) {
                T::gemm(rows, out, inp, g, false, val(*w), false, T::one(), dx);
            }
            if let Some(dw) = accum(nodes, grads, *w) {
                T::gemm(out, rows, inp, g, true, val(*x), false, T::one(), dw);
            }
            if let Some(db) = accum(nodes, grads, *b) {
                for (c, d) in db.iter_mut().enumerate() {
                    let s: f64 = (0..rows).map(|r| g[r * out + c].as_f64()).sum();
                    *d += T::from_f64(s);
                }
            }
        }
        Op::Add(a, b) => {
            for id in [*a, *b] {
                if let Some(d) = accum(nodes, grads, id) {
                    d.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
            }
        }
        Op::AddRow(a, row) => {
            if let Some(d) = accum(nodes, grads, *a) {
                d.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
            if let Some(dr) = accum(nodes, grads, *row) {
                let n = dr.len();
                for (c, d) in dr.iter_mut().enumerate() {
                    let s: f64 = g.iter().skip(c).step_by(n).map(|v| v.as_f64()).sum();
                    *d += T::from_f64(s);
                }
            }
        }
        Op::Mul(a, b) => {
            if let Some(da) = accum(nodes, grads, *a) {
                for ((d, &gv), &bv) in da.iter_mut().zip(g).zip(val(*b)) {
                    *d += gv * bv;
                }
            }
            if let Some(db) = accum(nodes, grads, *b) {
                for ((d, &gv), &av) in db.iter_mut().zip(g).zip(val(*a)) {
                    *d += gv * av;
                }
            }
        }
        Op::Relu(a) => {
            if let Some(d) = accum(nodes, grads, *a) {
                for ((d, &gv), &x) in d.iter_mut().zip(g).zip(val(*a)) {
                    if x > T::zero() {
                        *d += gv;
                    }
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(d) = accum(nodes, grads, *a) {
                for ((d, &gv), &s) in d.iter_mut().zip(g).zip(node.value.data()) {
                    *d += gv * s * (T::one() - s);
                }
            }
        }
        Op::Softmax(a) => {
            if let Some(d) = accum(nodes, grads, *a) {
                let n = *node.value.shape().last().unwrap_or(&1);
                for ((drow, grow), srow) in d.chunks_mut(n).zip(g.chunks(n)).zip(node.value.data().chunks(n)) {
                    let dot: f64 = grow.iter().zip(srow).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                    let dot = T::from_f64(dot);
                    for ((d, &gv), &s) in drow.iter_mut().zip(grow).zip(srow) {
                        *d += s * (gv - dot);
                    }
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(d) = accum(nodes, grads, *a) {
                d.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
        }
        Op::Sum(a) => {
            if let Some(d) = accum(nodes, grads, *a) {
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(a) => {
            if let Some(d) = accum(nodes, grads, *a) {
                let scale = g[0] / T::from_f64(d.len() as f64);
                d.iter_mut().for_each(|d| *d += scale);
            }
        }
        Op::Conv2d {
            input,
            kernel,
            bias,
            geom,
            cols,
        } => {
            // Three disjoint buffers; take them out to satisfy the borrow checker.
            let mut dk = accum(nodes, grads, *kernel).map(std::mem::take);
            let mut db = accum(nodes, grads, *bias).map(std::mem::take);
            let mut di = accum(nodes, grads, *input).map(std::mem::take);
            kernels::conv2d_backward(
                geom,
                g,
                val(*kernel),
                cols,
                dk.as_deref_mut(),
                db.as_deref_mut(),
                di.as_deref_mut(),
            );
            for (id, buf) in [(*kernel, dk), (*bias, db), (*input, di)] {
                if let Some(buf) = buf {
                    grads[id.0] = Some(buf);
                }
            }
        }
        Op::MaxPool2d { input, argmax } => {
            if let Some(d) = accum(nodes, grads, *input) {
                for (&idx, &gv) in argmax.iter().zip(g) {
                    d[idx as usize] += gv;
                }
            }
        }
        Op::MaxRows { input, argmax } => {
            if let Some(d) = accum(nodes, grads, *input) {
                let n = argmax.len();
                for (c, (&r, &gv)) in argmax.iter().zip(g).enumerate() {
                    d[r * n + c] += gv;
                }
            }
        }
        Op::CrossEntropy { logits, labels, probs } => {
            if let Some(d) = accum(nodes, grads, *logits) {
                let classes = probs.len() / labels.len();
                let scale = g[0] / T::from_f64(labels.len() as f64);
                for (r, &l) in labels.iter().enumerate() {
                    for c in 0..classes {
                        let target = if c == l { T::one() } else { T::zero() };
                        d[r * classes + c] += (probs[r * classes + c] - target) * scale;
                    }
                }
            }
        }
        Op::GatherRows { input, rows } => {
            if let Some(d) = accum(nodes, grads, *input) {
                let n = node.value.cols();
                for (i, &r) in rows.iter().enumerate() {
                    for (dv, &gv) in d[r * n..(r + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                        *dv += gv;
                    }
                }
            }
        }
        Op::Select { input, index } => {
            if let Some(d) = accum(nodes, grads, *input) {
                for (&i, &gv) in index.iter().zip(g) {
                    d[i] += gv;
                }
            }
        }
        Op::ScaleRows { input, scale } => {
            let n = node.value.cols();
            if let Some(d) = accum(nodes, grads, *input) {
                for ((drow, grow), &k) in d.chunks_mut(n).zip(g.chunks(n)).zip(val(*scale)) {
                    drow.iter_mut().zip(grow).for_each(|(d, &gv)| *d += gv * k);
                }
            }
            if let Some(ds) = accum(nodes, grads, *scale) {
                for ((d, grow), xrow) in ds.iter_mut().zip(g.chunks(n)).zip(val(*input).chunks(n)) {
                    let s: f64 = grow.iter().zip(xrow).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                    *d += T::from_f64(s);
                }
            }
        }
        Op::ScatterRows { parts } => {
            let n = node.value.cols();
            for (part, rows) in parts {
                if let Some(d) = accum(nodes, grads, *part) {
                    for (i, &r) in rows.iter().enumerate() {
                        for (dv, &gv) in d[i * n..(i + 1) * n].iter_mut().zip(&g[r * n..(r + 1) * n]) {
                            *dv += gv;
                        }
                    }
                }
            }
        }
    }
}
