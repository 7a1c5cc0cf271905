//! The recording tape and its differentiable operations.
//!
//! Ops are methods on [`Tape`]. Each validates shapes, computes the forward
//! value, and records a node when recording is on and an input requires
//! gradient. [`Tape::backward`] walks the nodes in reverse and accumulates
//! gradients per node; leaves that never influence the loss read back as
//! zero.
//!
//! A tape is meant to live for one forward/backward pass. Tensors keep raw
//! node indices, so a tensor from a cleared or foreign tape must not be fed
//! back in.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Norms below this are treated as degenerate: the cosine channel returns
/// exact zeros instead of amplified noise.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimKind {
    /// cos(z - mean, anchor - mean)
    Cos,
    /// -|z - anchor|_1 / dim
    L1,
    /// -|z - anchor|_2 / sqrt(dim)
    L2,
    /// -max_d |z_d - anchor_d|
    LInf,
}

/// Anchor matrix pre-centered by its own row mean, with cached norms and
/// unit rows. Rows whose centered norm is degenerate get a zero unit row, so
/// their cosine channel and its gradient vanish exactly.
#[derive(Debug, Clone)]
pub struct SimAnchors {
    pub count: usize,
    pub dim: usize,
    mean: Vec<f64>,
    centered: Vec<f64>,
    norms: Vec<f64>,
    unit: Vec<f64>,
}

impl SimAnchors {
    /// `rows` is `count` stacked embeddings of length `dim`.
    pub fn new(rows: &[f64], count: usize, dim: usize) -> Result<Arc<Self>> {
        if count == 0 || dim == 0 {
            return Err(Error::config("anchor matrix must be non-empty"));
        }
        if rows.len() != count * dim {
            return Err(Error::dim(format!(
                "anchor rows: expected {}x{} = {} values, got {}",
                count,
                dim,
                count * dim,
                rows.len()
            )));
        }
        let mut mean = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut centered = vec![0.0; count * dim];
        let mut norms = vec![0.0; count];
        let mut unit = vec![0.0; count * dim];
        for (j, row) in rows.chunks_exact(dim).enumerate() {
            let c = &mut centered[j * dim..(j + 1) * dim];
            for ((cv, &v), &m) in c.iter_mut().zip(row).zip(&mean) {
                *cv = v - m;
            }
            let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms[j] = n;
            if n >= DEGENERATE_NORM {
                let u = &mut unit[j * dim..(j + 1) * dim];
                for (uv, &cv) in u.iter_mut().zip(c.iter()) {
                    *uv = cv / n;
                }
            }
        }
        Ok(Arc::new(SimAnchors {
            count,
            dim,
            mean,
            centered,
            norms,
            unit,
        }))
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Norm of each centered anchor row. Rows under [`DEGENERATE_NORM`]
    /// contribute zero to the cosine channel.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddC(usize),
    MulC(usize, f64),
    Neg(usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Abs(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Matmul(usize, usize),
    Transpose(usize),
    Affine {
        w: usize,
        x: usize,
        b: usize,
    },
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        stride: usize,
        padding: usize,
    },
    SpatialSoftmax {
        input: usize,
        temperature: f64,
        probs: Vec<f64>,
    },
    LogSumExp(usize),
    Sum(usize),
    Mean(usize),
    Stack(Vec<usize>),
    Concat(Vec<usize>),
    Slice {
        input: usize,
        start: usize,
    },
    Index {
        input: usize,
        flat: usize,
    },
    Sim {
        z: usize,
        kind: SimKind,
        anchors: Arc<SimAnchors>,
    },
    LayerNorm {
        input: usize,
        eps: f64,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `t`, or `None` when `t` was
    /// never watched or no gradient flowed to it.
    pub fn wrt(&self, t: &Tensor) -> Option<&[f64]> {
        let id = t.node_id()?;
        self.grads.get(id)?.as_deref()
    }

    /// Like [`Gradients::wrt`] but materializes zeros for watched tensors
    /// the loss does not depend on. Unwatched tensors are an error.
    pub fn grad_of(&self, t: &Tensor) -> Result<Tensor> {
        let id = t
            .node_id()
            .ok_or_else(|| Error::config("gradient queried for a tensor never watched on the tape"))?;
        match self.grads.get(id) {
            Some(Some(g)) => Tensor::new(&t.shape, g.clone()),
            _ => Ok(Tensor::zeros(&t.shape)),
        }
    }
}

/// How one operand of an elementwise op relates to the output shape.
#[derive(Clone, Copy, PartialEq)]
enum Span {
    Full,
    Scalar,
    /// A `[1, cols]` row against a `[rows, cols]` output.
    Row(usize),
}

fn span_for(shape: &[usize], out: &[usize]) -> Span {
    if shape == out {
        Span::Full
    } else if shape.iter().product::<usize>() == 1 {
        Span::Scalar
    } else {
        Span::Row(*shape.last().unwrap())
    }
}

/// Output shape for elementwise ops with the limited broadcasting the
/// losses need: equal shapes, a single-element operand, or a [1, c] row
/// against a [r, c] matrix.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let an: usize = a.iter().product();
    let bn: usize = b.iter().product();
    if an == 1 {
        return Ok(b.to_vec());
    }
    if bn == 1 {
        return Ok(a.to_vec());
    }
    let row_vs_mat = |row: &[usize], mat: &[usize]| {
        row.len() == 2 && mat.len() == 2 && row[0] == 1 && row[1] == mat[1]
    };
    if row_vs_mat(b, a) {
        return Ok(a.to_vec());
    }
    if row_vs_mat(a, b) {
        return Ok(b.to_vec());
    }
    Err(Error::dim(format!(
        "shapes {a:?} and {b:?} do not broadcast"
    )))
}

fn operand_index(span: Span, flat: usize) -> usize {
    match span {
        Span::Full => flat,
        Span::Scalar => 0,
        Span::Row(cols) => flat % cols,
    }
}

/// buf += scale * (g reduced onto `span`)
fn accumulate_reduced(buf: &mut [f64], g: &[f64], span: Span, scale: f64) {
    match span {
        Span::Full => {
            for (b, &v) in buf.iter_mut().zip(g) {
                *b += scale * v;
            }
        }
        Span::Scalar => {
            buf[0] += scale * g.iter().sum::<f64>();
        }
        Span::Row(cols) => {
            for (i, &v) in g.iter().enumerate() {
                buf[i % cols] += scale * v;
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that never records: ops become plain value computation.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recorded nodes. Tensors handed out before the clear must
    /// not be used with this tape again.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Registers `t` as a leaf and returns the tracked copy. Gradients are
    /// queried through the returned tensor, not the original.
    pub fn watch(&mut self, t: &Tensor) -> Tensor {
        if !self.recording {
            return t.clone();
        }
        let id = self.nodes.len();
        let mut tracked = t.clone();
        tracked.node = Some(id);
        self.nodes.push(Node {
            op: Op::Leaf,
            value: tracked.clone(),
            needs_grad: t.requires_grad,
        });
        tracked
    }

    fn ensure(&mut self, t: &Tensor) -> Result<usize> {
        if let Some(id) = t.node_id() {
            if id >= self.nodes.len() {
                return Err(Error::config(
                    "tensor references a node beyond this tape (cleared or foreign tape?)",
                ));
            }
            return Ok(id);
        }
        if t.requires_grad {
            return Err(Error::config(
                "tensor requires grad but was never watched on this tape",
            ));
        }
        let id = self.nodes.len();
        let mut leaf = t.clone();
        leaf.node = Some(id);
        self.nodes.push(Node {
            op: Op::Leaf,
            value: leaf,
            needs_grad: false,
        });
        Ok(id)
    }

    fn push_op(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let id = self.nodes.len();
        let t = Tensor {
            shape,
            data,
            requires_grad: true,
            node: Some(id),
        };
        self.nodes.push(Node {
            op,
            value: t.clone(),
            needs_grad: true,
        });
        Ok(t)
    }

    fn tracks(&self, t: &Tensor) -> bool {
        self.recording && t.requires_grad
    }

    fn finish1(
        &mut self,
        src: &Tensor,
        shape: Vec<usize>,
        data: Vec<f64>,
        make: impl FnOnce(usize) -> Op,
    ) -> Result<Tensor> {
        if !self.tracks(src) {
            return Tensor::new(&shape, data);
        }
        let id = self.ensure(src)?;
        self.push_op(make(id), shape, data)
    }

    fn finish2(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        shape: Vec<usize>,
        data: Vec<f64>,
        make: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Tensor> {
        if !(self.tracks(a) || self.tracks(b)) {
            return Tensor::new(&shape, data);
        }
        let ia = self.ensure(a)?;
        let ib = self.ensure(b)?;
        self.push_op(make(ia, ib), shape, data)
    }

    // ---- elementwise ----

    fn binary(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Tensor> {
        let shape = broadcast_shape(&a.shape, &b.shape)?;
        let sa = span_for(&a.shape, &shape);
        let sb = span_for(&b.shape, &shape);
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            data.push(f(
                a.data[operand_index(sa, i)],
                b.data[operand_index(sb, i)],
            ));
        }
        self.finish2(a, b, shape, data, make)
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x * y, Op::Mul)
    }

    pub fn addc(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        let data = a.data.iter().map(|x| x + c).collect();
        self.finish1(a, a.shape.clone(), data, Op::AddC)
    }

    pub fn mulc(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        let data = a.data.iter().map(|x| x * c).collect();
        self.finish1(a, a.shape.clone(), data, |i| Op::MulC(i, c))
    }

    pub fn neg(&mut self, a: &Tensor) -> Result<Tensor> {
        let data = a.data.iter().map(|x| -x).collect();
        self.finish1(a, a.shape.clone(), data, Op::Neg)
    }

    pub fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        let data = a.data.iter().map(|x| x.max(0.0)).collect();
        self.finish1(a, a.shape.clone(), data, Op::Relu)
    }

    pub fn tanh(&mut self, a: &Tensor) -> Result<Tensor> {
        let data = a.data.iter().map(|x| x.tanh()).collect();
        self.finish1(a, a.shape.clone(), data, Op::Tanh)
    }

    pub fn exp(&mut self, a: &Tensor) -> Result<Tensor> {
        let data: Vec<f64> = a.data.iter().map(|x| x.exp()).collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("exp overflowed to a non-finite value"));
        }
        self.finish1(a, a.shape.clone(), data, Op::Exp)
    }

    pub fn ln(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.data.iter().any(|&x| x <= 0.0) {
            return Err(Error::domain("ln of a non-positive value"));
        }
        let data = a.data.iter().map(|x| x.ln()).collect();
        self.finish1(a, a.shape.clone(), data, Op::Ln)
    }

    pub fn sqrt(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.data.iter().any(|&x| x < 0.0) {
            return Err(Error::domain("sqrt of a negative value"));
        }
        let data = a.data.iter().map(|x| x.sqrt()).collect();
        self.finish1(a, a.shape.clone(), data, Op::Sqrt)
    }

    pub fn abs(&mut self, a: &Tensor) -> Result<Tensor> {
        let data = a.data.iter().map(|x| x.abs()).collect();
        self.finish1(a, a.shape.clone(), data, Op::Abs)
    }

    pub fn square(&mut self, a: &Tensor) -> Result<Tensor> {
        let data = a.data.iter().map(|x| x * x).collect();
        self.finish1(a, a.shape.clone(), data, Op::Square)
    }

    pub fn clamp(&mut self, a: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
        if lo > hi {
            return Err(Error::config(format!("clamp bounds inverted: [{lo}, {hi}]")));
        }
        let data = a.data.iter().map(|x| x.clamp(lo, hi)).collect();
        self.finish1(a, a.shape.clone(), data, |i| Op::Clamp(i, lo, hi))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 || b.rank() != 2 {
            return Err(Error::dim(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                a.shape, b.shape
            )));
        }
        let (m, k) = (a.shape[0], a.shape[1]);
        let (k2, n) = (b.shape[0], b.shape[1]);
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions differ: {:?} vs {:?}",
                a.shape, b.shape
            )));
        }
        let data = kernels::mm_nn(&a.data, &b.data, m, k, n);
        self.finish2(a, b, vec![m, n], data, Op::Matmul)
    }

    pub fn transpose(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 {
            return Err(Error::dim(format!(
                "transpose needs a rank-2 operand, got {:?}",
                a.shape
            )));
        }
        let (m, n) = (a.shape[0], a.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = a.data[i * n + j];
            }
        }
        self.finish1(a, vec![n, m], data, Op::Transpose)
    }

    /// y = W x + b with W [out, in], x [in], b [out].
    pub fn affine(&mut self, w: &Tensor, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        if w.rank() != 2 || x.rank() != 1 || b.rank() != 1 {
            return Err(Error::dim(format!(
                "affine wants W [o,i], x [i], b [o]; got {:?}, {:?}, {:?}",
                w.shape, x.shape, b.shape
            )));
        }
        let (o, i) = (w.shape[0], w.shape[1]);
        if x.shape[0] != i || b.shape[0] != o {
            return Err(Error::dim(format!(
                "affine shapes disagree: W {:?}, x {:?}, b {:?}",
                w.shape, x.shape, b.shape
            )));
        }
        let mut data = b.data.clone();
        for (r, d) in data.iter_mut().enumerate() {
            let row = &w.data[r * i..(r + 1) * i];
            let mut acc = 0.0;
            for (&wv, &xv) in row.iter().zip(&x.data) {
                acc += wv * xv;
            }
            *d += acc;
        }
        if !(self.tracks(w) || self.tracks(x) || self.tracks(b)) {
            return Tensor::new(&[o], data);
        }
        let iw = self.ensure(w)?;
        let ix = self.ensure(x)?;
        let ib = self.ensure(b)?;
        self.push_op(Op::Affine { w: iw, x: ix, b: ib }, vec![o], data)
    }

    /// input [cin, h, w], kernel [cout, cin, kh, kw], bias [cout].
    pub fn conv2d(
        &mut self,
        input: &Tensor,
        kernel: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        if input.rank() != 3 || kernel.rank() != 4 || bias.rank() != 1 {
            return Err(Error::dim(format!(
                "conv2d wants input [c,h,w], kernel [o,c,kh,kw], bias [o]; got {:?}, {:?}, {:?}",
                input.shape, kernel.shape, bias.shape
            )));
        }
        let (cin, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
        let (cout, kcin, kh, kw) = (
            kernel.shape[0],
            kernel.shape[1],
            kernel.shape[2],
            kernel.shape[3],
        );
        if kcin != cin || bias.shape[0] != cout {
            return Err(Error::dim(format!(
                "conv2d channels disagree: input {:?}, kernel {:?}, bias {:?}",
                input.shape, kernel.shape, bias.shape
            )));
        }
        let (data, oh, ow) = kernels::conv2d_forward(
            &input.data,
            cin,
            h,
            w,
            &kernel.data,
            cout,
            kh,
            kw,
            &bias.data,
            stride,
            padding,
        )?;
        if !(self.tracks(input) || self.tracks(kernel) || self.tracks(bias)) {
            return Tensor::new(&[cout, oh, ow], data);
        }
        let ii = self.ensure(input)?;
        let ik = self.ensure(kernel)?;
        let ib = self.ensure(bias)?;
        self.push_op(
            Op::Conv2d {
                input: ii,
                kernel: ik,
                bias: ib,
                stride,
                padding,
            },
            vec![cout, oh, ow],
            data,
        )
    }

    /// Per-channel softmax over the spatial grid, then expected (x, y) in
    /// [-1, 1] per channel. Output shape [2c], x before y.
    pub fn spatial_softmax(&mut self, input: &Tensor, temperature: f64) -> Result<Tensor> {
        if input.rank() != 3 {
            return Err(Error::dim(format!(
                "spatial_softmax wants [c,h,w], got {:?}",
                input.shape
            )));
        }
        let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
        let (data, probs) = kernels::spatial_softmax_forward(&input.data, c, h, w, temperature)?;
        self.finish1(input, vec![2 * c], data, |i| Op::SpatialSoftmax {
            input: i,
            temperature,
            probs,
        })
    }

    // ---- reductions ----

    /// Numerically safe log(sum(exp(x))) over all elements.
    pub fn logsumexp(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.numel() == 0 {
            return Err(Error::dim("logsumexp of an empty tensor"));
        }
        let m = a.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = a.data.iter().map(|x| (x - m).exp()).sum();
        let v = m + s.ln();
        self.finish1(a, Vec::new(), vec![v], Op::LogSumExp)
    }

    pub fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        let v = a.data.iter().sum();
        self.finish1(a, Vec::new(), vec![v], Op::Sum)
    }

    pub fn mean(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.numel() == 0 {
            return Err(Error::dim("mean of an empty tensor"));
        }
        let v = a.data.iter().sum::<f64>() / a.numel() as f64;
        self.finish1(a, Vec::new(), vec![v], Op::Mean)
    }

    // ---- shape plumbing ----

    /// Stacks same-shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::dim("stack of zero tensors"));
        }
        let inner = &parts[0].shape;
        if parts.iter().any(|p| &p.shape != inner) {
            return Err(Error::dim("stack operands must share a shape"));
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(inner);
        let mut data = Vec::with_capacity(parts.len() * parts[0].numel());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        if !parts.iter().any(|p| self.tracks(p)) {
            return Tensor::new(&shape, data);
        }
        let ids = parts
            .iter()
            .map(|p| self.ensure(p))
            .collect::<Result<Vec<_>>>()?;
        self.push_op(Op::Stack(ids), shape, data)
    }

    /// Concatenates rank-1 tensors into one longer vector.
    pub fn concat(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::dim("concat of zero tensors"));
        }
        if parts.iter().any(|p| p.rank() != 1) {
            return Err(Error::dim("concat operands must be rank-1"));
        }
        let total: usize = parts.iter().map(|p| p.numel()).sum();
        let mut data = Vec::with_capacity(total);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        if !parts.iter().any(|p| self.tracks(p)) {
            return Tensor::new(&[total], data);
        }
        let ids = parts
            .iter()
            .map(|p| self.ensure(p))
            .collect::<Result<Vec<_>>>()?;
        self.push_op(Op::Concat(ids), vec![total], data)
    }

    /// Contiguous range out of a rank-1 tensor.
    pub fn slice(&mut self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        if a.rank() != 1 {
            return Err(Error::dim(format!("slice wants rank-1, got {:?}", a.shape)));
        }
        if start + len > a.numel() {
            return Err(Error::dim(format!(
                "slice {start}..{} out of bounds for length {}",
                start + len,
                a.numel()
            )));
        }
        let data = a.data[start..start + len].to_vec();
        self.finish1(a, vec![len], data, |i| Op::Slice { input: i, start })
    }

    /// Single element as a scalar, by flat index.
    pub fn index(&mut self, a: &Tensor, flat: usize) -> Result<Tensor> {
        if flat >= a.numel() {
            return Err(Error::dim(format!(
                "index {flat} out of bounds for {} elements",
                a.numel()
            )));
        }
        let data = vec![a.data[flat]];
        self.finish1(a, Vec::new(), data, |i| Op::Index { input: i, flat })
    }

    // ---- similarity channels ----

    /// One similarity value per anchor row; gradient flows to `z` only.
    pub fn sim(&mut self, z: &Tensor, kind: SimKind, anchors: &Arc<SimAnchors>) -> Result<Tensor> {
        if z.rank() != 1 || z.shape[0] != anchors.dim {
            return Err(Error::dim(format!(
                "sim wants z of shape [{}], got {:?}",
                anchors.dim, z.shape
            )));
        }
        let d = anchors.dim;
        let zc: Vec<f64> = z
            .data
            .iter()
            .zip(&anchors.mean)
            .map(|(&v, &m)| v - m)
            .collect();
        let mut data = vec![0.0; anchors.count];
        match kind {
            SimKind::Cos => {
                let nz = zc.iter().map(|v| v * v).sum::<f64>().sqrt();
                if nz >= DEGENERATE_NORM {
                    for (j, out) in data.iter_mut().enumerate() {
                        let u = &anchors.unit[j * d..(j + 1) * d];
                        let mut acc = 0.0;
                        for (&zv, &uv) in zc.iter().zip(u) {
                            acc += zv * uv;
                        }
                        *out = acc / nz;
                    }
                }
            }
            SimKind::L1 => {
                for (j, out) in data.iter_mut().enumerate() {
                    let c = &anchors.centered[j * d..(j + 1) * d];
                    let s: f64 = zc.iter().zip(c).map(|(&zv, &cv)| (zv - cv).abs()).sum();
                    *out = -s / d as f64;
                }
            }
            SimKind::L2 => {
                let root_d = (d as f64).sqrt();
                for (j, out) in data.iter_mut().enumerate() {
                    let c = &anchors.centered[j * d..(j + 1) * d];
                    let s: f64 = zc
                        .iter()
                        .zip(c)
                        .map(|(&zv, &cv)| (zv - cv) * (zv - cv))
                        .sum();
                    *out = -s.sqrt() / root_d;
                }
            }
            SimKind::LInf => {
                for (j, out) in data.iter_mut().enumerate() {
                    let c = &anchors.centered[j * d..(j + 1) * d];
                    let m = zc
                        .iter()
                        .zip(c)
                        .map(|(&zv, &cv)| (zv - cv).abs())
                        .fold(0.0, f64::max);
                    *out = -m;
                }
            }
        }
        let anchors = Arc::clone(anchors);
        self.finish1(z, vec![anchors.count], data, |i| Op::Sim {
            z: i,
            kind,
            anchors,
        })
    }

    /// Normalizes a rank-1 tensor to zero mean, unit variance.
    pub fn layer_norm(&mut self, a: &Tensor, eps: f64) -> Result<Tensor> {
        if a.rank() != 1 || a.numel() == 0 {
            return Err(Error::dim(format!(
                "layer_norm wants a non-empty rank-1 tensor, got {:?}",
                a.shape
            )));
        }
        let n = a.numel() as f64;
        let mu = a.data.iter().sum::<f64>() / n;
        let var = a.data.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
        let sigma = (var + eps).sqrt();
        let data = a.data.iter().map(|x| (x - mu) / sigma).collect();
        self.finish1(a, a.shape.clone(), data, |i| Op::LayerNorm { input: i, eps })
    }

    // ---- backward ----

    /// Accumulates d(loss)/d(node) for every node the scalar loss depends
    /// on. The tape is left intact; clear it before reuse.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let lid = loss
            .node_id()
            .ok_or_else(|| Error::config("backward: loss is not recorded on this tape"))?;
        if lid >= self.nodes.len() {
            return Err(Error::config("backward: loss node is out of range"));
        }
        if !loss.is_scalar() {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[lid] = Some(vec![1.0]);
        for id in (0..=lid).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn sink<'a>(
        &self,
        grads: &'a mut [Option<Vec<f64>>],
        id: usize,
    ) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[id].needs_grad {
            return None;
        }
        let numel = self.nodes[id].value.numel();
        Some(grads[id].get_or_insert_with(|| vec![0.0; numel]))
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for src in [*a, *b] {
                    let span = span_for(&self.nodes[src].value.shape, &out.shape);
                    if let Some(buf) = self.sink(grads, src) {
                        accumulate_reduced(buf, g, span, 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                let sa = span_for(&self.nodes[*a].value.shape, &out.shape);
                if let Some(buf) = self.sink(grads, *a) {
                    accumulate_reduced(buf, g, sa, 1.0);
                }
                let sb = span_for(&self.nodes[*b].value.shape, &out.shape);
                if let Some(buf) = self.sink(grads, *b) {
                    accumulate_reduced(buf, g, sb, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let sa = span_for(&self.nodes[a].value.shape, &out.shape);
                let sb = span_for(&self.nodes[b].value.shape, &out.shape);
                if self.nodes[a].needs_grad {
                    let bv = &self.nodes[b].value.data;
                    let mut local = vec![0.0; self.nodes[a].value.numel()];
                    for (i, &gv) in g.iter().enumerate() {
                        local[operand_index(sa, i)] += gv * bv[operand_index(sb, i)];
                    }
                    if let Some(buf) = self.sink(grads, a) {
                        for (x, l) in buf.iter_mut().zip(&local) {
                            *x += l;
                        }
                    }
                }
                if self.nodes[b].needs_grad {
                    let av = &self.nodes[a].value.data;
                    let mut local = vec![0.0; self.nodes[b].value.numel()];
                    for (i, &gv) in g.iter().enumerate() {
                        local[operand_index(sb, i)] += gv * av[operand_index(sa, i)];
                    }
                    if let Some(buf) = self.sink(grads, b) {
                        for (x, l) in buf.iter_mut().zip(&local) {
                            *x += l;
                        }
                    }
                }
            }
            Op::AddC(a) => {
                if let Some(buf) = self.sink(grads, *a) {
                    for (x, &gv) in buf.iter_mut().zip(g) {
                        *x += gv;
                    }
                }
            }
            Op::MulC(a, c) => {
                let c = *c;
                if let Some(buf) = self.sink(grads, *a) {
                    for (x, &gv) in buf.iter_mut().zip(g) {
                        *x += c * gv;
                    }
                }
            }
            Op::Neg(a) => {
                if let Some(buf) = self.sink(grads, *a) {
                    for (x, &gv) in buf.iter_mut().zip(g) {
                        *x -= gv;
                    }
                }
            }
            Op::Relu(a) => {
                let xv = self.nodes[*a].value.data.clone();
                if let Some(buf) = self.sink(grads, *a) {
                    for ((x, &gv), &iv) in buf.iter_mut().zip(g).zip(&xv) {
                        if iv > 0.0 {
                            *x += gv;
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                let yv = out.data.clone();
                if let Some(buf) = self.sink(grads, *a) {
                    for ((x, &gv), &y) in buf.iter_mut().zip(g).zip(&yv) {
                        *x += gv * (1.0 - y * y);
                    }
                }
            }
            Op::Exp(a) => {
                let yv = out.data.clone();
                if let Some(buf) = self.sink(grads, *a) {
                    for ((x, &gv), &y) in buf.iter_mut().zip(g).zip(&yv) {
                        *x += gv * y;
                    }
                }
            }
            Op::Ln(a) => {
                let xv = self.nodes[*a].value.data.clone();
                if let Some(buf) = self.sink(grads, *a) {
                    for ((x, &gv), &iv) in buf.iter_mut().zip(g).zip(&xv) {
                        *x += gv / iv;
                    }
                }
            }
            Op::Sqrt(a) => {
                let yv = out.data.clone();
                if let Some(buf) = self.sink(grads, *a) {
                    for ((x, &gv), &y) in buf.iter_mut().zip(g).zip(&yv) {
                        *x += gv * 0.5 / y.max(DEGENERATE_NORM);
                    }
                }
            }
            Op::Abs(a) => {
                let xv = self.nodes[*a].value.data.clone();
                if let Some(buf) = self.sink(grads, *a) {
                    for ((x, &gv), &iv) in buf.iter_mut().zip(g).zip(&xv) {
                        *x += gv * sign(iv);
                    }
                }
            }
            Op::Square(a) => {
                let xv = self.nodes[*a].value.data.clone();
                if let Some(buf) = self.sink(grads, *a) {
                    for ((x, &gv), &iv) in buf.iter_mut().zip(g).zip(&xv) {
                        *x += gv * 2.0 * iv;
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let xv = self.nodes[*a].value.data.clone();
                if let Some(buf) = self.sink(grads, *a) {
                    for ((x, &gv), &iv) in buf.iter_mut().zip(g).zip(&xv) {
                        if iv >= lo && iv <= hi {
                            *x += gv;
                        }
                    }
                }
            }
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (
                    self.nodes[a].value.shape[0],
                    self.nodes[a].value.shape[1],
                );
                let n = self.nodes[b].value.shape[1];
                if self.nodes[a].needs_grad {
                    let local = kernels::mm_nt(g, &self.nodes[b].value.data, m, n, k);
                    if let Some(buf) = self.sink(grads, a) {
                        for (x, l) in buf.iter_mut().zip(&local) {
                            *x += l;
                        }
                    }
                }
                if self.nodes[b].needs_grad {
                    let local = kernels::mm_tn(&self.nodes[a].value.data, g, m, k, n);
                    if let Some(buf) = self.sink(grads, b) {
                        for (x, l) in buf.iter_mut().zip(&local) {
                            *x += l;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (out.shape[0], out.shape[1]);
                if let Some(buf) = self.sink(grads, *a) {
                    for i in 0..n {
                        for j in 0..m {
                            buf[j * n + i] += g[i * m + j];
                        }
                    }
                }
            }
            Op::Affine { w, x, b } => {
                let (w, x, b) = (*w, *x, *b);
                let i = self.nodes[w].value.shape[1];
                if self.nodes[w].needs_grad {
                    let xv = self.nodes[x].value.data.clone();
                    if let Some(buf) = self.sink(grads, w) {
                        for (r, &gv) in g.iter().enumerate() {
                            if gv == 0.0 {
                                continue;
                            }
                            let row = &mut buf[r * i..(r + 1) * i];
                            for (bv, &v) in row.iter_mut().zip(&xv) {
                                *bv += gv * v;
                            }
                        }
                    }
                }
                if self.nodes[x].needs_grad {
                    let wv = self.nodes[w].value.data.clone();
                    if let Some(buf) = self.sink(grads, x) {
                        for (r, &gv) in g.iter().enumerate() {
                            if gv == 0.0 {
                                continue;
                            }
                            let row = &wv[r * i..(r + 1) * i];
                            for (bv, &v) in buf.iter_mut().zip(row) {
                                *bv += gv * v;
                            }
                        }
                    }
                }
                if let Some(buf) = self.sink(grads, b) {
                    for (bv, &gv) in buf.iter_mut().zip(g) {
                        *bv += gv;
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let (iid, kid, bid) = (*input, *kernel, *bias);
                let it = &self.nodes[iid].value;
                let kt = &self.nodes[kid].value;
                let (cin, h, w) = (it.shape[0], it.shape[1], it.shape[2]);
                let (cout, kh, kw) = (kt.shape[0], kt.shape[2], kt.shape[3]);
                let (oh, ow) = (out.shape[1], out.shape[2]);
                let mut gin = if self.nodes[iid].needs_grad {
                    Some(vec![0.0; it.numel()])
                } else {
                    None
                };
                let mut gk = if self.nodes[kid].needs_grad {
                    Some(vec![0.0; kt.numel()])
                } else {
                    None
                };
                let mut gb = if self.nodes[bid].needs_grad {
                    Some(vec![0.0; cout])
                } else {
                    None
                };
                kernels::conv2d_backward(
                    g,
                    &it.data,
                    cin,
                    h,
                    w,
                    &kt.data,
                    cout,
                    kh,
                    kw,
                    *stride,
                    *padding,
                    oh,
                    ow,
                    gin.as_deref_mut(),
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                for (local, nid) in [(gin, iid), (gk, kid), (gb, bid)] {
                    if let Some(local) = local {
                        if let Some(buf) = self.sink(grads, nid) {
                            for (x, l) in buf.iter_mut().zip(&local) {
                                *x += l;
                            }
                        }
                    }
                }
            }
            Op::SpatialSoftmax {
                input,
                temperature,
                probs,
            } => {
                let it = &self.nodes[*input].value;
                let (c, h, w) = (it.shape[0], it.shape[1], it.shape[2]);
                let outv = out.data.clone();
                let (temperature, probs) = (*temperature, probs.clone());
                if let Some(buf) = self.sink(grads, *input) {
                    kernels::spatial_softmax_backward(
                        g,
                        &outv,
                        &probs,
                        c,
                        h,
                        w,
                        temperature,
                        buf,
                    );
                }
            }
            Op::LogSumExp(a) => {
                let lse = out.data[0];
                let xv = self.nodes[*a].value.data.clone();
                if let Some(buf) = self.sink(grads, *a) {
                    for (x, &iv) in buf.iter_mut().zip(&xv) {
                        *x += g[0] * (iv - lse).exp();
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(buf) = self.sink(grads, *a) {
                    for x in buf.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                let n = self.nodes[*a].value.numel() as f64;
                if let Some(buf) = self.sink(grads, *a) {
                    for x in buf.iter_mut() {
                        *x += g[0] / n;
                    }
                }
            }
            Op::Stack(ids) => {
                let inner = if ids.is_empty() { 0 } else { out.numel() / ids.len() };
                for (i, &src) in ids.iter().enumerate() {
                    if let Some(buf) = self.sink(grads, src) {
                        for (x, &gv) in buf.iter_mut().zip(&g[i * inner..(i + 1) * inner]) {
                            *x += gv;
                        }
                    }
                }
            }
            Op::Concat(ids) => {
                let mut off = 0;
                for &src in ids {
                    let len = self.nodes[src].value.numel();
                    if let Some(buf) = self.sink(grads, src) {
                        for (x, &gv) in buf.iter_mut().zip(&g[off..off + len]) {
                            *x += gv;
                        }
                    }
                    off += len;
                }
            }
            Op::Slice { input, start } => {
                let start = *start;
                if let Some(buf) = self.sink(grads, *input) {
                    for (x, &gv) in buf[start..start + g.len()].iter_mut().zip(g) {
                        *x += gv;
                    }
                }
            }
            Op::Index { input, flat } => {
                let flat = *flat;
                if let Some(buf) = self.sink(grads, *input) {
                    buf[flat] += g[0];
                }
            }
            Op::Sim { z, kind, anchors } => {
                let zv = self.nodes[*z].value.data.clone();
                let d = anchors.dim;
                let zc: Vec<f64> = zv
                    .iter()
                    .zip(anchors.mean())
                    .map(|(&v, &m)| v - m)
                    .collect();
                let outv = out.data.clone();
                let (kind, anchors) = (*kind, Arc::clone(anchors));
                if let Some(buf) = self.sink(grads, *z) {
                    match kind {
                        SimKind::Cos => {
                            let nz = zc.iter().map(|v| v * v).sum::<f64>().sqrt();
                            if nz >= DEGENERATE_NORM {
                                let mut dot_gy = 0.0;
                                for (j, &gv) in g.iter().enumerate() {
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    dot_gy += gv * outv[j];
                                    let u = &anchors.unit[j * d..(j + 1) * d];
                                    for (x, &uv) in buf.iter_mut().zip(u) {
                                        *x += gv * uv / nz;
                                    }
                                }
                                let k = dot_gy / (nz * nz);
                                for (x, &zcv) in buf.iter_mut().zip(&zc) {
                                    *x -= k * zcv;
                                }
                            }
                        }
                        SimKind::L1 => {
                            let inv_d = 1.0 / d as f64;
                            for (j, &gv) in g.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let c = &anchors.centered[j * d..(j + 1) * d];
                                for ((x, &zcv), &cv) in buf.iter_mut().zip(&zc).zip(c) {
                                    *x -= gv * sign(zcv - cv) * inv_d;
                                }
                            }
                        }
                        SimKind::L2 => {
                            let root_d = (d as f64).sqrt();
                            for (j, &gv) in g.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let c = &anchors.centered[j * d..(j + 1) * d];
                                let nrm: f64 = zc
                                    .iter()
                                    .zip(c)
                                    .map(|(&zv, &cv)| (zv - cv) * (zv - cv))
                                    .sum::<f64>()
                                    .sqrt();
                                if nrm < DEGENERATE_NORM {
                                    continue;
                                }
                                let k = gv / (nrm * root_d);
                                for ((x, &zcv), &cv) in buf.iter_mut().zip(&zc).zip(c) {
                                    *x -= k * (zcv - cv);
                                }
                            }
                        }
                        SimKind::LInf => {
                            for (j, &gv) in g.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let c = &anchors.centered[j * d..(j + 1) * d];
                                let mut best = 0usize;
                                let mut best_abs = -1.0;
                                for (idx, (&zv, &cv)) in zc.iter().zip(c).enumerate() {
                                    let a = (zv - cv).abs();
                                    if a > best_abs {
                                        best_abs = a;
                                        best = idx;
                                    }
                                }
                                buf[best] -= gv * sign(zc[best] - c[best]);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { input, eps } => {
                let xv = self.nodes[*input].value.data.clone();
                let n = xv.len() as f64;
                let mu = xv.iter().sum::<f64>() / n;
                let var = xv.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
                let sigma = (var + eps).sqrt();
                let yv = out.data.clone();
                let mean_g = g.iter().sum::<f64>() / n;
                let mean_gy = g.iter().zip(&yv).map(|(&gv, &y)| gv * y).sum::<f64>() / n;
                if let Some(buf) = self.sink(grads, *input) {
                    for ((x, &gv), &y) in buf.iter_mut().zip(g).zip(&yv) {
                        *x += (gv - mean_g - y * mean_gy) / sigma;
                    }
                }
            }
        }
    }
}
