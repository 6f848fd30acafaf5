use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Additive mask surrogate for -inf: large enough that exp underflows to
/// exactly 0 after row-max subtraction, finite so the forward pass stays NaN-free.
const NEG_INF_SURROGATE: f64 = -1e9;

/// Padding behavior for same-padded 1D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Out-of-range taps read 0.
    Zero,
    /// Out-of-range taps read the nearest edge frame.
    Replicate,
}

enum Op {
    Leaf,
    Matmul {
        a: Var,
        b: Var,
    },
    Transpose {
        x: Var,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        pad: PadMode,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        // per-row normalized values and 1/sqrt(var+eps)
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxRows {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddScalar {
        x: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Relu {
        x: Var,
    },
    Exp {
        x: Var,
    },
    Log {
        x: Var,
    },
    Abs {
        x: Var,
    },
    Softplus {
        x: Var,
    },
    BiasAdd {
        x: Var,
        b: Var,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        // 0.0 for dropped entries, 1/(1-p) for survivors
        mask: Vec<f64>,
    },
    Reduce {
        x: Var,
        axis: usize,
        mean: bool,
    },
    ReduceAll {
        x: Var,
        mean: bool,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    /// True when a gradient can flow to or through this node.
    track: bool,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, if any flowed to it (requires-grad leaves always
    /// have one after backward, zero-filled when off the loss path).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Wengert tape: ordered record of primitive operations.
///
/// Single-writer by construction (`&mut self` everywhere); one backward pass
/// per recorded graph. Build a fresh tape per training step or per inference
/// call; separate tapes are independent and may live on different threads.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input value. `requires_grad` marks it as a differentiation
    /// target for [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad, requires_grad)
    }

    /// Record a value that gradients never flow into (targets, masks, positional tables).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, track: bool, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            track,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].track
    }

    fn record(&mut self, value: Tensor, op: Op, parents_tracked: bool) -> Var {
        self.push(value, op, parents_tracked, false)
    }

    // ---- primitive operations -------------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]` matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "matmul needs rank-2 operands, got {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let (k2, n) = (bv.shape()[0], bv.shape()[1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let track = self.tracked(a) || self.tracked(b);
        Ok(self.record(
            Tensor::new(vec![m, n], out).expect("matmul shape"),
            Op::Matmul { a, b },
            track,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "transpose needs rank-2 input, got {:?}",
                xv.shape()
            )));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv.data()[i * c + j];
            }
        }
        let track = self.tracked(x);
        Ok(self.record(
            Tensor::new(vec![c, r], out).expect("transpose shape"),
            Op::Transpose { x },
            track,
        ))
    }

    /// Same-padded temporal convolution: `x [T,Cin]`, `w [K,Cin,Cout]`, `b [Cout]`.
    /// Output keeps the temporal length for every odd kernel size.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, pad: PadMode) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.shape().len() != 2 || wv.shape().len() != 3 || bv.shape().len() != 1 {
            return Err(Error::Shape(format!(
                "conv1d expects x[T,Cin], w[K,Cin,Cout], b[Cout]; got {:?}, {:?}, {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let (t_len, cin) = (xv.shape()[0], xv.shape()[1]);
        let (k, wcin, cout) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if k % 2 == 0 {
            return Err(Error::Config(format!(
                "conv1d kernel size must be odd for same padding, got {k}"
            )));
        }
        if wcin != cin || bv.shape()[0] != cout {
            return Err(Error::Shape(format!(
                "conv1d channel mismatch: x has Cin={cin}, w is {:?}, b is {:?}",
                wv.shape(),
                bv.shape()
            )));
        }
        let half = k / 2;
        let mut out = vec![0.0; t_len * cout];
        for t in 0..t_len {
            let dst = &mut out[t * cout..(t + 1) * cout];
            dst.copy_from_slice(bv.data());
            for dk in 0..k {
                let src_t = t as isize + dk as isize - half as isize;
                let src_t = match pad {
                    PadMode::Zero => {
                        if src_t < 0 || src_t >= t_len as isize {
                            continue;
                        }
                        src_t as usize
                    }
                    PadMode::Replicate => src_t.clamp(0, t_len as isize - 1) as usize,
                };
                for ci in 0..cin {
                    let xval = xv.data()[src_t * cin + ci];
                    if xval == 0.0 {
                        continue;
                    }
                    let wrow = &wv.data()[(dk * cin + ci) * cout..(dk * cin + ci + 1) * cout];
                    for (d, wv_) in dst.iter_mut().zip(wrow) {
                        *d += xval * wv_;
                    }
                }
            }
        }
        let track = self.tracked(x) || self.tracked(w) || self.tracked(b);
        Ok(self.record(
            Tensor::new(vec![t_len, cout], out).expect("conv1d shape"),
            Op::Conv1d { x, w, b, pad },
            track,
        ))
    }

    /// Per-row normalization of `x [T,C]` over the channel axis, then affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        if xv.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "layer_norm needs rank-2 input, got {:?}",
                xv.shape()
            )));
        }
        let (t_len, c) = (xv.shape()[0], xv.shape()[1]);
        if gv.len() != c || bv.len() != c {
            return Err(Error::Shape(format!(
                "layer_norm affine params must have length {c}, got {} and {}",
                gv.len(),
                bv.len()
            )));
        }
        let mut out = vec![0.0; t_len * c];
        let mut normalized = vec![0.0; t_len * c];
        let mut inv_std = vec![0.0; t_len];
        for t in 0..t_len {
            let row = &xv.data()[t * c..(t + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[t] = istd;
            for j in 0..c {
                let xhat = (row[j] - mean) * istd;
                normalized[t * c + j] = xhat;
                out[t * c + j] = gv.data()[j] * xhat + bv.data()[j];
            }
        }
        let track = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        Ok(self.record(
            Tensor::new(vec![t_len, c], out).expect("layer_norm shape"),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            track,
        ))
    }

    /// Row-wise masked softmax. `mask`, when given, is row-major over `x`'s
    /// shape and marks valid positions; masked entries get probability
    /// exactly 0. A fully-masked row is an error.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "softmax_rows needs rank-2 input, got {:?}",
                xv.shape()
            )));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::Shape(format!(
                    "softmax mask has {} entries for a {r}x{c} input",
                    m.len()
                )));
            }
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv.data()[i * c..(i + 1) * c];
            let valid = |j: usize| mask.map_or(true, |m| m[i * c + j]);
            let mut max = f64::NEG_INFINITY;
            let mut any = false;
            for j in 0..c {
                let v = if valid(j) {
                    any = true;
                    row[j]
                } else {
                    row[j] + NEG_INF_SURROGATE
                };
                max = max.max(v);
            }
            if !any {
                return Err(Error::Numeric(format!("softmax row {i} is fully masked")));
            }
            let mut sum = 0.0;
            for j in 0..c {
                let shifted = if valid(j) {
                    row[j]
                } else {
                    row[j] + NEG_INF_SURROGATE
                };
                let e = if valid(j) { (shifted - max).exp() } else { 0.0 };
                out[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                out[i * c + j] /= sum;
            }
        }
        let track = self.tracked(x);
        Ok(self.record(
            Tensor::new(vec![r, c], out).expect("softmax shape"),
            Op::SoftmaxRows { x },
            track,
        ))
    }

    fn binary_shapes(&self, a: Var, b: Var, name: &str) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        let ok = av.shape() == bv.shape() || av.is_scalar() || bv.is_scalar();
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{name}: shapes {:?} and {:?} are neither equal nor scalar-broadcastable",
                av.shape(),
                bv.shape()
            )))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes(a, b, "add")?;
        let out = broadcast_zip(self.value(a), self.value(b), |x, y| x + y);
        let track = self.tracked(a) || self.tracked(b);
        Ok(self.record(out, Op::Add { a, b }, track))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes(a, b, "sub")?;
        let out = broadcast_zip(self.value(a), self.value(b), |x, y| x - y);
        let track = self.tracked(a) || self.tracked(b);
        Ok(self.record(out, Op::Sub { a, b }, track))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes(a, b, "mul")?;
        let out = broadcast_zip(self.value(a), self.value(b), |x, y| x * y);
        let track = self.tracked(a) || self.tracked(b);
        Ok(self.record(out, Op::Mul { a, b }, track))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).data().iter().map(|v| v + c).collect();
        let shape = self.value(x).shape().to_vec();
        let track = self.tracked(x);
        self.record(
            Tensor::new(shape, out).expect("add_scalar shape"),
            Op::AddScalar { x },
            track,
        )
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).data().iter().map(|v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        let track = self.tracked(x);
        self.record(
            Tensor::new(shape, out).expect("scale shape"),
            Op::Scale { x, c },
            track,
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.value(x).shape().to_vec();
        let track = self.tracked(x);
        self.record(
            Tensor::new(shape, out).expect("relu shape"),
            Op::Relu { x },
            track,
        )
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).data().iter().map(|v| v.exp()).collect();
        let shape = self.value(x).shape().to_vec();
        let track = self.tracked(x);
        self.record(
            Tensor::new(shape, out).expect("exp shape"),
            Op::Exp { x },
            track,
        )
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if let Some(v) = xv.data().iter().find(|v| **v <= 0.0) {
            return Err(Error::Numeric(format!("log of non-positive value {v}")));
        }
        let out = xv.data().iter().map(|v| v.ln()).collect();
        let shape = xv.shape().to_vec();
        let track = self.tracked(x);
        Ok(self.record(
            Tensor::new(shape, out).expect("log shape"),
            Op::Log { x },
            track,
        ))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).data().iter().map(|v| v.abs()).collect();
        let shape = self.value(x).shape().to_vec();
        let track = self.tracked(x);
        self.record(
            Tensor::new(shape, out).expect("abs shape"),
            Op::Abs { x },
            track,
        )
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v.max(0.0) + (-v.abs()).exp().ln_1p())
            .collect();
        let shape = self.value(x).shape().to_vec();
        let track = self.tracked(x);
        self.record(
            Tensor::new(shape, out).expect("softplus shape"),
            Op::Softplus { x },
            track,
        )
    }

    /// `x [T,C] + b [C]`, broadcast over rows.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if xv.shape().len() != 2 || bv.shape().len() != 1 || xv.shape()[1] != bv.len() {
            return Err(Error::Shape(format!(
                "bias_add expects x[T,C] and b[C], got {:?} and {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let (t_len, c) = (xv.shape()[0], xv.shape()[1]);
        let mut out = vec![0.0; t_len * c];
        for t in 0..t_len {
            for j in 0..c {
                out[t * c + j] = xv.data()[t * c + j] + bv.data()[j];
            }
        }
        let track = self.tracked(x) || self.tracked(b);
        Ok(self.record(
            Tensor::new(vec![t_len, c], out).expect("bias_add shape"),
            Op::BiasAdd { x, b },
            track,
        ))
    }

    /// Row gather: output row `t` is `table` row `ids[t]`. Backward scatters
    /// and accumulates per id. Serves both embedding lookup and the length
    /// regulator's row repetition.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "gather_rows needs a rank-2 table, got {:?}",
                tv.shape()
            )));
        }
        let (v, c) = (tv.shape()[0], tv.shape()[1]);
        if let Some(bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Index(format!(
                "row id {bad} out of range for table with {v} rows"
            )));
        }
        let mut out = vec![0.0; ids.len() * c];
        for (t, &id) in ids.iter().enumerate() {
            out[t * c..(t + 1) * c].copy_from_slice(&tv.data()[id * c..(id + 1) * c]);
        }
        let track = self.tracked(table);
        Ok(self.record(
            Tensor::new(vec![ids.len(), c], out).expect("gather shape"),
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            track,
        ))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by
    /// `1/(1-p)`. Identity in eval mode and at `p = 0`.
    pub fn dropout(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut ChaCha20Rng,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability must be in [0,1), got {p}"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.value(x).shape().to_vec();
        let track = self.tracked(x);
        Ok(self.record(
            Tensor::new(shape, out).expect("dropout shape"),
            Op::Dropout { x, mask },
            track,
        ))
    }

    fn reduce(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || axis > 1 {
            return Err(Error::Shape(format!(
                "axis reduce supports rank-2 tensors with axis 0 or 1, got shape {:?} axis {axis}",
                xv.shape()
            )));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let count = if axis == 0 { r } else { c };
        if count == 0 {
            return Err(Error::Shape("reduce over an empty axis".into()));
        }
        let (or, oc) = if axis == 0 { (1, c) } else { (r, 1) };
        let mut out = vec![0.0; or * oc];
        for i in 0..r {
            for j in 0..c {
                let dst = if axis == 0 { j } else { i };
                out[dst] += xv.data()[i * c + j];
            }
        }
        if mean {
            for v in &mut out {
                *v /= count as f64;
            }
        }
        let track = self.tracked(x);
        Ok(self.record(
            Tensor::new(vec![or, oc], out).expect("reduce shape"),
            Op::Reduce { x, axis, mean },
            track,
        ))
    }

    /// Keep-dims reduction: `[T,C]` -> `[1,C]` (axis 0) or `[T,1]` (axis 1).
    pub fn reduce_sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    pub fn reduce_mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let track = self.tracked(x);
        self.record(Tensor::scalar(s), Op::ReduceAll { x, mean: false }, track)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s: f64 = xv.data().iter().sum::<f64>() / xv.len() as f64;
        let track = self.tracked(x);
        self.record(Tensor::scalar(s), Op::ReduceAll { x, mean: true }, track)
    }

    // ---- backward -------------------------------------------------------------

    /// Reverse-topological gradient accumulation from a scalar loss.
    ///
    /// Consumes the recorded graph: a second call on the same tape is an
    /// error. Requires-grad leaves that are not on any path to the loss
    /// receive zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Numeric(
                "backward called twice on the same tape".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[idx].track {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            if self.nodes[idx].requires_grad {
                grads[idx] = Some(g);
            }
        }

        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let g = grads[idx].take().map(|g| {
                Tensor::new(node.value.shape().to_vec(), g).expect("grad shape matches value")
            });
            // Unreached requires-grad leaves get explicit zeros.
            let g = match (g, node.requires_grad) {
                (None, true) => Some(Tensor::zeros(node.value.shape().to_vec())),
                (g, _) => g,
            };
            out.push(g);
        }
        Ok(Gradients { grads: out })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Vec<f64>>],
        target: Var,
        contribution: impl Iterator<Item = f64>,
    ) {
        if !self.nodes[target.0].track {
            return;
        }
        let slot = &mut grads[target.0];
        match slot {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            None => {
                *slot = Some(contribution.collect());
            }
        }
    }

    fn accumulate_vec(&self, grads: &mut [Option<Vec<f64>>], target: Var, contribution: Vec<f64>) {
        self.accumulate(grads, target, contribution.into_iter());
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.tracked(*a) {
                    // grad_a = g . b^T
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for l in 0..k {
                                ga[i * k + l] += gij * bv.data()[l * n + j];
                            }
                        }
                    }
                    self.accumulate_vec(grads, *a, ga);
                }
                if self.tracked(*b) {
                    // grad_b = a^T . g
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for l in 0..k {
                            let ail = av.data()[i * k + l];
                            if ail == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[l * n + j] += ail * g[i * n + j];
                            }
                        }
                    }
                    self.accumulate_vec(grads, *b, gb);
                }
            }
            Op::Transpose { x } => {
                let xv = self.value(*x);
                let (r, c) = (xv.shape()[0], xv.shape()[1]);
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[j * r + i];
                    }
                }
                self.accumulate_vec(grads, *x, gx);
            }
            Op::Conv1d { x, w, b, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (t_len, cin) = (xv.shape()[0], xv.shape()[1]);
                let (k, _, cout) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                let half = k / 2;
                let src_index = |t: usize, dk: usize| -> Option<usize> {
                    let s = t as isize + dk as isize - half as isize;
                    match pad {
                        PadMode::Zero => {
                            if s < 0 || s >= t_len as isize {
                                None
                            } else {
                                Some(s as usize)
                            }
                        }
                        PadMode::Replicate => Some(s.clamp(0, t_len as isize - 1) as usize),
                    }
                };
                if self.tracked(*x) {
                    let mut gx = vec![0.0; t_len * cin];
                    for t in 0..t_len {
                        let grow = &g[t * cout..(t + 1) * cout];
                        for dk in 0..k {
                            let Some(s) = src_index(t, dk) else { continue };
                            for ci in 0..cin {
                                let wrow =
                                    &wv.data()[(dk * cin + ci) * cout..(dk * cin + ci + 1) * cout];
                                let mut acc = 0.0;
                                for (gv, wv_) in grow.iter().zip(wrow) {
                                    acc += gv * wv_;
                                }
                                gx[s * cin + ci] += acc;
                            }
                        }
                    }
                    self.accumulate_vec(grads, *x, gx);
                }
                if self.tracked(*w) {
                    let mut gw = vec![0.0; k * cin * cout];
                    for t in 0..t_len {
                        let grow = &g[t * cout..(t + 1) * cout];
                        for dk in 0..k {
                            let Some(s) = src_index(t, dk) else { continue };
                            for ci in 0..cin {
                                let xval = xv.data()[s * cin + ci];
                                if xval == 0.0 {
                                    continue;
                                }
                                let dst =
                                    &mut gw[(dk * cin + ci) * cout..(dk * cin + ci + 1) * cout];
                                for (d, gv) in dst.iter_mut().zip(grow) {
                                    *d += xval * gv;
                                }
                            }
                        }
                    }
                    self.accumulate_vec(grads, *w, gw);
                }
                if self.tracked(*b) {
                    let mut gb = vec![0.0; cout];
                    for t in 0..t_len {
                        for co in 0..cout {
                            gb[co] += g[t * cout + co];
                        }
                    }
                    self.accumulate_vec(grads, *b, gb);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let (t_len, c) = {
                    let xv = self.value(*x);
                    (xv.shape()[0], xv.shape()[1])
                };
                if self.tracked(*gamma) {
                    let mut gg = vec![0.0; c];
                    for t in 0..t_len {
                        for j in 0..c {
                            gg[j] += g[t * c + j] * normalized[t * c + j];
                        }
                    }
                    self.accumulate_vec(grads, *gamma, gg);
                }
                if self.tracked(*beta) {
                    let mut gb = vec![0.0; c];
                    for t in 0..t_len {
                        for j in 0..c {
                            gb[j] += g[t * c + j];
                        }
                    }
                    self.accumulate_vec(grads, *beta, gb);
                }
                if self.tracked(*x) {
                    let mut gx = vec![0.0; t_len * c];
                    for t in 0..t_len {
                        let mut mean_gxhat = 0.0;
                        let mut mean_gxhat_xhat = 0.0;
                        for j in 0..c {
                            let gxhat = g[t * c + j] * gv.data()[j];
                            mean_gxhat += gxhat;
                            mean_gxhat_xhat += gxhat * normalized[t * c + j];
                        }
                        mean_gxhat /= c as f64;
                        mean_gxhat_xhat /= c as f64;
                        for j in 0..c {
                            let gxhat = g[t * c + j] * gv.data()[j];
                            gx[t * c + j] = inv_std[t]
                                * (gxhat - mean_gxhat - normalized[t * c + j] * mean_gxhat_xhat);
                        }
                    }
                    self.accumulate_vec(grads, *x, gx);
                }
            }
            Op::SoftmaxRows { x } => {
                let yv = &self.nodes[idx].value;
                let (r, c) = (yv.shape()[0], yv.shape()[1]);
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let yrow = &yv.data()[i * c..(i + 1) * c];
                    let grow = &g[i * c..(i + 1) * c];
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, gv)| y * gv).sum();
                    for j in 0..c {
                        gx[i * c + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.accumulate_vec(grads, *x, gx);
            }
            Op::Add { a, b } => {
                self.binary_backward(grads, *a, *b, g, |_, _| (1.0, 1.0));
            }
            Op::Sub { a, b } => {
                self.binary_backward(grads, *a, *b, g, |_, _| (1.0, -1.0));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).clone(), self.value(*b).clone());
                self.binary_backward(grads, *a, *b, g, move |i_a, i_b| {
                    (bv.data()[i_b], av.data()[i_a])
                });
            }
            Op::AddScalar { x } => {
                self.accumulate(grads, *x, g.iter().copied());
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.accumulate(grads, *x, g.iter().map(move |v| v * c));
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                // subgradient at 0 is 0 by convention
                let gx = xv
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(x, gv)| if *x > 0.0 { *gv } else { 0.0 });
                self.accumulate(grads, *x, gx);
            }
            Op::Exp { x } => {
                let yv = &self.nodes[idx].value;
                let gx: Vec<f64> = yv.data().iter().zip(g).map(|(y, gv)| y * gv).collect();
                self.accumulate_vec(grads, *x, gx);
            }
            Op::Log { x } => {
                let xv = self.value(*x);
                let gx: Vec<f64> = xv.data().iter().zip(g).map(|(x, gv)| gv / x).collect();
                self.accumulate_vec(grads, *x, gx);
            }
            Op::Abs { x } => {
                let xv = self.value(*x);
                let gx = xv.data().iter().zip(g).map(|(x, gv)| {
                    if *x > 0.0 {
                        *gv
                    } else if *x < 0.0 {
                        -*gv
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Softplus { x } => {
                let xv = self.value(*x);
                let gx = xv
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(x, gv)| gv / (1.0 + (-x).exp()));
                self.accumulate(grads, *x, gx);
            }
            Op::BiasAdd { x, b } => {
                let c = self.value(*b).len();
                let t_len = self.value(*x).shape()[0];
                if self.tracked(*x) {
                    self.accumulate(grads, *x, g.iter().copied());
                }
                if self.tracked(*b) {
                    let mut gb = vec![0.0; c];
                    for t in 0..t_len {
                        for j in 0..c {
                            gb[j] += g[t * c + j];
                        }
                    }
                    self.accumulate_vec(grads, *b, gb);
                }
            }
            Op::GatherRows { table, ids } => {
                let tv = self.value(*table);
                let (v, c) = (tv.shape()[0], tv.shape()[1]);
                let mut gt = vec![0.0; v * c];
                for (t, &id) in ids.iter().enumerate() {
                    for j in 0..c {
                        gt[id * c + j] += g[t * c + j];
                    }
                }
                self.accumulate_vec(grads, *table, gt);
            }
            Op::Dropout { x, mask } => {
                let gx = mask.iter().zip(g).map(|(m, gv)| m * gv);
                self.accumulate(grads, *x, gx);
            }
            Op::Reduce { x, axis, mean } => {
                let xv = self.value(*x);
                let (r, c) = (xv.shape()[0], xv.shape()[1]);
                let count = if *axis == 0 { r } else { c } as f64;
                let scale = if *mean { 1.0 / count } else { 1.0 };
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        let src = if *axis == 0 { j } else { i };
                        gx[i * c + j] = g[src] * scale;
                    }
                }
                self.accumulate_vec(grads, *x, gx);
            }
            Op::ReduceAll { x, mean } => {
                let n = self.value(*x).len();
                let scale = if *mean { g[0] / n as f64 } else { g[0] };
                self.accumulate(grads, *x, std::iter::repeat(scale).take(n));
            }
        }
    }

    fn binary_backward(
        &self,
        grads: &mut [Option<Vec<f64>>],
        a: Var,
        b: Var,
        g: &[f64],
        factors: impl Fn(usize, usize) -> (f64, f64),
    ) {
        let (alen, blen) = (self.value(a).len(), self.value(b).len());
        let n = alen.max(blen);
        if self.tracked(a) {
            if alen == n {
                let contrib: Vec<f64> = (0..n)
                    .map(|i| {
                        let (fa, _) = factors(i, if blen == 1 { 0 } else { i });
                        g[i] * fa
                    })
                    .collect();
                self.accumulate_vec(grads, a, contrib);
            } else {
                // a is scalar: sum contributions
                let mut acc = 0.0;
                for i in 0..n {
                    let (fa, _) = factors(0, i);
                    acc += g[i] * fa;
                }
                self.accumulate_vec(grads, a, vec![acc]);
            }
        }
        if self.tracked(b) {
            if blen == n {
                let contrib: Vec<f64> = (0..n)
                    .map(|i| {
                        let (_, fb) = factors(if alen == 1 { 0 } else { i }, i);
                        g[i] * fb
                    })
                    .collect();
                self.accumulate_vec(grads, b, contrib);
            } else {
                let mut acc = 0.0;
                for i in 0..n {
                    let (_, fb) = factors(i, 0);
                    acc += g[i] * fb;
                }
                self.accumulate_vec(grads, b, vec![acc]);
            }
        }
    }
}

fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(a.shape().to_vec(), data).expect("zip shape")
    } else if b.is_scalar() {
        let y = b.data()[0];
        let data = a.data().iter().map(|x| f(*x, y)).collect();
        Tensor::new(a.shape().to_vec(), data).expect("zip shape")
    } else {
        let x = a.data()[0];
        let data = b.data().iter().map(|y| f(x, *y)).collect();
        Tensor::new(b.shape().to_vec(), data).expect("zip shape")
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &ail) in arow.iter().enumerate() {
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (o, &blj) in orow.iter_mut().zip(brow) {
                *o += ail * blj;
            }
        }
    }
    out
}
