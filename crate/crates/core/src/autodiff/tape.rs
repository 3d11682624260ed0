//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value plus whatever
//! it needs to run backward. [`Tape::backward`] walks the nodes in reverse
//! once and leaves gradients on every node that depends on a parameter.
//!
//! ```
//! use rehab_assess::autodiff::Tape;
//! use rehab_assess::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::scalar(2.0));
//! let y = tape.param(Tensor::scalar(3.0));
//! let xy = tape.mul(x, y).unwrap();
//! let loss = tape.sum(xy);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().item(), 3.0);
//! ```

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;
use crate::tensor::{numel, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        batched: bool,
        groups: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Shift(Var),
    MulConst {
        x: Var,
        factor: Arc<Vec<T>>,
        inner: usize,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        outer: usize,
        total: usize,
    },
    Select {
        x: Var,
        outer: usize,
        len: usize,
        index: usize,
        inner: usize,
    },
    Stack {
        parts: Vec<Var>,
        outer: usize,
        inner: usize,
    },
    Reshape(Var),
    TemporalConv {
        x: Var,
        w: Var,
        bias: Option<Var>,
        pad_left: usize,
        dims: ConvDims,
    },
    GraphMix {
        x: Var,
        matrix: Arc<SparseMatrix<T>>,
    },
    NeighborAttention {
        h: Var,
        support: Arc<SparseMatrix<T>>,
        probs: Vec<T>,
        scale: T,
    },
    TimeWeightedSum {
        x: Var,
        weights: Arc<Vec<T>>,
    },
    Sum(Var),
    Mean(Var),
    ScalarFn {
        x: Var,
        grad: Vec<T>,
    },
}

#[derive(Clone, Copy, Debug)]
struct ConvDims {
    batch: usize,
    time: usize,
    joints: usize,
    fin: usize,
    fout: usize,
    taps: usize,
}

impl ConvDims {
    /// Valid output-frame range for tap `tau`, plus the input offset.
    fn tap_range(&self, tau: usize, pad_left: usize) -> Option<(usize, usize, isize)> {
        let off = tau as isize - pad_left as isize;
        let start = (-off).max(0) as usize;
        let end = (self.time as isize - off).min(self.time as isize).max(0) as usize;
        (start < end).then_some((start, end, off))
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A single-use computation record. Not shared across threads.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
    sigmoid_grad_scale: Option<T>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            sigmoid_grad_scale: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf with no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Test hook: multiplies the sigmoid backward rule by `factor`, producing
    /// deliberately wrong gradients for negative-control checks.
    #[doc(hidden)]
    pub fn corrupt_sigmoid_backward(&mut self, factor: T) {
        self.sigmoid_grad_scale = Some(factor);
    }

    /// Clears gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    // ---- linear algebra ------------------------------------------------

    /// `a @ b` where `a` is `[.., m, k]` and `b` is either `[k, n]`
    /// (shared across the leading dims) or `[.., k, n]` with the same
    /// leading dims as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a @ b^T` where `b` is `[n, k]` or `[.., n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let op_name = if trans_b { "matmul_nt" } else { "matmul" };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape(op_name, &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if k != kb {
            return Err(Error::shape(op_name, &sa, &sb));
        }
        let lead = &sa[..sa.len() - 2];
        let groups: usize = lead.iter().product();
        let batched = match sb.len() {
            2 => false,
            _ if &sb[..sb.len() - 2] == lead => true,
            _ => return Err(Error::shape(op_name, &sa, &sb)),
        };
        let mut out_shape = lead.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![T::zero(); groups * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let b_strides = if trans_b { (1, k as isize) } else { (n as isize, 1) };
            if batched {
                for g in 0..groups {
                    T::gemm(
                        m,
                        k,
                        n,
                        &av[g * m * k..],
                        (k as isize, 1),
                        &bv[g * k * n..],
                        b_strides,
                        &mut out[g * m * n..],
                        (n as isize, 1),
                        false,
                    );
                }
            } else {
                T::gemm(
                    groups * m,
                    k,
                    n,
                    av,
                    (k as isize, 1),
                    bv,
                    b_strides,
                    &mut out,
                    (n as isize, 1),
                    false,
                );
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::MatMul {
                a,
                b,
                trans_b,
                batched,
                groups,
                m,
                k,
                n,
            },
            needs,
        ))
    }

    /// `x @ w + b` over the last axis of `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    // ---- elementwise ---------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip(a, b, |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip(a, b, |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), needs))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip(a, b, |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a, b), needs))
    }

    /// Sums a list of same-shape values.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::Contract("add_all of an empty list".into()))?;
        let mut acc = first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    /// Adds `bias` (shape `[d]`) to every row of `x` (last axis `d`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x);
        let sb = self.shape(bias);
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::shape("add_bias", sx, sb));
        }
        let d = sb[0];
        let bv = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(d.max(1)) {
            for (a, &b) in row.iter_mut().zip(&bv) {
                *a += b;
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(v, Op::AddBias { x, bias }, needs))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let v = self.value(x).map(|a| a * factor);
        let needs = self.needs(x);
        self.push(v, Op::Scale { x, factor }, needs)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).map(|a| a + c);
        let needs = self.needs(x);
        self.push(v, Op::Shift(x), needs)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -T::one());
        self.add_scalar(neg, T::one())
    }

    /// Adds a constant whose shape is a suffix of `x`'s shape, repeated over
    /// the leading axes.
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        let sx = self.shape(x);
        let sc = c.shape();
        if sc.len() > sx.len() || sx[sx.len() - sc.len()..] != *sc {
            return Err(Error::shape("add_const", sx, sc));
        }
        let mut v = self.value(x).clone();
        let cd = c.data();
        if !cd.is_empty() {
            for chunk in v.data_mut().chunks_mut(cd.len()) {
                for (a, &b) in chunk.iter_mut().zip(cd) {
                    *a += b;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(v, Op::Shift(x), needs))
    }

    /// Multiplies by a constant whose shape is a prefix of `x`'s shape,
    /// broadcast over the trailing axes (frame masks, dropout masks).
    pub fn mul_const(&mut self, x: Var, factor: Arc<Vec<T>>, factor_shape: &[usize]) -> Result<Var> {
        let sx = self.shape(x);
        if factor_shape.len() > sx.len()
            || sx[..factor_shape.len()] != *factor_shape
            || numel(factor_shape) != factor.len()
        {
            return Err(Error::shape("mul_const", sx, factor_shape));
        }
        let inner = numel(&sx[factor_shape.len()..]);
        let mut v = self.value(x).clone();
        if inner > 0 {
            for (chunk, &f) in v.data_mut().chunks_mut(inner).zip(factor.iter()) {
                for a in chunk {
                    *a *= f;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(v, Op::MulConst { x, factor, inner }, needs))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| T::one() / (T::one() + (-a).exp()));
        let needs = self.needs(x);
        self.push(v, Op::Sigmoid(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.tanh());
        let needs = self.needs(x);
        self.push(v, Op::Tanh(x), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a > T::zero() { a } else { T::zero() });
        let needs = self.needs(x);
        self.push(v, Op::Relu(x), needs)
    }

    /// Softmax over the last axis. `keep`, when given, has one flag per
    /// element; dropped entries behave as `-inf` scores. A row with nothing
    /// kept yields all zeros.
    pub fn softmax_lastdim(&mut self, x: Var, keep: Option<&[bool]>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx
            .last()
            .ok_or_else(|| Error::InvalidShape("softmax of a rank-0 value".into()))?;
        if let Some(k) = keep {
            if k.len() != numel(&sx) {
                return Err(Error::shape("softmax_lastdim", &sx, &[k.len()]));
            }
        }
        let mut v = self.value(x).clone();
        if d > 0 {
            for (r, row) in v.data_mut().chunks_mut(d).enumerate() {
                let mask = keep.map(|k| &k[r * d..(r + 1) * d]);
                let kept = |j: usize| mask.map_or(true, |m| m[j]);
                let mut max = T::neg_infinity();
                for (j, &a) in row.iter().enumerate() {
                    if kept(j) && a > max {
                        max = a;
                    }
                }
                if max == T::neg_infinity() {
                    row.iter_mut().for_each(|a| *a = T::zero());
                    continue;
                }
                let mut sum = T::zero();
                for (j, a) in row.iter_mut().enumerate() {
                    *a = if kept(j) { (*a - max).exp() } else { T::zero() };
                    sum += *a;
                }
                for a in row.iter_mut() {
                    *a /= sum;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(v, Op::Softmax(x), needs))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().unwrap_or(&0);
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::shape("layer_norm", &sx, self.shape(p)));
            }
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let xv = self.value(x).data();
        let rows = if d == 0 { 0 } else { xv.len() / d };
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        let dn = T::lit(d as f64);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / dn;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::new(sx, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)`. Identity
    /// when `training` is false or `rate` is zero.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut impl rand::Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = T::lit(1.0 / (1.0 - rate));
        let shape = self.shape(x).to_vec();
        let mask: Vec<T> = (0..numel(&shape))
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep_scale })
            .collect();
        self.mul_const(x, Arc::new(mask), &shape)
    }

    // ---- structural ----------------------------------------------------

    pub fn concat(&mut self, vars: &[Var], axis: usize) -> Result<Var> {
        let first = vars
            .first()
            .ok_or_else(|| Error::Contract("concat of an empty list".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidShape(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut widths = Vec::with_capacity(vars.len());
        let mut axis_total = 0;
        for &v in vars {
            let s = self.shape(v);
            let compatible = s.len() == base.len() && s.iter().enumerate().all(|(i, &d)| i == axis || d == base[i]);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            widths.push(s[axis] * inner);
            axis_total += s[axis];
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); outer * total];
        let mut col = 0;
        for (&v, &w) in vars.iter().zip(&widths) {
            let src = self.value(v).data();
            for o in 0..outer {
                out[o * total + col..o * total + col + w].copy_from_slice(&src[o * w..(o + 1) * w]);
            }
            col += w;
        }
        let mut shape = base;
        shape[axis] = axis_total;
        let needs = vars.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: vars.iter().copied().zip(widths).collect(),
                outer,
                total,
            },
            needs,
        ))
    }

    /// Picks `index` along `axis`, removing that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || index >= s[axis] {
            return Err(Error::InvalidShape(format!("select({axis}, {index}) on {s:?}")));
        }
        let (outer, len, inner) = split_at_axis(&s, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * len + index) * inner;
            out.extend_from_slice(&src[base..base + inner]);
        }
        let mut shape = s;
        shape.remove(axis);
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Select {
                x,
                outer,
                len,
                index,
                inner,
            },
            needs,
        ))
    }

    /// Stacks same-shape values along a new axis at position `axis`.
    pub fn stack(&mut self, vars: &[Var], axis: usize) -> Result<Var> {
        let first = vars
            .first()
            .ok_or_else(|| Error::Contract("stack of an empty list".into()))?;
        let base = self.shape(*first).to_vec();
        if axis > base.len() {
            return Err(Error::InvalidShape(format!(
                "stack axis {axis} out of range for {base:?}"
            )));
        }
        for &v in vars {
            if self.shape(v) != base.as_slice() {
                return Err(Error::shape("stack", &base, self.shape(v)));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis..].iter().product();
        let p = vars.len();
        let mut out = vec![T::zero(); outer * p * inner];
        for (pi, &v) in vars.iter().enumerate() {
            let src = self.value(v).data();
            for o in 0..outer {
                let dst = (o * p + pi) * inner;
                out[dst..dst + inner].copy_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = base;
        shape.insert(axis, p);
        let needs = vars.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Stack {
                parts: vars.to_vec(),
                outer,
                inner,
            },
            needs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape.to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(v, Op::Reshape(x), needs))
    }

    // ---- model-specific kernels ---------------------------------------

    /// Same-length convolution along axis 1 of `x: [B, T, N, F_in]` with
    /// `w: [k_t, F_in, F_out]`, applied independently per joint. Requires an
    /// odd kernel; the pad is split evenly.
    pub fn temporal_conv(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let taps = self.shape(w).first().copied().unwrap_or(0);
        if taps % 2 == 0 {
            return Err(Error::Config(format!(
                "temporal kernel of even length {taps} has no centered same padding"
            )));
        }
        self.temporal_conv_padded(x, w, bias, (taps - 1) / 2)
    }

    /// Same-length temporal convolution with an explicit left pad; the right
    /// pad is `k_t - 1 - pad_left`. Out-of-range frames read as zero.
    pub fn temporal_conv_padded(&mut self, x: Var, w: Var, bias: Option<Var>, pad_left: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 4 || sw.len() != 3 || sw[1] != sx[3] || sw[0] == 0 || pad_left >= sw[0] {
            return Err(Error::shape("temporal_conv", &sx, &sw));
        }
        let dims = ConvDims {
            batch: sx[0],
            time: sx[1],
            joints: sx[2],
            fin: sx[3],
            fout: sw[2],
            taps: sw[0],
        };
        if let Some(b) = bias {
            if self.shape(b) != [dims.fout] {
                return Err(Error::shape("temporal_conv bias", &sw, self.shape(b)));
            }
        }
        let ConvDims {
            batch,
            time,
            joints,
            fin,
            fout,
            taps,
        } = dims;
        let rows_per_frame = joints;
        let mut out = vec![T::zero(); batch * time * joints * fout];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_mut(fout.max(1)) {
                row.copy_from_slice(bv);
            }
        }
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for b in 0..batch {
                for tau in 0..taps {
                    let Some((start, end, off)) = dims.tap_range(tau, pad_left) else {
                        continue;
                    };
                    let rows = (end - start) * rows_per_frame;
                    let x_row = (b * time) as isize + start as isize + off;
                    let x0 = x_row as usize * joints * fin;
                    let o0 = (b * time + start) * joints * fout;
                    T::gemm(
                        rows,
                        fin,
                        fout,
                        &xv[x0..],
                        (fin as isize, 1),
                        &wv[tau * fin * fout..],
                        (fout as isize, 1),
                        &mut out[o0..],
                        (fout as isize, 1),
                        true,
                    );
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            Tensor::new(vec![batch, time, joints, fout], out)?,
            Op::TemporalConv {
                x,
                w,
                bias,
                pad_left,
                dims,
            },
            needs,
        ))
    }

    /// Mixes joint features through a constant `N x N` operator:
    /// `out[.., i, :] = sum_j A[i, j] * x[.., j, :]` for `x: [.., N, F]`.
    pub fn graph_mix(&mut self, x: Var, matrix: Arc<SparseMatrix<T>>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let n = matrix.n_rows();
        if sx.len() < 2 || sx[sx.len() - 2] != n || matrix.n_cols() != n {
            return Err(Error::shape("graph_mix", &sx, &[matrix.n_rows(), matrix.n_cols()]));
        }
        let f = sx[sx.len() - 1];
        let frames = numel(&sx) / (n * f).max(1);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for fr in 0..frames {
            let base = fr * n * f;
            for i in 0..n {
                let dst = &mut out[base + i * f..base + (i + 1) * f];
                for p in matrix.row_range(i) {
                    let a = matrix.value(p);
                    let j = matrix.col(p);
                    let src = &xv[base + j * f..base + (j + 1) * f];
                    for (o, &s) in dst.iter_mut().zip(src) {
                        *o += a * s;
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(sx, out)?, Op::GraphMix { x, matrix }, needs))
    }

    /// Per-frame self-attention restricted to a joint neighborhood.
    ///
    /// For `h: [.., N, F]`, scores `h_i . h_j * scale` are formed only where
    /// `support` has an entry, softmax-normalized over each row, and used to
    /// average the neighbor features. Returns the mixed features; the
    /// row-stochastic weights are available through [`Tape::attention_weights`].
    pub fn neighbor_attention(&mut self, h: Var, support: Arc<SparseMatrix<T>>, scale: T) -> Result<Var> {
        let sh = self.shape(h).to_vec();
        let n = support.n_rows();
        if sh.len() < 2 || sh[sh.len() - 2] != n || support.n_cols() != n {
            return Err(Error::shape("neighbor_attention", &sh, &[n, support.n_cols()]));
        }
        let f = sh[sh.len() - 1];
        let frames = numel(&sh) / (n * f).max(1);
        let nnz = support.nnz();
        let hv = self.value(h).data();
        let mut probs = vec![T::zero(); frames * nnz];
        let mut out = vec![T::zero(); hv.len()];
        for fr in 0..frames {
            let base = fr * n * f;
            let pr = &mut probs[fr * nnz..(fr + 1) * nnz];
            for i in 0..n {
                let range = support.row_range(i);
                if range.is_empty() {
                    continue;
                }
                let hi = &hv[base + i * f..base + (i + 1) * f];
                let mut max = T::neg_infinity();
                for p in range.clone() {
                    let j = support.col(p);
                    let hj = &hv[base + j * f..base + (j + 1) * f];
                    let s = dot(hi, hj) * scale;
                    pr[p] = s;
                    if s > max {
                        max = s;
                    }
                }
                let mut sum = T::zero();
                for p in range.clone() {
                    pr[p] = (pr[p] - max).exp();
                    sum += pr[p];
                }
                let dst = &mut out[base + i * f..base + (i + 1) * f];
                for p in range {
                    pr[p] /= sum;
                    let j = support.col(p);
                    let hj = &hv[base + j * f..base + (j + 1) * f];
                    for (o, &s) in dst.iter_mut().zip(hj) {
                        *o += pr[p] * s;
                    }
                }
            }
        }
        let needs = self.needs(h);
        Ok(self.push(
            Tensor::new(sh, out)?,
            Op::NeighborAttention {
                h,
                support,
                probs,
                scale,
            },
            needs,
        ))
    }

    /// Dense `[.., N, N]` attention weights recorded by a
    /// [`Tape::neighbor_attention`] node.
    pub fn attention_weights(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        let Op::NeighborAttention { support, probs, .. } = &node.op else {
            return None;
        };
        let sh = node.value.shape();
        let n = support.n_rows();
        let frames = numel(sh) / (n * sh[sh.len() - 1]).max(1);
        let nnz = support.nnz();
        let mut dense = vec![T::zero(); frames * n * n];
        for fr in 0..frames {
            for i in 0..n {
                for p in support.row_range(i) {
                    dense[fr * n * n + i * n + support.col(p)] = probs[fr * nnz + p];
                }
            }
        }
        let mut shape = sh[..sh.len() - 1].to_vec();
        shape.push(n);
        Tensor::new(shape, dense).ok()
    }

    /// `out[b, :] = sum_t weights[b, t] * x[b, t, :]` for `x: [B, T, D]`.
    pub fn time_weighted_sum(&mut self, x: Var, weights: Arc<Vec<T>>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || weights.len() != sx[0] * sx[1] {
            return Err(Error::shape("time_weighted_sum", &sx, &[weights.len()]));
        }
        let (b, t, d) = (sx[0], sx[1], sx[2]);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); b * d];
        for bi in 0..b {
            let dst = &mut out[bi * d..(bi + 1) * d];
            for ti in 0..t {
                let w = weights[bi * t + ti];
                if w == T::zero() {
                    continue;
                }
                let src = &xv[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![b, d], out)?, Op::TimeWeightedSum { x, weights }, needs))
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(v, Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = Tensor::scalar(xv.sum() / T::lit(xv.len().max(1) as f64));
        let needs = self.needs(x);
        self.push(v, Op::Mean(x), needs)
    }

    /// A scalar computed outside the tape from `x`, with its gradient with
    /// respect to `x` already known in closed form.
    pub fn scalar_fn(&mut self, x: Var, value: T, grad: Vec<T>) -> Result<Var> {
        if grad.len() != self.value(x).len() {
            return Err(Error::shape("scalar_fn", self.shape(x), &[grad.len()]));
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(value), Op::ScalarFn { x, grad }, needs))
    }

    // ---- backward ------------------------------------------------------

    /// Propagates gradients from the scalar `root` to every node that
    /// depends on a parameter.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape; reset_grads() before running it again".into(),
            ));
        }
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(Tensor::full(self.shape(root).to_vec(), T::one()));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let is_leaf = matches!(self.nodes[idx].op, Op::Leaf);
            if is_leaf {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<T>) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape matches value")
    }

    fn backward_node(&mut self, idx: usize, g: &Tensor<T>) {
        let gd = g.data();
        // Results are gathered first, then accumulated, to keep the borrow of
        // the node separate from the gradient slots.
        let mut pending: Vec<(Var, Tensor<T>)> = Vec::new();
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                trans_b,
                batched,
                groups,
                m,
                k,
                n,
            } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                // op(B)^T as seen from dC: [n, k]
                let bt_strides = if trans_b { (k as isize, 1) } else { (1, n as isize) };
                if self.needs(a) {
                    let mut da = vec![T::zero(); av.len()];
                    if batched {
                        for gi in 0..groups {
                            T::gemm(
                                m,
                                n,
                                k,
                                &gd[gi * m * n..],
                                (n as isize, 1),
                                &bv[gi * k * n..],
                                bt_strides,
                                &mut da[gi * m * k..],
                                (k as isize, 1),
                                false,
                            );
                        }
                    } else {
                        T::gemm(
                            groups * m,
                            n,
                            k,
                            gd,
                            (n as isize, 1),
                            bv,
                            bt_strides,
                            &mut da,
                            (k as isize, 1),
                            false,
                        );
                    }
                    pending.push((a, self.like(a, da)));
                }
                if self.needs(b) {
                    let mut db = vec![T::zero(); bv.len()];
                    let (rows_b, cols_b) = if trans_b { (n, k) } else { (k, n) };
                    let run = |a_off: usize, g_off: usize, b_off: usize, rows_a: usize, db: &mut [T]| {
                        if trans_b {
                            // dB[n,k] += dC^T[n,rows] @ A[rows,k]
                            T::gemm(
                                n,
                                rows_a,
                                k,
                                &gd[g_off..],
                                (1, n as isize),
                                &av[a_off..],
                                (k as isize, 1),
                                &mut db[b_off..],
                                (k as isize, 1),
                                true,
                            );
                        } else {
                            // dB[k,n] += A^T[k,rows] @ dC[rows,n]
                            T::gemm(
                                k,
                                rows_a,
                                n,
                                &av[a_off..],
                                (1, k as isize),
                                &gd[g_off..],
                                (n as isize, 1),
                                &mut db[b_off..],
                                (n as isize, 1),
                                true,
                            );
                        }
                    };
                    if batched {
                        for gi in 0..groups {
                            run(gi * m * k, gi * m * n, gi * rows_b * cols_b, m, &mut db);
                        }
                    } else {
                        run(0, 0, 0, groups * m, &mut db);
                    }
                    pending.push((b, self.like(b, db)));
                }
            }
            &Op::Add(a, b) => {
                pending.push((a, g.clone()));
                pending.push((b, g.clone()));
            }
            &Op::Sub(a, b) => {
                pending.push((a, g.clone()));
                pending.push((b, g.map(|x| -x)));
            }
            &Op::Mul(a, b) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if self.needs(a) {
                    let d = gd.iter().zip(bv).map(|(&x, &y)| x * y).collect();
                    pending.push((a, self.like(a, d)));
                }
                if self.needs(b) {
                    let d = gd.iter().zip(av).map(|(&x, &y)| x * y).collect();
                    pending.push((b, self.like(b, d)));
                }
            }
            &Op::AddBias { x, bias } => {
                pending.push((x, g.clone()));
                if self.needs(bias) {
                    let d = self.shape(bias)[0];
                    let mut db = vec![T::zero(); d];
                    if d > 0 {
                        for row in gd.chunks(d) {
                            for (o, &v) in db.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                    pending.push((bias, self.like(bias, db)));
                }
            }
            &Op::Scale { x, factor } => pending.push((x, g.map(|v| v * factor))),
            &Op::Shift(x) => pending.push((x, g.clone())),
            Op::MulConst { x, factor, inner } => {
                let mut d = gd.to_vec();
                if *inner > 0 {
                    for (chunk, &f) in d.chunks_mut(*inner).zip(factor.iter()) {
                        for v in chunk {
                            *v *= f;
                        }
                    }
                }
                pending.push((*x, self.like(*x, d)));
            }
            &Op::Sigmoid(x) => {
                let y = node.value.data();
                let k = self.sigmoid_grad_scale.unwrap_or_else(T::one);
                let d = gd
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| k * gv * yv * (T::one() - yv))
                    .collect();
                pending.push((x, self.like(x, d)));
            }
            &Op::Tanh(x) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(&gv, &yv)| gv * (T::one() - yv * yv)).collect();
                pending.push((x, self.like(x, d)));
            }
            &Op::Relu(x) => {
                let y = node.value.data();
                let d = gd
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| if yv > T::zero() { gv } else { T::zero() })
                    .collect();
                pending.push((x, self.like(x, d)));
            }
            &Op::Softmax(x) => {
                let y = node.value.data();
                let d = *node.value.shape().last().unwrap_or(&0);
                let mut dx = vec![T::zero(); y.len()];
                if d > 0 {
                    for ((yr, gr), dr) in y.chunks(d).zip(gd.chunks(d)).zip(dx.chunks_mut(d)) {
                        let s = yr.iter().zip(gr).fold(T::zero(), |a, (&yv, &gv)| a + yv * gv);
                        for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - s);
                        }
                    }
                }
                pending.push((x, self.like(x, dx)));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = self.shape(*gain)[0];
                let gainv = self.value(*gain).data();
                let mut dx = vec![T::zero(); gd.len()];
                let mut dgain = vec![T::zero(); d];
                let mut dbias = vec![T::zero(); d];
                let dn = T::lit(d as f64);
                for r in 0..inv_std.len() {
                    let gr = &gd[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..d {
                        let dh = gr[j] * gainv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                    }
                    mean_dh /= dn;
                    mean_dh_h /= dn;
                    for j in 0..d {
                        let dh = gr[j] * gainv[j];
                        dx[r * d + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                pending.push((*x, self.like(*x, dx)));
                pending.push((*gain, self.like(*gain, dgain)));
                pending.push((*bias, self.like(*bias, dbias)));
            }
            Op::Concat { parts, outer, total } => {
                let mut col = 0;
                for &(v, w) in parts {
                    if self.needs(v) {
                        let mut d = Vec::with_capacity(outer * w);
                        for o in 0..*outer {
                            d.extend_from_slice(&gd[o * total + col..o * total + col + w]);
                        }
                        pending.push((v, self.like(v, d)));
                    }
                    col += w;
                }
            }
            &Op::Select {
                x,
                outer,
                len,
                index,
                inner,
            } => {
                let mut d = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    let base = (o * len + index) * inner;
                    d[base..base + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
                pending.push((x, self.like(x, d)));
            }
            Op::Stack { parts, outer, inner } => {
                let p = parts.len();
                for (pi, &v) in parts.iter().enumerate() {
                    if !self.needs(v) {
                        continue;
                    }
                    let mut d = Vec::with_capacity(outer * inner);
                    for o in 0..*outer {
                        let src = (o * p + pi) * inner;
                        d.extend_from_slice(&gd[src..src + inner]);
                    }
                    pending.push((v, self.like(v, d)));
                }
            }
            &Op::Reshape(x) => pending.push((x, self.like(x, gd.to_vec()))),
            &Op::TemporalConv {
                x,
                w,
                bias,
                pad_left,
                dims,
            } => {
                let xv = self.value(x).data();
                let wv = self.value(w).data();
                let ConvDims {
                    batch,
                    time,
                    joints,
                    fin,
                    fout,
                    taps,
                } = dims;
                let mut dx = self.needs(x).then(|| vec![T::zero(); xv.len()]);
                let mut dw = self.needs(w).then(|| vec![T::zero(); wv.len()]);
                for b in 0..batch {
                    for tau in 0..taps {
                        let Some((start, end, off)) = dims.tap_range(tau, pad_left) else {
                            continue;
                        };
                        let rows = (end - start) * joints;
                        let x0 = ((b * time) as isize + start as isize + off) as usize * joints * fin;
                        let o0 = (b * time + start) * joints * fout;
                        if let Some(dx) = dx.as_mut() {
                            T::gemm(
                                rows,
                                fout,
                                fin,
                                &gd[o0..],
                                (fout as isize, 1),
                                &wv[tau * fin * fout..],
                                (1, fout as isize),
                                &mut dx[x0..],
                                (fin as isize, 1),
                                true,
                            );
                        }
                        if let Some(dw) = dw.as_mut() {
                            T::gemm(
                                fin,
                                rows,
                                fout,
                                &xv[x0..],
                                (1, fin as isize),
                                &gd[o0..],
                                (fout as isize, 1),
                                &mut dw[tau * fin * fout..],
                                (fout as isize, 1),
                                true,
                            );
                        }
                    }
                }
                if let Some(dx) = dx {
                    pending.push((x, self.like(x, dx)));
                }
                if let Some(dw) = dw {
                    pending.push((w, self.like(w, dw)));
                }
                if let Some(bv) = bias.filter(|&b| self.needs(b)) {
                    let mut db = vec![T::zero(); fout];
                    if fout > 0 {
                        for row in gd.chunks(fout) {
                            for (o, &v) in db.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                    pending.push((bv, self.like(bv, db)));
                }
            }
            Op::GraphMix { x, matrix } => {
                let sx = self.shape(*x);
                let n = matrix.n_rows();
                let f = sx[sx.len() - 1];
                let frames = gd.len() / (n * f).max(1);
                let mut dx = vec![T::zero(); gd.len()];
                for fr in 0..frames {
                    let base = fr * n * f;
                    for i in 0..n {
                        for p in matrix.row_range(i) {
                            let a = matrix.value(p);
                            let j = matrix.col(p);
                            for c in 0..f {
                                dx[base + j * f + c] += a * gd[base + i * f + c];
                            }
                        }
                    }
                }
                pending.push((*x, self.like(*x, dx)));
            }
            Op::NeighborAttention {
                h,
                support,
                probs,
                scale,
            } => {
                let hv = self.value(*h).data();
                let sh = self.shape(*h);
                let n = support.n_rows();
                let f = sh[sh.len() - 1];
                let frames = hv.len() / (n * f).max(1);
                let nnz = support.nnz();
                let mut dh = vec![T::zero(); hv.len()];
                let mut dp = vec![T::zero(); nnz];
                for fr in 0..frames {
                    let base = fr * n * f;
                    let pr = &probs[fr * nnz..(fr + 1) * nnz];
                    for i in 0..n {
                        let range = support.row_range(i);
                        let gi = &gd[base + i * f..base + (i + 1) * f];
                        let mut weighted = T::zero();
                        for p in range.clone() {
                            let j = support.col(p);
                            let hj = &hv[base + j * f..base + (j + 1) * f];
                            dp[p] = dot(gi, hj);
                            weighted += pr[p] * dp[p];
                            for c in 0..f {
                                dh[base + j * f + c] += pr[p] * gi[c];
                            }
                        }
                        for p in range {
                            let j = support.col(p);
                            let ds = pr[p] * (dp[p] - weighted) * *scale;
                            if ds == T::zero() {
                                continue;
                            }
                            for c in 0..f {
                                let hic = hv[base + i * f + c];
                                let hjc = hv[base + j * f + c];
                                dh[base + i * f + c] += ds * hjc;
                                dh[base + j * f + c] += ds * hic;
                            }
                        }
                    }
                }
                pending.push((*h, self.like(*h, dh)));
            }
            Op::TimeWeightedSum { x, weights } => {
                let sx = self.shape(*x);
                let (b, t, d) = (sx[0], sx[1], sx[2]);
                let mut dx = vec![T::zero(); b * t * d];
                for bi in 0..b {
                    for ti in 0..t {
                        let w = weights[bi * t + ti];
                        for c in 0..d {
                            dx[(bi * t + ti) * d + c] = w * gd[bi * d + c];
                        }
                    }
                }
                pending.push((*x, self.like(*x, dx)));
            }
            &Op::Sum(x) => {
                let n = self.value(x).len();
                pending.push((x, self.like(x, vec![gd[0]; n])));
            }
            &Op::Mean(x) => {
                let n = self.value(x).len();
                let v = gd[0] / T::lit(n.max(1) as f64);
                pending.push((x, self.like(x, vec![v; n])));
            }
            Op::ScalarFn { x, grad } => {
                let d = grad.iter().map(|&v| v * gd[0]).collect();
                pending.push((*x, self.like(*x, d)));
            }
        }
        for (v, gv) in pending {
            self.accumulate(v, gv);
        }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
