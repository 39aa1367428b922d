//! Reverse-mode differentiation over small dense real tensors.
//!
//! The op set is exactly what the predictor and allocator networks and their
//! losses need. Binary arithmetic broadcasts a smaller operand whose shape is
//! a suffix of the larger one (scalars broadcast everywhere).
//!
//! ```
//! use cfmoe::numerics::tape::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.square(w);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(w).unwrap(), &[6.0]);
//! ```

use crate::numerics::special::{normal_pdf, q_tail};
use crate::{Error, Result};

/// Dense row-major real tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {n} entries, got {}",
                shape,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    TransposeLast2(Var),
    Conv3x3(Var, Var, Var),
    Sum(Var),
    SumAxis(Var, usize),
    ExpandLast(Var, usize),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    QFunc(Var),
    Clamp(Var, f64, f64),
    SoftmaxLast(Var),
    LayerNormLast {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Reshape(Var),
    SliceLast(Var, usize),
    ConcatLast(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Computation graph recorded eagerly: every op computes its value when
/// called and remembers how to propagate adjoints.
pub struct Tape {
    nodes: Vec<Node>,
    branch_hash: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints of a scalar output with respect to every node.
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        let g = &self.grads[v.0];
        if g.is_empty() {
            None
        } else {
            Some(g)
        }
    }

    /// Gradient for `v`, zero-filled when disconnected.
    pub fn wrt_or_zero(&self, v: Var, len: usize) -> Vec<f64> {
        match self.wrt(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; len],
        }
    }
}

const LN_EPS: f64 = 1e-5;

fn mix(h: u64, bits: u64) -> u64 {
    (h ^ bits).wrapping_mul(0x100_0000_01b3).rotate_left(7)
}

/// Shape of a binary broadcast result plus the operand lengths used for
/// modular indexing.
fn broadcast(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    let (big, small) = if na >= nb { (a, b) } else { (b, a) };
    let ns: usize = small.iter().product();
    if ns == 1 {
        return Ok(big.to_vec());
    }
    if small.len() <= big.len() && big[big.len() - small.len()..] == *small {
        return Ok(big.to_vec());
    }
    Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}")))
}

fn split_last(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.last() {
        Some(&n) if n > 0 => Ok((shape.iter().product::<usize>() / n, n)),
        _ => Err(Error::shape(format!(
            "op needs a non-empty last axis, got {shape:?}"
        ))),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            branch_hash: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Digest of every branch taken by non-smooth ops (ReLU sign, clamp
    /// region). Two evaluations with equal digests lie on the same smooth
    /// piece.
    pub fn branch_hash(&self) -> u64 {
        self.branch_hash
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    /// Input or parameter node.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, usize, usize)> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let shape = broadcast(&sa, &sb)?;
        let av = self.val(a);
        let bv = self.val(b);
        let (la, lb) = (av.len(), bv.len());
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| f(av[i % la], bv[i % lb])).collect();
        Ok((Tensor { shape, data }, la, lb))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _, _) = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _, _) = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _, _) = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _, _) = self.binary(a, b, |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a);
        let t = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|x| x * c).collect(),
        };
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a);
        let t = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|x| x + c).collect(),
        };
        self.push(t, Op::AddScalar(a))
    }

    /// `x[..., n] · w[n, m] -> [..., m]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (rows, n) = split_last(&xs)?;
        if ws.len() != 2 || ws[0] != n {
            return Err(Error::shape(format!("matmul {xs:?} by {ws:?}")));
        }
        let m = ws[1];
        let xv = self.val(x);
        let wv = self.val(w);
        let mut out = vec![0.0; rows * m];
        for r in 0..rows {
            let xr = &xv[r * n..(r + 1) * n];
            let or = &mut out[r * m..(r + 1) * m];
            for (k, &a) in xr.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let wr = &wv[k * m..(k + 1) * m];
                for (o, &b) in or.iter_mut().zip(wr) {
                    *o += a * b;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = m;
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul(x, w)))
    }

    /// Batched `a[..., n, k] · b[..., k, m] -> [..., n, m]` with equal
    /// leading dimensions.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() != sa.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(Error::shape(format!("bmm {sa:?} by {sb:?}")));
        }
        let r = sa.len();
        let (n, k) = (sa[r - 2], sa[r - 1]);
        let (k2, m) = (sb[r - 2], sb[r - 1]);
        if k != k2 {
            return Err(Error::shape(format!("bmm inner dims {sa:?} by {sb:?}")));
        }
        let batch: usize = sa[..r - 2].iter().product();
        let av = self.val(a);
        let bv = self.val(b);
        let mut out = vec![0.0; batch * n * m];
        for bi in 0..batch {
            let ab = &av[bi * n * k..(bi + 1) * n * k];
            let bb = &bv[bi * k * m..(bi + 1) * k * m];
            let ob = &mut out[bi * n * m..(bi + 1) * n * m];
            for i in 0..n {
                for kk in 0..k {
                    let x = ab[i * k + kk];
                    for j in 0..m {
                        ob[i * m + j] += x * bb[kk * m + j];
                    }
                }
            }
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.push(n);
        shape.push(m);
        Ok(self.push(Tensor { shape, data: out }, Op::BatchMatMul(a, b)))
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(Error::shape(format!("transpose of {s:?}")));
        }
        let r = s.len();
        let (n, m) = (s[r - 2], s[r - 1]);
        let batch: usize = s[..r - 2].iter().product();
        let av = self.val(a);
        let mut out = vec![0.0; av.len()];
        for b in 0..batch {
            for i in 0..n {
                for j in 0..m {
                    out[b * n * m + j * n + i] = av[b * n * m + i * m + j];
                }
            }
        }
        let mut shape = s;
        shape.swap(r - 2, r - 1);
        Ok(self.push(Tensor { shape, data: out }, Op::TransposeLast2(a)))
    }

    /// 3×3 convolution with unit zero padding: `x[N,C,H,W]`, `w[O,C,3,3]`,
    /// `bias[O]` to `[N,O,H,W]`.
    pub fn conv3x3(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 4
            || ws.len() != 4
            || ws[1] != xs[1]
            || ws[2] != 3
            || ws[3] != 3
            || bs != [ws[0]]
        {
            return Err(Error::shape(format!(
                "conv3x3 x {xs:?}, w {ws:?}, b {bs:?}"
            )));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let o = ws[0];
        let xv = self.val(x);
        let wv = self.val(w);
        let bv = self.val(bias);
        let mut out = vec![0.0; n * o * h * wd];
        for ni in 0..n {
            for oi in 0..o {
                let ob = &mut out[(ni * o + oi) * h * wd..(ni * o + oi + 1) * h * wd];
                ob.iter_mut().for_each(|v| *v = bv[oi]);
                for ci in 0..c {
                    let xb = &xv[(ni * c + ci) * h * wd..(ni * c + ci + 1) * h * wd];
                    let wb = &wv[(oi * c + ci) * 9..(oi * c + ci + 1) * 9];
                    conv_accumulate(ob, xb, wb, h, wd);
                }
            }
        }
        let t = Tensor {
            shape: vec![n, o, h, wd],
            data: out,
        };
        Ok(self.push(t, Op::Conv3x3(x, w, bias)))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.val(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(Error::shape(format!("sum over axis {axis} of {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let n = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let av = self.val(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &av[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        let mut shape = s;
        shape.remove(axis);
        Ok(self.push(Tensor { shape, data: out }, Op::SumAxis(a, axis)))
    }

    /// Repeat every entry `n` times along a new trailing axis.
    pub fn expand_last(&mut self, a: Var, n: usize) -> Var {
        let v = self.value(a);
        let mut shape = v.shape.clone();
        shape.push(n);
        let data = v
            .data
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, n))
            .collect();
        self.push(Tensor { shape, data }, Op::ExpandLast(a, n))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(a);
        Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.unary(a, sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    /// `max(0, x)`; the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let mut h = self.branch_hash;
        for &x in self.val(a) {
            h = mix(h, (x > 0.0) as u64);
        }
        self.branch_hash = h;
        let t = self.unary(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.unary(a, f64::exp);
        self.push(t, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = self.unary(a, f64::ln);
        self.push(t, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let t = self.unary(a, f64::sqrt);
        self.push(t, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x * x);
        self.push(t, Op::Square(a))
    }

    /// Gaussian tail function `Q(x)`.
    pub fn qfunc(&mut self, a: Var) -> Var {
        let t = self.unary(a, q_tail);
        self.push(t, Op::QFunc(a))
    }

    /// Clamp to `[lo, hi]`; gradient flows only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let mut h = self.branch_hash;
        for &x in self.val(a) {
            let region = if x < lo {
                0
            } else if x > hi {
                2
            } else {
                1
            };
            h = mix(h, region);
        }
        self.branch_hash = h;
        let t = self.unary(a, |x| x.clamp(lo, hi));
        self.push(t, Op::Clamp(a, lo, hi))
    }

    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let (rows, n) = split_last(&s)?;
        let av = self.val(a);
        let mut out = vec![0.0; av.len()];
        for r in 0..rows {
            let src = &av[r * n..(r + 1) * n];
            let mx = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[r * n..(r + 1) * n];
            let mut z = 0.0;
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = (x - mx).exp();
                z += *d;
            }
            dst.iter_mut().for_each(|d| *d /= z);
        }
        Ok(self.push(
            Tensor {
                shape: s,
                data: out,
            },
            Op::SoftmaxLast(a),
        ))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`
    /// of that axis' length.
    pub fn layer_norm_last(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (rows, n) = split_last(&s)?;
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(Error::shape(format!(
                "layer norm affine params must be [{n}]"
            )));
        }
        let xv = self.val(x);
        let g = self.val(gamma);
        let b = self.val(beta);
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let src = &xv[r * n..(r + 1) * n];
            let mean = src.iter().sum::<f64>() / n as f64;
            let var = src.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let xh = (src[j] - mean) * is;
                xhat[r * n + j] = xh;
                out[r * n + j] = g[j] * xh + b[j];
            }
        }
        let t = Tensor {
            shape: s,
            data: out,
        };
        Ok(self.push(
            t,
            Op::LayerNormLast {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(a);
        if shape.iter().product::<usize>() != v.data.len() {
            return Err(Error::shape(format!("reshape {:?} to {shape:?}", v.shape)));
        }
        let t = Tensor {
            shape,
            data: v.data.clone(),
        };
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let (rows, n) = split_last(&s)?;
        if start + len > n {
            return Err(Error::shape(format!(
                "slice {start}..{} of last axis {n}",
                start + len
            )));
        }
        let av = self.val(a);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&av[r * n + start..r * n + start + len]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        Ok(self.push(Tensor { shape, data: out }, Op::SliceLast(a, start)))
    }

    /// Concatenate along the last axis; leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let lead = self.shape(*first)[..self.shape(*first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(format!(
                    "concat leading dims {lead:?} vs {s:?}"
                )));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.val(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(Tensor { shape, data: out }, Op::ConcatLast(parts.to_vec())))
    }

    /// Adjoints of the scalar `out` with respect to every recorded node.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(out)
            )));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[out.0] = vec![1.0];
        for idx in (0..=out.0).rev() {
            if grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            self.propagate(idx, &g, &mut grads);
            grads[idx] = g;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[idx];
        macro_rules! slot {
            ($v:expr) => {
                slot(grads, &self.nodes, $v)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                let la = self.val(*a).len();
                let ga = slot!(*a);
                for (i, &gi) in g.iter().enumerate() {
                    ga[i % la] += gi;
                }
                let lb = self.val(*b).len();
                let gb = slot!(*b);
                for (i, &gi) in g.iter().enumerate() {
                    gb[i % lb] += sign * gi;
                }
            }
            Op::Mul(a, b) => {
                let av = self.val(*a);
                let bv = self.val(*b);
                let (la, lb) = (av.len(), bv.len());
                let ga = slot!(*a);
                for (i, &gi) in g.iter().enumerate() {
                    ga[i % la] += gi * bv[i % lb];
                }
                let gb = slot!(*b);
                for (i, &gi) in g.iter().enumerate() {
                    gb[i % lb] += gi * av[i % la];
                }
            }
            Op::Div(a, b) => {
                let av = self.val(*a);
                let bv = self.val(*b);
                let (la, lb) = (av.len(), bv.len());
                let ga = slot!(*a);
                for (i, &gi) in g.iter().enumerate() {
                    ga[i % la] += gi / bv[i % lb];
                }
                let gb = slot!(*b);
                for (i, &gi) in g.iter().enumerate() {
                    let y = bv[i % lb];
                    gb[i % lb] -= gi * av[i % la] / (y * y);
                }
            }
            Op::Scale(a, c) => {
                let ga = slot!(*a);
                for (d, &gi) in ga.iter_mut().zip(g) {
                    *d += c * gi;
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let ga = slot!(*a);
                for (d, &gi) in ga.iter_mut().zip(g) {
                    *d += gi;
                }
            }
            Op::MatMul(x, w) => {
                let xv = self.val(*x);
                let wv = self.val(*w);
                let ws = self.shape(*w);
                let (n, m) = (ws[0], ws[1]);
                let rows = xv.len() / n;
                let gx = slot!(*x);
                for r in 0..rows {
                    let gr = &g[r * m..(r + 1) * m];
                    for k in 0..n {
                        let wr = &wv[k * m..(k + 1) * m];
                        gx[r * n + k] += gr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                let gw = slot!(*w);
                for r in 0..rows {
                    let gr = &g[r * m..(r + 1) * m];
                    for k in 0..n {
                        let xk = xv[r * n + k];
                        if xk == 0.0 {
                            continue;
                        }
                        let dst = &mut gw[k * m..(k + 1) * m];
                        for (d, &gg) in dst.iter_mut().zip(gr) {
                            *d += xk * gg;
                        }
                    }
                }
            }
            Op::BatchMatMul(a, b) => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let r = sa.len();
                let (n, k) = (sa[r - 2], sa[r - 1]);
                let m = sb[r - 1];
                let batch = self.val(*a).len() / (n * k);
                let av = self.val(*a);
                let bv = self.val(*b);
                let ga = slot!(*a);
                for bi in 0..batch {
                    for i in 0..n {
                        for kk in 0..k {
                            let mut s = 0.0;
                            for j in 0..m {
                                s += g[bi * n * m + i * m + j] * bv[bi * k * m + kk * m + j];
                            }
                            ga[bi * n * k + i * k + kk] += s;
                        }
                    }
                }
                let gb = slot!(*b);
                for bi in 0..batch {
                    for i in 0..n {
                        for kk in 0..k {
                            let x = av[bi * n * k + i * k + kk];
                            for j in 0..m {
                                gb[bi * k * m + kk * m + j] += x * g[bi * n * m + i * m + j];
                            }
                        }
                    }
                }
            }
            Op::TransposeLast2(a) => {
                let s = self.shape(*a);
                let r = s.len();
                let (n, m) = (s[r - 2], s[r - 1]);
                let batch = g.len() / (n * m);
                let ga = slot!(*a);
                for b in 0..batch {
                    for i in 0..n {
                        for j in 0..m {
                            ga[b * n * m + i * m + j] += g[b * n * m + j * n + i];
                        }
                    }
                }
            }
            Op::Conv3x3(x, w, bias) => {
                let xs = self.shape(*x);
                let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let o = self.shape(*w)[0];
                let xv = self.val(*x);
                let wv = self.val(*w);
                let gb = slot!(*bias);
                for ni in 0..n {
                    for oi in 0..o {
                        gb[oi] += g[(ni * o + oi) * h * wd..(ni * o + oi + 1) * h * wd]
                            .iter()
                            .sum::<f64>();
                    }
                }
                let gw = slot!(*w);
                for ni in 0..n {
                    for oi in 0..o {
                        let gob = &g[(ni * o + oi) * h * wd..(ni * o + oi + 1) * h * wd];
                        for ci in 0..c {
                            let xb = &xv[(ni * c + ci) * h * wd..(ni * c + ci + 1) * h * wd];
                            let wb = &mut gw[(oi * c + ci) * 9..(oi * c + ci + 1) * 9];
                            conv_weight_grad(wb, gob, xb, h, wd);
                        }
                    }
                }
                let gx = slot!(*x);
                for ni in 0..n {
                    for oi in 0..o {
                        let gob = &g[(ni * o + oi) * h * wd..(ni * o + oi + 1) * h * wd];
                        for ci in 0..c {
                            let wb = &wv[(oi * c + ci) * 9..(oi * c + ci + 1) * 9];
                            let gxb = &mut gx[(ni * c + ci) * h * wd..(ni * c + ci + 1) * h * wd];
                            conv_input_grad(gxb, gob, wb, h, wd);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let ga = slot!(*a);
                ga.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::SumAxis(a, axis) => {
                let src = self.shape(*a);
                let outer: usize = src[..*axis].iter().product();
                let n = src[*axis];
                let inner: usize = src[axis + 1..].iter().product();
                let ga = slot!(*a);
                for o in 0..outer {
                    for k in 0..n {
                        let dst = &mut ga[(o * n + k) * inner..(o * n + k + 1) * inner];
                        for (d, &gi) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                            *d += gi;
                        }
                    }
                }
            }
            Op::ExpandLast(a, n) => {
                let ga = slot!(*a);
                for (i, d) in ga.iter_mut().enumerate() {
                    *d += g[i * n..(i + 1) * n].iter().sum::<f64>();
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value.data;
                let ga = slot!(*a);
                for i in 0..g.len() {
                    ga[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::Relu(a) => {
                let xv = self.val(*a);
                let ga = slot!(*a);
                for i in 0..g.len() {
                    if xv[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            }
            Op::Exp(a) => {
                let y = &node.value.data;
                let ga = slot!(*a);
                for i in 0..g.len() {
                    ga[i] += g[i] * y[i];
                }
            }
            Op::Log(a) => {
                let xv = self.val(*a);
                let ga = slot!(*a);
                for i in 0..g.len() {
                    ga[i] += g[i] / xv[i];
                }
            }
            Op::Sqrt(a) => {
                let y = &node.value.data;
                let ga = slot!(*a);
                for i in 0..g.len() {
                    ga[i] += g[i] * 0.5 / y[i];
                }
            }
            Op::Square(a) => {
                let xv = self.val(*a);
                let ga = slot!(*a);
                for i in 0..g.len() {
                    ga[i] += g[i] * 2.0 * xv[i];
                }
            }
            Op::QFunc(a) => {
                let xv = self.val(*a);
                let ga = slot!(*a);
                for i in 0..g.len() {
                    ga[i] -= g[i] * normal_pdf(xv[i]);
                }
            }
            Op::Clamp(a, lo, hi) => {
                let xv = self.val(*a);
                let ga = slot!(*a);
                for i in 0..g.len() {
                    if xv[i] > *lo && xv[i] < *hi {
                        ga[i] += g[i];
                    }
                }
            }
            Op::SoftmaxLast(a) => {
                let y = &node.value.data;
                let n = *node.value.shape.last().unwrap();
                let ga = slot!(*a);
                for r in 0..y.len() / n {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dotp: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        ga[r * n + j] += yr[j] * (gr[j] - dotp);
                    }
                }
            }
            Op::LayerNormLast {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = *node.value.shape.last().unwrap();
                let rows = xhat.len() / n;
                let gv = self.val(*gamma);
                let gg = slot!(*gamma);
                for r in 0..rows {
                    for j in 0..n {
                        gg[j] += g[r * n + j] * xhat[r * n + j];
                    }
                }
                let gbeta = slot!(*beta);
                for r in 0..rows {
                    for j in 0..n {
                        gbeta[j] += g[r * n + j];
                    }
                }
                let gx = slot!(*x);
                let nf = n as f64;
                for r in 0..rows {
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..n {
                        let gh = g[r * n + j] * gv[j];
                        s1 += gh;
                        s2 += gh * xhat[r * n + j];
                    }
                    for j in 0..n {
                        let gh = g[r * n + j] * gv[j];
                        gx[r * n + j] += inv_std[r] / nf * (nf * gh - s1 - xhat[r * n + j] * s2);
                    }
                }
            }
            Op::SliceLast(a, start) => {
                let n = *self.shape(*a).last().unwrap();
                let len = *node.value.shape.last().unwrap();
                let ga = slot!(*a);
                for r in 0..g.len() / len {
                    for j in 0..len {
                        ga[r * n + start + j] += g[r * len + j];
                    }
                }
            }
            Op::ConcatLast(parts) => {
                let total = *node.value.shape.last().unwrap();
                let rows = g.len() / total;
                let mut off = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    let gp = slot!(p);
                    for r in 0..rows {
                        for j in 0..w {
                            gp[r * w + j] += g[r * total + off + j];
                        }
                    }
                    off += w;
                }
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Vec<f64>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    let g = &mut grads[v.0];
    if g.is_empty() {
        *g = vec![0.0; nodes[v.0].value.data.len()];
    }
    g
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn conv_accumulate(out: &mut [f64], x: &[f64], w: &[f64], h: usize, wd: usize) {
    for di in 0..3 {
        for dj in 0..3 {
            let k = w[di * 3 + dj];
            if k == 0.0 {
                continue;
            }
            for i in 0..h {
                let si = i + di;
                if si < 1 || si > h {
                    continue;
                }
                let xr = &x[(si - 1) * wd..si * wd];
                let or = &mut out[i * wd..(i + 1) * wd];
                let (j0, j1) = (
                    if dj == 0 { 1 } else { 0 },
                    if dj == 2 { wd - 1 } else { wd },
                );
                for j in j0..j1 {
                    or[j] += k * xr[j + dj - 1];
                }
            }
        }
    }
}

fn conv_weight_grad(gw: &mut [f64], g: &[f64], x: &[f64], h: usize, wd: usize) {
    for di in 0..3 {
        for dj in 0..3 {
            let mut s = 0.0;
            for i in 0..h {
                let si = i + di;
                if si < 1 || si > h {
                    continue;
                }
                let xr = &x[(si - 1) * wd..si * wd];
                let gr = &g[i * wd..(i + 1) * wd];
                let (j0, j1) = (
                    if dj == 0 { 1 } else { 0 },
                    if dj == 2 { wd - 1 } else { wd },
                );
                for j in j0..j1 {
                    s += gr[j] * xr[j + dj - 1];
                }
            }
            gw[di * 3 + dj] += s;
        }
    }
}

fn conv_input_grad(gx: &mut [f64], g: &[f64], w: &[f64], h: usize, wd: usize) {
    for di in 0..3 {
        for dj in 0..3 {
            let k = w[di * 3 + dj];
            if k == 0.0 {
                continue;
            }
            for i in 0..h {
                let si = i + di;
                if si < 1 || si > h {
                    continue;
                }
                let gr = &g[i * wd..(i + 1) * wd];
                let xr = &mut gx[(si - 1) * wd..si * wd];
                let (j0, j1) = (
                    if dj == 0 { 1 } else { 0 },
                    if dj == 2 { wd - 1 } else { wd },
                );
                for j in j0..j1 {
                    xr[j + dj - 1] += k * gr[j];
                }
            }
        }
    }
}
