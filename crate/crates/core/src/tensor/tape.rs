use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tensor, TensorError};

/// Rows whose L2 norm falls below this are left unnormalized.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RreluBounds {
    pub lower: f64,
    pub upper: f64,
}

impl RreluBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self, TensorError> {
        if !(lower > 0.0 && lower <= upper && upper < 1.0) {
            return Err(TensorError::RreluBounds { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    pub fn eval_slope(&self) -> f64 {
        (self.lower + self.upper) / 2.0
    }
}

impl Default for RreluBounds {
    fn default() -> Self {
        Self {
            lower: 1.0 / 8.0,
            upper: 1.0 / 3.0,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Rrelu(Var, Vec<f64>),
    Dropout(Var, Vec<f64>),
    ConcatRows(Vec<Var>),
    ConcatCols(Var, Var),
    MeanRows(Var),
    Sum(Var),
    RowSum(Var),
    Spmm(Var, Vec<(usize, usize, f64)>),
    RowScale(Var, Vec<f64>),
    NormalizeRows(Var, Vec<f64>),
    Conv1d { input: Var, kernels: Var, pad: usize },
    Reshape(Var),
    Bce { probs: Var, labels: Vec<f64>, eps: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of the trainable leaves of a finished tape.
#[derive(Debug, Default)]
pub struct Gradients {
    by_var: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.by_var.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.by_var.get_mut(var.0).and_then(Option::take)
    }
}

/// Append-only record of a forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    mode: Mode,
    rng: ChaCha8Rng,
    rrelu: RreluBounds,
    consumed: bool,
    zero_rows: usize,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(shape_err(op, s, &[0, 0])),
    }
}

const MR: usize = 4;
const NR: usize = 8;
const KC: usize = 256;

/// Blocked `out[m×n] = A[m×k] · B[k×n]` over strided operands. Every output
/// element accumulates its products in increasing `p` order starting from
/// zero with separate multiply and add, so results match a plain triple
/// loop exactly and do not depend on `m` or on the instruction set used.
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    a: &[f64],
    a_rs: usize,
    a_cs: usize,
    b: &[f64],
    b_rs: usize,
    b_cs: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports the enabled feature.
            unsafe { gemm_avx2(a, a_rs, a_cs, b, b_rs, b_cs, m, k, n, &mut out) };
            return out;
        }
    }
    gemm_body(a, a_rs, a_cs, b, b_rs, b_cs, m, k, n, &mut out);
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_avx2(
    a: &[f64],
    a_rs: usize,
    a_cs: usize,
    b: &[f64],
    b_rs: usize,
    b_cs: usize,
    m: usize,
    k: usize,
    n: usize,
    out: &mut [f64],
) {
    gemm_body(a, a_rs, a_cs, b, b_rs, b_cs, m, k, n, out)
}

/// `acc += Σ_p ap[p]ᵀ · bp[p]` over packed `MR`- and `NR`-wide slices.
#[inline(always)]
fn kernel(acc: &mut [[f64; NR]; MR], ap: &[f64], bp: &[f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: feature checked; slices hold whole MR / NR rows.
            unsafe { kernel_avx2(acc, ap, bp) };
            return;
        }
    }
    for (av, bv) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)) {
        let av: &[f64; MR] = av.try_into().expect("MR chunk");
        let bv: &[f64; NR] = bv.try_into().expect("NR chunk");
        for (accr, &ar) in acc.iter_mut().zip(av) {
            for (x, &bc) in accr.iter_mut().zip(bv) {
                *x += ar * bc;
            }
        }
    }
}

/// Same arithmetic as the portable loop: one rounded multiply then one
/// rounded add per term, never fused.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn kernel_avx2(acc: &mut [[f64; NR]; MR], ap: &[f64], bp: &[f64]) {
    use std::arch::x86_64::*;
    let steps = ap.len() / MR;
    debug_assert_eq!(bp.len() / NR, steps);
    let mut c = [[_mm256_setzero_pd(); 2]; MR];
    for (r, row) in acc.iter().enumerate() {
        c[r][0] = _mm256_loadu_pd(row.as_ptr());
        c[r][1] = _mm256_loadu_pd(row.as_ptr().add(4));
    }
    let (mut pa, mut pb) = (ap.as_ptr(), bp.as_ptr());
    for _ in 0..steps {
        let b0 = _mm256_loadu_pd(pb);
        let b1 = _mm256_loadu_pd(pb.add(4));
        for (r, cr) in c.iter_mut().enumerate() {
            let a = _mm256_broadcast_sd(&*pa.add(r));
            cr[0] = _mm256_add_pd(cr[0], _mm256_mul_pd(a, b0));
            cr[1] = _mm256_add_pd(cr[1], _mm256_mul_pd(a, b1));
        }
        pa = pa.add(MR);
        pb = pb.add(NR);
    }
    for (r, row) in acc.iter_mut().enumerate() {
        _mm256_storeu_pd(row.as_mut_ptr(), c[r][0]);
        _mm256_storeu_pd(row.as_mut_ptr().add(4), c[r][1]);
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_body(
    a: &[f64],
    a_rs: usize,
    a_cs: usize,
    b: &[f64],
    b_rs: usize,
    b_cs: usize,
    m: usize,
    k: usize,
    n: usize,
    out: &mut [f64],
) {
    let panels = m.div_ceil(MR);
    let mut apack = vec![0.0; panels * KC * MR];
    let mut bpack = [0.0; KC * NR];
    for p0 in (0..k).step_by(KC) {
        let kc = KC.min(k - p0);
        for ip in 0..panels {
            let dst = &mut apack[ip * KC * MR..(ip + 1) * KC * MR];
            for r in 0..MR {
                let i = ip * MR + r;
                if i < m {
                    for p in 0..kc {
                        dst[p * MR + r] = a[i * a_rs + (p0 + p) * a_cs];
                    }
                } else {
                    for p in 0..kc {
                        dst[p * MR + r] = 0.0;
                    }
                }
            }
        }
        for j0 in (0..n).step_by(NR) {
            let nc = NR.min(n - j0);
            for p in 0..kc {
                let dst = &mut bpack[p * NR..(p + 1) * NR];
                if b_cs == 1 && nc == NR {
                    let off = (p0 + p) * b_rs + j0;
                    dst.copy_from_slice(&b[off..off + NR]);
                } else {
                    for (c, d) in dst.iter_mut().enumerate() {
                        *d = if c < nc {
                            b[(p0 + p) * b_rs + (j0 + c) * b_cs]
                        } else {
                            0.0
                        };
                    }
                }
            }
            for ip in 0..panels {
                let mc = MR.min(m - ip * MR);
                let mut acc = [[0.0f64; NR]; MR];
                for (r, a) in acc.iter_mut().enumerate().take(mc) {
                    let row = (ip * MR + r) * n + j0;
                    a[..nc].copy_from_slice(&out[row..row + nc]);
                }
                let ap = &apack[ip * KC * MR..ip * KC * MR + kc * MR];
                kernel(&mut acc, ap, &bpack[..kc * NR]);
                for (r, a) in acc.iter().enumerate().take(mc) {
                    let row = (ip * MR + r) * n + j0;
                    out[row..row + nc].copy_from_slice(&a[..nc]);
                }
            }
        }
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`.
fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    gemm_strided(a, k, 1, b, n, 1, m, k, n)
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`.
fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    gemm_strided(a, k, 1, b, 1, k, m, k, n)
}

/// `out[k×n] = a[m×k]ᵀ · b[m×n]`.
fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    gemm_strided(a, 1, k, b, n, 1, k, m, n)
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => g.iter_mut().zip(delta).for_each(|(g, d)| *g += d),
        None => *slot = Some(delta.to_vec()),
    }
}

impl Tape {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            rrelu: RreluBounds::default(),
            consumed: false,
            zero_rows: 0,
        }
    }

    pub fn with_rrelu(mut self, bounds: RreluBounds) -> Self {
        self.rrelu = bounds;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Rows left unnormalized because their norm was below [`ZERO_NORM`].
    /// Drops every node recorded after the first `len`. Vars created after
    /// that point must not be used again.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn zero_norm_rows(&self) -> usize {
        self.zero_rows
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_data(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs: bool) -> Var {
        let value = Tensor::new(shape, data).expect("op produced consistent shape");
        self.push(value, op, needs)
    }

    /// Records an input. Gradients are kept iff `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        let mut t = t;
        t.clear_grad();
        self.push(t, Op::Leaf, needs)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = require_2d("matmul", self.value(a))?;
        let (k2, n) = require_2d("matmul", self.value(b))?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let out = gemm(self.value(a).data(), self.value(b).data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push_data(vec![m, n], out, Op::MatMul(a, b), needs))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = require_2d("matmul_nt", self.value(a))?;
        let (n, k2) = require_2d("matmul_nt", self.value(b))?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let out = gemm_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push_data(vec![m, n], out, Op::MatMulNt(a, b), needs))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>, bool), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((self.shape(a).to_vec(), data, self.needs(a) || self.needs(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (s, d, n) = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push_data(s, d, Op::Add(a, b), n))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (s, d, n) = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push_data(s, d, Op::Sub(a, b), n))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (s, d, n) = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push_data(s, d, Op::Mul(a, b), n))
    }

    /// Adds a length-`c` bias to every row of an `r×c` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (r, c) = require_2d("add_row_bias", self.value(x))?;
        if self.value(bias).numel() != c {
            return Err(shape_err("add_row_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(b).for_each(|(o, bv)| *o += bv);
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push_data(vec![r, c], out, Op::AddRowBias(x, bias), needs))
    }

    /// `scale · x + shift`, elementwise with constants.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| scale * v + shift).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push_data(shape, data, Op::Affine(x, scale), needs)
    }

    fn map_unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push_data(shape, data, op, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map_unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map_unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Randomized leaky ReLU: negative inputs are scaled by a slope drawn
    /// uniformly from the bounds in train mode, and by their midpoint in
    /// eval mode.
    pub fn rrelu(&mut self, x: Var) -> Var {
        let bounds = self.rrelu;
        let eval_slope = bounds.eval_slope();
        let n = self.value(x).numel();
        let mut slopes = vec![1.0; n];
        for (i, s) in slopes.iter_mut().enumerate() {
            if self.nodes[x.0].value.data()[i] < 0.0 {
                *s = match self.mode {
                    Mode::Train => self.rng.gen_range(bounds.lower..=bounds.upper),
                    Mode::Eval => eval_slope,
                };
            }
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&slopes)
            .map(|(v, s)| v * s)
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push_data(shape, data, Op::Rrelu(x, slopes), needs)
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::DropoutRate(p));
        }
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push_data(shape, data, Op::Dropout(x, mask), needs))
    }

    /// Stacks 2-D tensors of equal width vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat_rows of nothing".into()))?;
        let (_, c) = require_2d("concat_rows", self.value(first))?;
        let mut rows = 0;
        let mut data = Vec::new();
        let mut needs = false;
        for &p in parts {
            let (r, c2) = require_2d("concat_rows", self.value(p))?;
            if c2 != c {
                return Err(shape_err("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
            needs |= self.needs(p);
        }
        Ok(self.push_data(vec![rows, c], data, Op::ConcatRows(parts.to_vec()), needs))
    }

    /// Joins `a[r×c1]` and `b[r×c2]` side by side into `r×(c1+c2)`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c1) = require_2d("concat_cols", self.value(a))?;
        let (r2, c2) = require_2d("concat_cols", self.value(b))?;
        if r != r2 {
            return Err(shape_err("concat_cols", self.shape(a), self.shape(b)));
        }
        let mut data = Vec::with_capacity(r * (c1 + c2));
        for i in 0..r {
            data.extend_from_slice(self.value(a).row(i));
            data.extend_from_slice(self.value(b).row(i));
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push_data(vec![r, c1 + c2], data, Op::ConcatCols(a, b), needs))
    }

    /// Column means of an `r×c` matrix as a `1×c` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = require_2d("mean_rows", self.value(x))?;
        if r == 0 {
            return Err(TensorError::Invalid("mean_rows of an empty matrix".into()));
        }
        let mut out = vec![0.0; c];
        for row in self.value(x).data().chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let needs = self.needs(x);
        Ok(self.push_data(vec![1, c], out, Op::MeanRows(x), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Per-row sums of an `r×c` matrix as `r×1`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = require_2d("row_sum", self.value(x))?;
        let data = if c == 0 {
            vec![0.0; r]
        } else {
            self.value(x)
                .data()
                .chunks(c)
                .map(|row| row.iter().sum())
                .collect()
        };
        let needs = self.needs(x);
        Ok(self.push_data(vec![r, 1], data, Op::RowSum(x), needs))
    }

    /// Sparse row mixing: `out[o] += w · x[i]` for every `(o, i, w)` entry;
    /// output has `rows_out` rows. Covers gathers, segment means and
    /// degree-normalized neighbour aggregation.
    pub fn spmm(
        &mut self,
        x: Var,
        entries: Vec<(usize, usize, f64)>,
        rows_out: usize,
    ) -> Result<Var, TensorError> {
        let (r, c) = require_2d("spmm", self.value(x))?;
        let mut out = vec![0.0; rows_out * c];
        {
            let src = self.value(x);
            for &(o, i, w) in &entries {
                if o >= rows_out {
                    return Err(TensorError::Index {
                        op: "spmm",
                        index: o,
                        len: rows_out,
                    });
                }
                if i >= r {
                    return Err(TensorError::Index {
                        op: "spmm",
                        index: i,
                        len: r,
                    });
                }
                let dst = &mut out[o * c..(o + 1) * c];
                dst.iter_mut().zip(src.row(i)).for_each(|(d, s)| *d += w * s);
            }
        }
        let needs = self.needs(x);
        Ok(self.push_data(vec![rows_out, c], out, Op::Spmm(x, entries), needs))
    }

    /// Selects rows by index (with repetition).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let entries = rows.iter().enumerate().map(|(o, &i)| (o, i, 1.0)).collect();
        self.spmm(x, entries, rows.len())
    }

    /// Multiplies row `i` by the constant `scale[i]`.
    pub fn row_scale(&mut self, x: Var, scale: Vec<f64>) -> Result<Var, TensorError> {
        let (r, c) = require_2d("row_scale", self.value(x))?;
        if scale.len() != r {
            return Err(shape_err("row_scale", self.shape(x), &[scale.len()]));
        }
        let mut data = self.value(x).data().to_vec();
        if c > 0 {
            for (row, s) in data.chunks_mut(c).zip(&scale) {
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        let needs = self.needs(x);
        Ok(self.push_data(vec![r, c], data, Op::RowScale(x, scale), needs))
    }

    /// Rescales every row to unit L2 norm. Rows with norm below
    /// [`ZERO_NORM`] pass through unchanged and are counted.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = require_2d("normalize_rows", self.value(x))?;
        let mut data = self.value(x).data().to_vec();
        let mut norms = vec![0.0; r];
        let mut zero = 0;
        if c > 0 {
            for (row, n) in data.chunks_mut(c).zip(norms.iter_mut()) {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < ZERO_NORM {
                    zero += 1;
                } else {
                    *n = norm;
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
        self.zero_rows += zero;
        let needs = self.needs(x);
        Ok(self.push_data(vec![r, c], data, Op::NormalizeRows(x, norms), needs))
    }

    /// Batched 1-D cross-correlation.
    ///
    /// `input` is `[B, C, L]` (or `[C, L]` for a single item), `kernels` is
    /// `[K, C, w]`; the result is `[B, K, L + 2·pad − w + 1]` with zero
    /// padding on both ends, summed over channels.
    pub fn conv1d(&mut self, input: Var, kernels: Var, pad: usize) -> Result<Var, TensorError> {
        let (batch, channels, len, single) = match self.shape(input) {
            [c, l] => (1, *c, *l, true),
            [b, c, l] => (*b, *c, *l, false),
            s => return Err(shape_err("conv1d", s, &[0, 0, 0])),
        };
        let (k_out, k_ch, width) = match self.shape(kernels) {
            [k, c, w] => (*k, *c, *w),
            s => return Err(shape_err("conv1d", self.shape(input), s)),
        };
        if k_ch != channels {
            return Err(shape_err("conv1d", self.shape(input), self.shape(kernels)));
        }
        let padded = len + 2 * pad;
        if width > padded || width == 0 {
            return Err(TensorError::KernelTooWide { width, padded });
        }
        let out_len = padded - width + 1;
        let inp = self.value(input).data();
        let ker = self.value(kernels).data();
        let mut out = vec![0.0; batch * k_out * out_len];
        for b in 0..batch {
            for k in 0..k_out {
                let orow = &mut out[(b * k_out + k) * out_len..(b * k_out + k + 1) * out_len];
                for c in 0..channels {
                    let irow = &inp[(b * channels + c) * len..(b * channels + c + 1) * len];
                    let krow = &ker[(k * channels + c) * width..(k * channels + c + 1) * width];
                    for (j, &kv) in krow.iter().enumerate() {
                        // output i reads input i + j - pad
                        let lo = pad.saturating_sub(j);
                        let hi = (len + pad).saturating_sub(j).min(out_len);
                        for i in lo..hi {
                            orow[i] += kv * irow[i + j - pad];
                        }
                    }
                }
            }
        }
        let shape = if single {
            vec![k_out, out_len]
        } else {
            vec![batch, k_out, out_len]
        };
        let needs = self.needs(input) || self.needs(kernels);
        Ok(self.push_data(shape, out, Op::Conv1d { input, kernels, pad }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(shape_err("reshape", self.shape(x), &shape));
        }
        let data = self.value(x).data().to_vec();
        let needs = self.needs(x);
        Ok(self.push_data(shape, data, Op::Reshape(x), needs))
    }

    /// Multi-label binary cross-entropy over `probs[q×n]` against 0/1
    /// `labels`, summed over candidates and averaged over the `q` rows.
    /// Probabilities are clamped to `[eps, 1 − eps]`.
    pub fn bce(&mut self, probs: Var, labels: Vec<f64>, eps: f64) -> Result<Var, TensorError> {
        let (q, _) = require_2d("bce", self.value(probs))?;
        if labels.len() != self.value(probs).numel() {
            return Err(shape_err("bce", self.shape(probs), &[labels.len()]));
        }
        let mut total = 0.0;
        for (&p, &y) in self.value(probs).data().iter().zip(&labels) {
            let p = p.clamp(eps, 1.0 - eps);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        let loss = if q == 0 { 0.0 } else { total / q as f64 };
        let needs = self.needs(probs);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { probs, labels, eps }, needs))
    }

    /// Reverse pass from a scalar `loss`. Returns gradients for every leaf
    /// recorded with `requires_grad`, then clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }

        let mut by_var: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
        for (i, g) in grads.into_iter().enumerate() {
            let keep = matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].needs_grad;
            by_var.push(if keep {
                Some(g.unwrap_or_else(|| vec![0.0; self.nodes[i].value.numel()]))
            } else {
                None
            });
        }
        self.nodes.clear();
        Ok(Gradients { by_var })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[idx].value;
        let val = |v: Var| &nodes[v.0].value;
        let needs = |v: Var| nodes[v.0].needs_grad;
        let mut send = |v: Var, delta: Vec<f64>| {
            if needs(v) {
                accumulate(&mut grads[v.0], &delta);
            }
        };
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                if needs(*a) {
                    send(*a, gemm_nt(g, val(*b).data(), m, n, k));
                }
                if needs(*b) {
                    send(*b, gemm_tn(val(*a).data(), g, m, k, n));
                }
            }
            Op::MatMulNt(a, b) => {
                // c = a·bᵀ: da = g·b, db = gᵀ·a
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[0];
                if needs(*a) {
                    send(*a, gemm(g, val(*b).data(), m, n, k));
                }
                if needs(*b) {
                    send(*b, gemm_tn(g, val(*a).data(), m, n, k));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    send(*a, g.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect());
                }
                if needs(*b) {
                    send(*b, g.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect());
                }
            }
            Op::AddRowBias(x, b) => {
                send(*x, g.to_vec());
                if needs(*b) {
                    let c = val(*b).numel();
                    let mut db = vec![0.0; c];
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    send(*b, db);
                }
            }
            Op::Affine(x, s) => send(*x, g.iter().map(|v| v * s).collect()),
            Op::Sigmoid(x) => send(
                *x,
                g.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect(),
            ),
            Op::Tanh(x) => send(
                *x,
                g.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect(),
            ),
            Op::Relu(x) => send(
                *x,
                g.iter()
                    .zip(val(*x).data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect(),
            ),
            Op::Rrelu(x, slopes) | Op::Dropout(x, slopes) => {
                send(*x, g.iter().zip(slopes).map(|(g, s)| g * s).collect())
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).numel();
                    send(*p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::ConcatCols(a, b) => {
                let (r, c1) = (val(*a).shape()[0], val(*a).shape()[1]);
                let c2 = val(*b).shape()[1];
                let w = c1 + c2;
                let mut da = Vec::with_capacity(r * c1);
                let mut db = Vec::with_capacity(r * c2);
                for i in 0..r {
                    da.extend_from_slice(&g[i * w..i * w + c1]);
                    db.extend_from_slice(&g[i * w + c1..(i + 1) * w]);
                }
                send(*a, da);
                send(*b, db);
            }
            Op::MeanRows(x) => {
                let (r, c) = (val(*x).shape()[0], val(*x).shape()[1]);
                let mut dx = Vec::with_capacity(r * c);
                for _ in 0..r {
                    dx.extend(g.iter().map(|v| v / r as f64));
                }
                send(*x, dx);
            }
            Op::Sum(x) => send(*x, vec![g[0]; val(*x).numel()]),
            Op::RowSum(x) => {
                let (r, c) = (val(*x).shape()[0], val(*x).shape()[1]);
                let mut dx = Vec::with_capacity(r * c);
                for gi in g.iter().take(r) {
                    dx.extend(std::iter::repeat_n(*gi, c));
                }
                send(*x, dx);
            }
            Op::Spmm(x, entries) => {
                let c = val(*x).shape()[1];
                let mut dx = vec![0.0; val(*x).numel()];
                for &(o, i, w) in entries {
                    let src = &g[o * c..(o + 1) * c];
                    dx[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, s)| *d += w * s);
                }
                send(*x, dx);
            }
            Op::RowScale(x, scale) => {
                let c = val(*x).shape()[1];
                let mut dx = g.to_vec();
                if c > 0 {
                    for (row, s) in dx.chunks_mut(c).zip(scale) {
                        row.iter_mut().for_each(|v| *v *= s);
                    }
                }
                send(*x, dx);
            }
            Op::NormalizeRows(x, norms) => {
                let c = val(*x).shape()[1];
                let mut dx = g.to_vec();
                if c > 0 {
                    for ((drow, yrow), &n) in dx.chunks_mut(c).zip(out.data().chunks(c)).zip(norms) {
                        if n == 0.0 {
                            continue;
                        }
                        let proj: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                        drow.iter_mut()
                            .zip(yrow)
                            .for_each(|(d, y)| *d = (*d - y * proj) / n);
                    }
                }
                send(*x, dx);
            }
            Op::Conv1d { input, kernels, pad } => {
                let pad = *pad;
                let (batch, channels, len) = match val(*input).shape() {
                    [c, l] => (1, *c, *l),
                    [b, c, l] => (*b, *c, *l),
                    _ => unreachable!(),
                };
                let (k_out, width) = (val(*kernels).shape()[0], val(*kernels).shape()[2]);
                let out_len = len + 2 * pad - width + 1;
                let inp = val(*input).data();
                let ker = val(*kernels).data();
                let want_in = needs(*input);
                let want_k = needs(*kernels);
                let mut din = if want_in { vec![0.0; inp.len()] } else { Vec::new() };
                let mut dk = if want_k { vec![0.0; ker.len()] } else { Vec::new() };
                for b in 0..batch {
                    for k in 0..k_out {
                        let grow = &g[(b * k_out + k) * out_len..(b * k_out + k + 1) * out_len];
                        for c in 0..channels {
                            let ioff = (b * channels + c) * len;
                            let koff = (k * channels + c) * width;
                            for j in 0..width {
                                let lo = pad.saturating_sub(j);
                                let hi = (len + pad).saturating_sub(j).min(out_len);
                                let kv = ker[koff + j];
                                let mut acc = 0.0;
                                for (i, &gv) in grow.iter().enumerate().take(hi).skip(lo) {
                                    let ii = ioff + i + j - pad;
                                    if want_in {
                                        din[ii] += kv * gv;
                                    }
                                    acc += inp[ii] * gv;
                                }
                                if want_k {
                                    dk[koff + j] += acc;
                                }
                            }
                        }
                    }
                }
                if want_in {
                    send(*input, din);
                }
                if want_k {
                    send(*kernels, dk);
                }
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Bce { probs, labels, eps } => {
                let q = val(*probs).shape()[0];
                if q == 0 {
                    return;
                }
                let scale = g[0] / q as f64;
                let dp = val(*probs)
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&p, &y)| {
                        if p < *eps || p > 1.0 - eps {
                            0.0
                        } else {
                            scale * (-y / p + (1.0 - y) / (1.0 - p))
                        }
                    })
                    .collect();
                send(*probs, dp);
            }
        }
    }
}
