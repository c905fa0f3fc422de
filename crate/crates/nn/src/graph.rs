//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Every value is a `[rows, cols]` matrix. Operations append nodes to the
//! tape; `backward` walks the tape in reverse and accumulates gradients into
//! one buffer per parameter tensor.

use crate::error::NnError;
use crate::params::{Gradients, ParamId, ParamSet};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Geometry of one convolution stage. Inputs and outputs are flattened
/// per sample as `[channels, height, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.in_height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    /// Rows of the unfolded patch matrix.
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Unfolds one sample into a `[patch_len, out_h * out_w]` matrix.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (oh, ow, k) = (self.out_height(), self.out_width(), self.kernel);
        let npix = oh * ow;
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            let inside = iy >= 0 && ix >= 0 && (iy as usize) < self.in_height && (ix as usize) < self.in_width;
                            cols[row * npix + oy * ow + ox] =
                                if inside { x[(c * self.in_height + iy as usize) * self.in_width + ix as usize] } else { T::zero() };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters patch gradients back onto the input.
    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let (oh, ow, k) = (self.out_height(), self.out_width(), self.kernel);
        let npix = oh * ow;
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.in_height {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix as usize >= self.in_width {
                                continue;
                            }
                            let i = (c * self.in_height + iy as usize) * self.in_width + ix as usize;
                            dx[i] = dx[i] + cols[row * npix + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Param(ParamId),
    Input,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleRows(Var, Vec<T>),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Sum(Var),
    Mean(Var),
    Clamp(Var, T, T),
    Minimum(Var, Var),
    /// input, weight `[out_c, patch]`, bias `[1, out_c]`, unfolded patches per sample
    Conv2d(Var, Var, Var, ConvGeometry, Vec<T>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    rows: usize,
    cols: usize,
    /// Empty for parameter leaves, whose values live in the parameter set.
    value: Vec<T>,
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<Var>>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.tensors.len()] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        let n = &self.nodes[v.0];
        match n.op {
            Op::Param(id) => &self.params.get(id).data,
            _ => &n.value,
        }
    }

    /// Scalar value of a `[1, 1]` node.
    pub fn scalar(&self, v: Var) -> T {
        assert_eq!(self.shape(v), (1, 1), "not a scalar");
        self.value(v)[0]
    }

    fn push(&mut self, op: Op<T>, rows: usize, cols: usize, value: Vec<T>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node { op, rows, cols, value });
        Var(self.nodes.len() - 1)
    }

    /// The parameter as a graph leaf; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let [r, c] = self.params.get(id).shape;
        let v = self.push(Op::Param(id), r, c, Vec::new());
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, data: Vec<T>, rows: usize, cols: usize) -> Var {
        assert_eq!(data.len(), rows * cols, "input data does not match its shape");
        self.push(Op::Input, rows, cols, data)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let (r, c) = self.shape(a);
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(op, r, c, value)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "element-wise operands differ in shape");
        let (r, c) = self.shape(a);
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        self.push(op, r, c, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a), k, 1, self.value(b), n, 1, T::zero(), &mut out, n, 1);
        self.push(Op::MatMul(a, b), m, n, out)
    }

    /// Adds a `[1, cols]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(bias), (1, c), "bias must be a single row");
        let b = self.value(bias);
        let value = self.value(a).chunks_exact(c).flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y)).collect();
        self.push(Op::AddRow(a, bias), r, c, value)
    }

    /// `x·w + b`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let wv = self.param(w);
        let bv = self.param(b);
        let y = self.matmul(x, wv);
        self.add_row(y, bv)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Minimum(a, b), |x, y| if x <= y { x } else { y })
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        self.unary(a, Op::Scale(a, k), |x| x * k)
    }

    /// Multiplies row `i` by `k[i]`.
    pub fn scale_rows(&mut self, a: Var, k: Vec<T>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(k.len(), r, "one factor per row");
        let value = self.value(a).chunks_exact(c).zip(&k).flat_map(|(row, &s)| row.iter().map(move |&x| x * s)).collect();
        self.push(Op::ScaleRows(a, k), r, c, value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| T::one() / (T::one() + (-x).exp()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut value = Vec::with_capacity(r * c);
        for row in self.value(a).chunks_exact(c) {
            let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = m + T::of(row.iter().map(|&x| (x - m).f64().exp()).sum::<f64>().ln());
            value.extend(row.iter().map(|&x| x - lse));
        }
        self.push(Op::LogSoftmax(a), r, c, value)
    }

    /// Element `idx[i]` of every row `i`, as a column.
    pub fn pick(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(idx.len(), r, "one index per row");
        assert!(idx.iter().all(|&i| i < c), "pick index out of range");
        let value = self.value(a).chunks_exact(c).zip(&idx).map(|(row, &i)| row[i]).collect();
        self.push(Op::Pick(a, idx), r, 1, value)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.shape(parts[0]).0;
        assert!(parts.iter().all(|&p| self.shape(p).0 == r), "concat_cols needs equal row counts");
        let c: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                let pc = self.shape(p).1;
                value.extend_from_slice(&self.value(p)[i * pc..(i + 1) * pc]);
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), r, c, value)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= c, "column slice out of range");
        let value = self.value(a).chunks_exact(c).flat_map(|row| row[start..start + len].iter().copied()).collect();
        self.push(Op::SliceCols(a, start), r, len, value)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.shape(parts[0]).1;
        assert!(parts.iter().all(|&p| self.shape(p).1 == c), "concat_rows needs equal column counts");
        let r: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut value = Vec::with_capacity(r * c);
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        self.push(Op::ConcatRows(parts.to_vec()), r, c, value)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= r, "row slice out of range");
        let value = self.value(a)[start * c..(start + len) * c].to_vec();
        self.push(Op::SliceRows(a, start), len, c, value)
    }

    /// Sum of all elements (accumulated in 64 bits).
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|x| x.f64()).sum::<f64>();
        self.push(Op::Sum(a), 1, 1, vec![T::of(s)])
    }

    /// Mean of all elements (accumulated in 64 bits).
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().map(|x| x.f64()).sum::<f64>() / v.len().max(1) as f64;
        self.push(Op::Mean(a), 1, 1, vec![T::of(s)])
    }

    /// Convolution over a batch of flattened `[C, H, W]` samples (one per row).
    pub fn conv2d(&mut self, x: Var, w: ParamId, b: ParamId, g: ConvGeometry) -> Var {
        let (n, len) = self.shape(x);
        assert_eq!(len, g.in_len(), "conv input length mismatch");
        let wv = self.param(w);
        let bv = self.param(b);
        assert_eq!(self.shape(wv), (g.out_channels, g.patch_len()), "conv weight shape mismatch");
        assert_eq!(self.shape(bv), (1, g.out_channels), "conv bias shape mismatch");
        let (patch, npix) = (g.patch_len(), g.out_height() * g.out_width());
        let mut cols = vec![T::zero(); n * patch * npix];
        let mut out = vec![T::zero(); n * g.out_len()];
        let bias = self.value(bv).to_vec();
        for s in 0..n {
            let col = &mut cols[s * patch * npix..(s + 1) * patch * npix];
            g.im2col(&self.value(x)[s * len..(s + 1) * len], col);
            let o = &mut out[s * g.out_len()..(s + 1) * g.out_len()];
            for (co, chunk) in o.chunks_exact_mut(npix).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bias[co]);
            }
            T::gemm(g.out_channels, patch, npix, self.value(wv), patch, 1, col, npix, 1, T::one(), o, npix, 1);
        }
        self.push(Op::Conv2d(x, wv, bv, g, cols), n, g.out_len(), out)
    }

    /// Gradients of the scalar `loss` with respect to every parameter;
    /// parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NnError> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(NnError::Contract(format!("backward needs a scalar loss, got [{r}, {c}]")));
        }
        let mut out = self.params.zeros_like();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let (rows, cols) = (node.rows, node.cols);
            let mut acc = |v: Var, f: &dyn Fn(&mut [T])| {
                let len = self.nodes[v.0].rows * self.nodes[v.0].cols;
                let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
                f(slot);
            };
            match &node.op {
                Op::Param(id) => {
                    for (o, x) in out.grads[id.0].iter_mut().zip(&g) {
                        *o = *o + *x;
                    }
                }
                Op::Input => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = cols;
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // dA = dC·Bᵀ, dB = Aᵀ·dC
                    acc(*a, &|da| T::gemm(m, n, k, &g, n, 1, bv, 1, n, T::one(), da, k, 1));
                    acc(*b, &|db| T::gemm(k, m, n, av, 1, k, &g, n, 1, T::one(), db, n, 1));
                }
                Op::AddRow(a, bias) => {
                    acc(*a, &|da| add_into(da, &g));
                    acc(*bias, &|db| {
                        for row in g.chunks_exact(cols) {
                            add_into(db, row);
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(*a, &|da| add_into(da, &g));
                    acc(*b, &|db| add_into(db, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &|da| add_into(da, &g));
                    acc(*b, &|db| db.iter_mut().zip(&g).for_each(|(d, x)| *d = *d - *x));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, &|da| zip3(da, &g, bv, |x, y| x * y));
                    acc(*b, &|db| zip3(db, &g, av, |x, y| x * y));
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, &|da| {
                        for (j, d) in da.iter_mut().enumerate() {
                            if av[j] <= bv[j] {
                                *d = *d + g[j];
                            }
                        }
                    });
                    acc(*b, &|db| {
                        for (j, d) in db.iter_mut().enumerate() {
                            if av[j] > bv[j] {
                                *d = *d + g[j];
                            }
                        }
                    });
                }
                Op::Scale(a, k) => acc(*a, &|da| zip2(da, &g, |x| x * *k)),
                Op::ScaleRows(a, k) => acc(*a, &|da| {
                    for (r, (drow, grow)) in da.chunks_exact_mut(cols).zip(g.chunks_exact(cols)).enumerate() {
                        zip2(drow, grow, |x| x * k[r]);
                    }
                }),
                Op::Relu(a) => {
                    let av = self.value(*a);
                    acc(*a, &|da| zip3(da, &g, av, |x, y| if y > T::zero() { x } else { T::zero() }));
                }
                Op::Sigmoid(a) => acc(*a, &|da| zip3(da, &g, &node.value, |x, y| x * y * (T::one() - y))),
                Op::Tanh(a) => acc(*a, &|da| zip3(da, &g, &node.value, |x, y| x * (T::one() - y * y))),
                Op::Exp(a) => acc(*a, &|da| zip3(da, &g, &node.value, |x, y| x * y)),
                Op::Square(a) => {
                    let av = self.value(*a);
                    acc(*a, &|da| zip3(da, &g, av, |x, y| x * (y + y)));
                }
                Op::Clamp(a, lo, hi) => {
                    let av = self.value(*a);
                    acc(*a, &|da| zip3(da, &g, av, |x, y| if y >= *lo && y <= *hi { x } else { T::zero() }));
                }
                Op::LogSoftmax(a) => acc(*a, &|da| {
                    for ((drow, grow), yrow) in da.chunks_exact_mut(cols).zip(g.chunks_exact(cols)).zip(node.value.chunks_exact(cols)) {
                        let gs = T::of(grow.iter().map(|x| x.f64()).sum::<f64>());
                        for j in 0..cols {
                            drow[j] = drow[j] + grow[j] - yrow[j].exp() * gs;
                        }
                    }
                }),
                Op::Pick(a, idx) => {
                    let ac = self.shape(*a).1;
                    acc(*a, &|da| {
                        for (r, &j) in idx.iter().enumerate() {
                            da[r * ac + j] = da[r * ac + j] + g[r];
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let pc = self.shape(*p).1;
                        acc(*p, &|dp| {
                            for r in 0..rows {
                                add_into(&mut dp[r * pc..(r + 1) * pc], &g[r * cols + off..r * cols + off + pc]);
                            }
                        });
                        off += pc;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ac = self.shape(*a).1;
                    acc(*a, &|da| {
                        for r in 0..rows {
                            add_into(&mut da[r * ac + start..r * ac + start + cols], &g[r * cols..(r + 1) * cols]);
                        }
                    });
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.shape(*p).0 * cols;
                        acc(*p, &|dp| add_into(dp, &g[off..off + len]));
                        off += len;
                    }
                }
                Op::SliceRows(a, start) => acc(*a, &|da| add_into(&mut da[start * cols..(start + rows) * cols], &g)),
                Op::Sum(a) => acc(*a, &|da| da.iter_mut().for_each(|d| *d = *d + g[0])),
                Op::Mean(a) => {
                    let n = T::of(self.value(*a).len().max(1) as f64);
                    acc(*a, &|da| da.iter_mut().for_each(|d| *d = *d + g[0] / n));
                }
                Op::Conv2d(x, w, b, geo, col_cache) => {
                    let (patch, npix) = (geo.patch_len(), geo.out_height() * geo.out_width());
                    let (inl, outl) = (geo.in_len(), geo.out_len());
                    let wv = self.value(*w);
                    acc(*w, &|dw| {
                        for s in 0..rows {
                            let gs = &g[s * outl..(s + 1) * outl];
                            let col = &col_cache[s * patch * npix..(s + 1) * patch * npix];
                            // dW += dOut · colsᵀ
                            T::gemm(geo.out_channels, npix, patch, gs, npix, 1, col, 1, npix, T::one(), dw, patch, 1);
                        }
                    });
                    acc(*b, &|db| {
                        for s in 0..rows {
                            for (co, chunk) in g[s * outl..(s + 1) * outl].chunks_exact(npix).enumerate() {
                                db[co] = db[co] + T::of(chunk.iter().map(|v| v.f64()).sum::<f64>());
                            }
                        }
                    });
                    acc(*x, &|dx| {
                        let mut dcol = vec![T::zero(); patch * npix];
                        for s in 0..rows {
                            let gs = &g[s * outl..(s + 1) * outl];
                            // dcols = Wᵀ · dOut
                            T::gemm(patch, geo.out_channels, npix, wv, 1, patch, gs, npix, 1, T::zero(), &mut dcol, npix, 1);
                            geo.col2im(&dcol, &mut dx[s * inl..(s + 1) * inl]);
                        }
                    });
                }
            }
        }
        Ok(out)
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

fn zip2<T: Real>(dst: &mut [T], g: &[T], f: impl Fn(T) -> T) {
    for (d, x) in dst.iter_mut().zip(g) {
        *d = *d + f(*x);
    }
}

fn zip3<T: Real>(dst: &mut [T], g: &[T], y: &[T], f: impl Fn(T, T) -> T) {
    for ((d, x), v) in dst.iter_mut().zip(g).zip(y) {
        *d = *d + f(*x, *v);
    }
}
