//! Tape-based reverse-mode differentiation.
//!
//! Every primitive pushes one node holding its forward value and whatever it
//! needs for the backward rule. [`Tape::backward`] walks the nodes in reverse
//! insertion order, so each recorded node is visited exactly once.

use std::ops::Range;

use ndarray::{s, Array2, Axis, Zip};
use rand::RngCore;

use super::{shape_of, NumericsError, Real};

type Result<T> = std::result::Result<T, NumericsError>;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulConst(Var, Array2<T>),
    Scale(Var, T),
    Relu(Var),
    SoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    SegmentMean {
        x: Var,
        segments: Vec<usize>,
        counts: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    ScaleRows(Var, Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        inv_std: Vec<T>,
    },
    EdgeMessage {
        h: Var,
        theta: Var,
        src: Vec<usize>,
        arc_type: Vec<usize>,
        out_dim: usize,
    },
    PairAttention {
        q: Var,
        k: Var,
        v: Var,
        q_ranges: Vec<Range<usize>>,
        kv_ranges: Vec<Range<usize>>,
        heads: usize,
        probs: Vec<Array2<T>>,
    },
    RowCosine {
        x: Var,
        y: Var,
        pairs: Vec<(usize, usize)>,
    },
    Sum(Var),
    Mean(Var),
    BceWithLogits {
        logits: Var,
        labels: Vec<T>,
    },
    MaskedCrossEntropy {
        logits: Var,
        labels: Vec<i64>,
        probs: Array2<T>,
        active: usize,
    },
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Running record of a forward computation.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zeros when `v` did not
    /// participate.
    pub fn get(&self, v: Var) -> Array2<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Array2<T>> {
        self.grads[v.0].as_ref()
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, v: Var) -> Array2<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }
}

fn dims<T>(a: &Array2<T>) -> (usize, usize) {
    (a.nrows(), a.ncols())
}

fn mismatch<T>(op: &'static str, a: &Array2<T>, b: &Array2<T>) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: shape_of(a),
        right: shape_of(b),
    }
}

fn standard<T: Real>(a: Array2<T>) -> Array2<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: standard(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims(&self.nodes[v.0].value)
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(mismatch("matmul", av, bv));
        }
        let out = av.dot(bv);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", av, bv));
        }
        let out = av + bv;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("sub", av, bv));
        }
        let out = av - bv;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("mul", av, bv));
        }
        let out = av * bv;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// `x + row`, broadcasting a `1 × d` row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.nrows() != 1 || rv.ncols() != xv.ncols() {
            return Err(mismatch("add_row", xv, rv));
        }
        let out = xv + rv;
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(out, Op::AddRow(x, row), ng))
    }

    /// Affine map `x · w + b` with `b` a `1 × out` row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Elementwise product with a constant mask.
    pub fn mul_const(&mut self, x: Var, c: Array2<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != c.shape() {
            return Err(mismatch("mul_const", xv, &c));
        }
        let out = xv * &c;
        let ng = self.ng(x);
        Ok(self.push(out, Op::MulConst(x, c), ng))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x) * c;
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .mapv(|v| if v > T::zero() { v } else { T::zero() });
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    /// Row-wise softmax, max-shifted for stability.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        let ng = self.ng(x);
        self.push(out, Op::SoftmaxRows(x), ng)
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.nrows();
        let mut out = Array2::zeros((idx.len(), xv.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(NumericsError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: n,
                });
            }
            out.row_mut(r).assign(&xv.row(i));
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::GatherRows(x, idx.to_vec()), ng))
    }

    /// Contiguous row slice, recorded as a gather.
    pub fn slice_rows(&mut self, x: Var, rows: Range<usize>) -> Result<Var> {
        let idx: Vec<usize> = rows.collect();
        self.gather_rows(x, &idx)
    }

    /// Mean of the rows of `x` grouped by `segments[i]` into `n_segments`
    /// output rows. Segments with no members produce zero rows.
    pub fn segment_mean(&mut self, x: Var, segments: &[usize], n_segments: usize) -> Result<Var> {
        let xv = self.value(x);
        if segments.len() != xv.nrows() {
            return Err(NumericsError::ShapeMismatch {
                op: "segment_mean",
                left: shape_of(xv),
                right: vec![segments.len()],
            });
        }
        let mut out = Array2::<T>::zeros((n_segments, xv.ncols()));
        let mut counts = vec![0usize; n_segments];
        for (i, &sgm) in segments.iter().enumerate() {
            if sgm >= n_segments {
                return Err(NumericsError::IndexOutOfRange {
                    op: "segment_mean",
                    index: sgm,
                    len: n_segments,
                });
            }
            counts[sgm] += 1;
            let mut row = out.row_mut(sgm);
            row += &xv.row(i);
        }
        for (sgm, &c) in counts.iter().enumerate() {
            if c > 1 {
                let inv = T::one() / T::of(c as f64);
                out.row_mut(sgm).mapv_inplace(|v| v * inv);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            out,
            Op::SegmentMean {
                x,
                segments: segments.to_vec(),
                counts,
            },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).nrows();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.nrows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), pv));
            }
            total += pv.ncols();
        }
        let mut out = Array2::zeros((rows, total));
        let mut c = 0;
        for &p in parts {
            let pv = self.value(p);
            out.slice_mut(s![.., c..c + pv.ncols()]).assign(pv);
            c += pv.ncols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).ncols();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.ncols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), pv));
            }
            total += pv.nrows();
        }
        let mut out = Array2::zeros((total, cols));
        let mut r = 0;
        for &p in parts {
            let pv = self.value(p);
            out.slice_mut(s![r..r + pv.nrows(), ..]).assign(pv);
            r += pv.nrows();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Multiplies row `i` of `x` by the scalar `s[i, 0]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.ncols() != 1 || sv.nrows() != xv.nrows() {
            return Err(mismatch("scale_rows", xv, sv));
        }
        let mut out = xv.clone();
        for (mut row, &f) in out.rows_mut().into_iter().zip(sv.column(0).iter()) {
            row.mapv_inplace(|v| v * f);
        }
        let ng = self.ng(x) || self.ng(s);
        Ok(self.push(out, Op::ScaleRows(x, s), ng))
    }

    /// Batch normalization over rows, per column, using the statistics of
    /// this batch. Returns the normalized output plus the batch mean and the
    /// unbiased batch variance for the caller's running estimates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let xv = self.value(x);
        check_affine("batch_norm", xv, self.value(gamma), self.value(beta))?;
        let n = xv.nrows();
        let d = xv.ncols();
        let nf = T::of(n.max(1) as f64);
        let mut mean = vec![T::zero(); d];
        let mut var = vec![T::zero(); d];
        for row in xv.rows() {
            for (m, &v) in mean.iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= nf;
        }
        for row in xv.rows() {
            for ((acc, &v), &m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                let c = v - m;
                *acc += c * c;
            }
        }
        let unbiased: Vec<T> = if n > 1 {
            var.iter().map(|&v| v / T::of((n - 1) as f64)).collect()
        } else {
            var.clone()
        };
        for v in var.iter_mut() {
            *v /= nf;
        }
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::one() / (v + T::of(eps)).sqrt())
            .collect();
        let (out, xhat) = normalize_cols(xv, &mean, &inv_std, self.value(gamma), self.value(beta));
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let var_node = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: true,
            },
            ng,
        );
        Ok((var_node, mean, unbiased))
    }

    /// Batch normalization with frozen running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let xv = self.value(x);
        check_affine("batch_norm", xv, self.value(gamma), self.value(beta))?;
        if running_mean.len() != xv.ncols() || running_var.len() != xv.ncols() {
            return Err(NumericsError::ShapeMismatch {
                op: "batch_norm_eval",
                left: shape_of(xv),
                right: vec![running_mean.len(), running_var.len()],
            });
        }
        let inv_std: Vec<T> = running_var
            .iter()
            .map(|&v| T::one() / (v + T::of(eps)).sqrt())
            .collect();
        let (out, xhat) = normalize_cols(
            xv,
            running_mean,
            &inv_std,
            self.value(gamma),
            self.value(beta),
        );
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: false,
            },
            ng,
        ))
    }

    /// Per-row normalization across columns followed by a learned affine map.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        check_affine("layer_norm", xv, self.value(gamma), self.value(beta))?;
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let d = T::of(xv.ncols() as f64);
        let mut xhat = Array2::zeros(xv.raw_dim());
        let mut out = Array2::zeros(xv.raw_dim());
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.iter().copied().sum::<T>() / d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
            let is = T::one() / (var + T::of(eps)).sqrt();
            inv_std.push(is);
            for j in 0..row.len() {
                let h = (row[j] - mean) * is;
                xhat[[i, j]] = h;
                out[[i, j]] = h * gv[[0, j]] + bv[[0, j]];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Inverted dropout: each element is zeroed with probability `p` and the
    /// survivors are scaled by `1 / (1 - p)`.
    pub fn dropout<R: RngCore>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::InvalidDropout(p));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask = self.value(x).mapv(|_| {
            if crate::rng::unit_f64(rng) >= p {
                keep
            } else {
                T::zero()
            }
        });
        self.mul_const(x, mask)
    }

    /// Edge-conditioned messages. `theta` holds one flattened
    /// `in_dim × out_dim` matrix per edge type (row-major, `in` major);
    /// arc `a` produces `h[src[a]] · Θ[arc_type[a]]`.
    pub fn edge_message(
        &mut self,
        h: Var,
        theta: Var,
        src: &[usize],
        arc_type: &[usize],
        out_dim: usize,
    ) -> Result<Var> {
        let (hv, tv) = (self.value(h), self.value(theta));
        let in_dim = hv.ncols();
        if tv.ncols() != in_dim * out_dim || src.len() != arc_type.len() {
            return Err(mismatch("edge_message", hv, tv));
        }
        for (&s_idx, &t_idx) in src.iter().zip(arc_type.iter()) {
            if s_idx >= hv.nrows() {
                return Err(NumericsError::IndexOutOfRange {
                    op: "edge_message",
                    index: s_idx,
                    len: hv.nrows(),
                });
            }
            if t_idx >= tv.nrows() {
                return Err(NumericsError::IndexOutOfRange {
                    op: "edge_message",
                    index: t_idx,
                    len: tv.nrows(),
                });
            }
        }
        let mut out = Array2::<T>::zeros((src.len(), out_dim));
        for (t_idx, arcs) in arcs_by_type(arc_type, tv.nrows()).iter().enumerate() {
            if arcs.is_empty() {
                continue;
            }
            let rows: Vec<usize> = arcs.iter().map(|&a| src[a]).collect();
            let m = hv
                .select(Axis(0), &rows)
                .dot(&theta_block(tv, t_idx, in_dim, out_dim));
            for (r, &a) in arcs.iter().enumerate() {
                out.row_mut(a).assign(&m.row(r));
            }
        }
        let ng = self.ng(h) || self.ng(theta);
        Ok(self.push(
            out,
            Op::EdgeMessage {
                h,
                theta,
                src: src.to_vec(),
                arc_type: arc_type.to_vec(),
                out_dim,
            },
            ng,
        ))
    }

    /// Multi-head scaled dot-product attention restricted to blocks: query
    /// rows in `q_ranges[p]` attend only to key/value rows in `kv_ranges[p]`.
    /// Returns the concatenated head outputs and the attention matrices,
    /// indexed `p * heads + head`, each `|q_ranges[p]| × |kv_ranges[p]|`.
    pub fn pair_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        q_ranges: &[Range<usize>],
        kv_ranges: &[Range<usize>],
        heads: usize,
    ) -> Result<(Var, Vec<Array2<T>>)> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        if kv.ncols() != d || vv.ncols() != d || kv.nrows() != vv.nrows() {
            return Err(mismatch("pair_attention", qv, kv));
        }
        if heads == 0 || d % heads != 0 || q_ranges.len() != kv_ranges.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "pair_attention",
                left: vec![d, heads],
                right: vec![q_ranges.len(), kv_ranges.len()],
            });
        }
        for (qr, kr) in q_ranges.iter().zip(kv_ranges.iter()) {
            if qr.end > qv.nrows() || kr.end > kv.nrows() || kr.is_empty() {
                return Err(NumericsError::IndexOutOfRange {
                    op: "pair_attention",
                    index: qr.end.max(kr.end),
                    len: qv.nrows().min(kv.nrows()),
                });
            }
        }
        let hd = d / heads;
        let scale = T::one() / T::of(hd as f64).sqrt();
        let mut out = Array2::<T>::zeros((qv.nrows(), d));
        let mut probs = Vec::with_capacity(q_ranges.len() * heads);
        for (qr, kr) in q_ranges.iter().zip(kv_ranges.iter()) {
            for head in 0..heads {
                let cols = head * hd..(head + 1) * hd;
                let qh = qv.slice(s![qr.clone(), cols.clone()]);
                let kh = kv.slice(s![kr.clone(), cols.clone()]);
                let vh = vv.slice(s![kr.clone(), cols.clone()]);
                let scores = qh.dot(&kh.t()) * scale;
                let p = softmax_rows(&scores);
                let o = p.dot(&vh);
                out.slice_mut(s![qr.clone(), cols]).assign(&o);
                probs.push(p);
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        let node = self.push(
            out,
            Op::PairAttention {
                q,
                k,
                v,
                q_ranges: q_ranges.to_vec(),
                kv_ranges: kv_ranges.to_vec(),
                heads,
                probs: probs.clone(),
            },
            ng,
        );
        Ok((node, probs))
    }

    /// Cosine similarity between `x[i]` and `y[j]` for each `(i, j)`, as a
    /// column vector. Pairs involving a zero-norm row have similarity 0.
    pub fn row_cosine(&mut self, x: Var, y: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let (xv, yv) = (self.value(x), self.value(y));
        if xv.ncols() != yv.ncols() {
            return Err(mismatch("row_cosine", xv, yv));
        }
        let mut out = Array2::zeros((pairs.len(), 1));
        for (r, &(i, j)) in pairs.iter().enumerate() {
            if i >= xv.nrows() || j >= yv.nrows() {
                return Err(NumericsError::IndexOutOfRange {
                    op: "row_cosine",
                    index: i.max(j),
                    len: xv.nrows().min(yv.nrows()),
                });
            }
            out[[r, 0]] = cosine(xv.row(i).as_slice().unwrap(), yv.row(j).as_slice().unwrap());
        }
        let ng = self.ng(x) || self.ng(y);
        Ok(self.push(
            out,
            Op::RowCosine {
                x,
                y,
                pairs: pairs.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Array2::from_elem((1, 1), s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.len().max(1);
        let s = xv.sum() / T::of(n as f64);
        let ng = self.ng(x);
        self.push(Array2::from_elem((1, 1), s), Op::Mean(x), ng)
    }

    /// Mean binary cross-entropy on logits, computed as
    /// `max(z, 0) - z·y + ln(1 + e^{-|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.ncols() != 1 || lv.nrows() != labels.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "bce_with_logits",
                left: shape_of(lv),
                right: vec![labels.len(), 1],
            });
        }
        for &y in labels {
            if y != T::zero() && y != T::one() {
                return Err(NumericsError::LabelOutOfRange {
                    op: "bce_with_logits",
                    label: y.to_f64() as i64,
                });
            }
        }
        let n = labels.len().max(1);
        let mut total = T::zero();
        for (&z, &y) in lv.column(0).iter().zip(labels.iter()) {
            total += z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln();
        }
        let loss = total / T::of(n as f64);
        let ng = self.ng(logits);
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    /// Mean softmax cross-entropy over the rows whose label is not `-1`.
    /// Returns the loss node and the number of contributing rows; with no
    /// contributing rows the loss is 0 and every gradient is 0.
    pub fn masked_cross_entropy(&mut self, logits: Var, labels: &[i64]) -> Result<(Var, usize)> {
        let lv = self.value(logits);
        let classes = lv.ncols() as i64;
        if lv.nrows() != labels.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "masked_cross_entropy",
                left: shape_of(lv),
                right: vec![labels.len(), lv.ncols()],
            });
        }
        for &y in labels {
            if y < -1 || y >= classes {
                return Err(NumericsError::LabelOutOfRange {
                    op: "masked_cross_entropy",
                    label: y,
                });
            }
        }
        let probs = softmax_rows(lv);
        let active = labels.iter().filter(|&&y| y >= 0).count();
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            if y < 0 {
                continue;
            }
            let row = lv.row(i);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
            total += lse - row[y as usize];
        }
        let loss = if active > 0 {
            total / T::of(active as f64)
        } else {
            T::zero()
        };
        let ng = self.ng(logits);
        let node = self.push(
            Array2::from_elem((1, 1), loss),
            Op::MaskedCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                active,
            },
            ng,
        );
        Ok((node, active))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(NumericsError::NotScalarLoss(shape_of(lv)));
        }
        let shapes: Vec<(usize, usize)> = self.nodes.iter().map(|n| dims(&n.value)).collect();
        let mut grads: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node<T>, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    let ga = g.dot(&self.value(*b).t());
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let gb = self.value(*a).t().dot(g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.mapv(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                if self.ng(*row) {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *row, gr);
                }
            }
            Op::MulConst(x, c) => self.accumulate(grads, *x, g * c),
            Op::Scale(x, c) => self.accumulate(grads, *x, g * *c),
            Op::Relu(x) => {
                let mut gx = g.clone();
                Zip::from(&mut gx).and(&node.value).for_each(|gv, &y| {
                    if y <= T::zero() {
                        *gv = T::zero();
                    }
                });
                self.accumulate(grads, *x, gx);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut gx = Array2::zeros(y.raw_dim());
                for ((mut gr, yr), grow) in gx.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                    let dot: T = yr.iter().zip(grow.iter()).map(|(&a, &b)| a * b).sum();
                    for j in 0..yr.len() {
                        gr[j] = yr[j] * (grow[j] - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::GatherRows(x, idx) => {
                if self.ng(*x) {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut row = gx.row_mut(i);
                        row += &g.row(r);
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::SegmentMean {
                x,
                segments,
                counts,
            } => {
                let mut gx = Array2::zeros(self.value(*x).raw_dim());
                for (i, &sgm) in segments.iter().enumerate() {
                    let inv = T::one() / T::of(counts[sgm] as f64);
                    let mut row = gx.row_mut(i);
                    row.zip_mut_with(&g.row(sgm), |a, &b| *a = b * inv);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut c = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.ng(p) {
                        self.accumulate(grads, p, g.slice(s![.., c..c + w]).to_owned());
                    }
                    c += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut r = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    if self.ng(p) {
                        self.accumulate(grads, p, g.slice(s![r..r + h, ..]).to_owned());
                    }
                    r += h;
                }
            }
            Op::ScaleRows(x, sv) => {
                let s_val = self.value(*sv);
                if self.ng(*x) {
                    let mut gx = g.clone();
                    for (mut row, &f) in gx.rows_mut().into_iter().zip(s_val.column(0).iter()) {
                        row.mapv_inplace(|v| v * f);
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.ng(*sv) {
                    let xv = self.value(*x);
                    let mut gs = Array2::zeros((xv.nrows(), 1));
                    for (i, (xr, gr)) in xv.rows().into_iter().zip(g.rows()).enumerate() {
                        gs[[i, 0]] = xr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
                    }
                    self.accumulate(grads, *sv, gs);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let gv = self.value(*gamma);
                let d = xhat.ncols();
                let mut sum_g = vec![T::zero(); d];
                let mut sum_gx = vec![T::zero(); d];
                for (gr, xr) in g.rows().into_iter().zip(xhat.rows()) {
                    for j in 0..d {
                        sum_g[j] += gr[j];
                        sum_gx[j] += gr[j] * xr[j];
                    }
                }
                if self.ng(*gamma) {
                    let row = Array2::from_shape_vec((1, d), sum_gx.clone()).unwrap();
                    self.accumulate(grads, *gamma, row);
                }
                if self.ng(*beta) {
                    let row = Array2::from_shape_vec((1, d), sum_g.clone()).unwrap();
                    self.accumulate(grads, *beta, row);
                }
                if self.ng(*x) {
                    let n = T::of(xhat.nrows() as f64);
                    let mut gx = Array2::zeros(xhat.raw_dim());
                    for ((mut out, gr), xr) in
                        gx.rows_mut().into_iter().zip(g.rows()).zip(xhat.rows())
                    {
                        for j in 0..d {
                            let gam = gv[[0, j]];
                            out[j] = if *train {
                                gam * inv_std[j] / n * (n * gr[j] - sum_g[j] - xr[j] * sum_gx[j])
                            } else {
                                gam * inv_std[j] * gr[j]
                            };
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let d = xhat.ncols();
                if self.ng(*gamma) {
                    let gg = (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *gamma, gg);
                }
                if self.ng(*beta) {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *beta, gb);
                }
                if self.ng(*x) {
                    let df = T::of(d as f64);
                    let mut gx = Array2::zeros(xhat.raw_dim());
                    for (i, ((mut out, gr), xr)) in gx
                        .rows_mut()
                        .into_iter()
                        .zip(g.rows())
                        .zip(xhat.rows())
                        .enumerate()
                    {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            let dxh = gr[j] * gv[[0, j]];
                            s1 += dxh;
                            s2 += dxh * xr[j];
                        }
                        for j in 0..d {
                            let dxh = gr[j] * gv[[0, j]];
                            out[j] = inv_std[i] / df * (df * dxh - s1 - xr[j] * s2);
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::EdgeMessage {
                h,
                theta,
                src,
                arc_type,
                out_dim,
            } => {
                let hv = self.value(*h);
                let tv = self.value(*theta);
                let od = *out_dim;
                let want_h = self.ng(*h);
                let want_t = self.ng(*theta);
                let in_dim = hv.ncols();
                let mut gh = if want_h {
                    Some(Array2::<T>::zeros(hv.raw_dim()))
                } else {
                    None
                };
                let mut gt = if want_t {
                    Some(Array2::<T>::zeros(tv.raw_dim()))
                } else {
                    None
                };
                for (t_idx, arcs) in arcs_by_type(arc_type, tv.nrows()).iter().enumerate() {
                    if arcs.is_empty() {
                        continue;
                    }
                    let g_t = g.select(Axis(0), arcs);
                    let rows: Vec<usize> = arcs.iter().map(|&a| src[a]).collect();
                    if let Some(gh) = gh.as_mut() {
                        let back = g_t.dot(&theta_block(tv, t_idx, in_dim, od).t());
                        for (r, &s_idx) in rows.iter().enumerate() {
                            let mut dst = gh.row_mut(s_idx);
                            dst += &back.row(r);
                        }
                    }
                    if let Some(gt) = gt.as_mut() {
                        let block = hv.select(Axis(0), &rows).t().dot(&g_t);
                        let mut dst = gt.row_mut(t_idx);
                        dst +=
                            &ndarray::ArrayView1::from(block.as_slice().expect("standard layout"));
                    }
                }
                if let Some(gh) = gh {
                    self.accumulate(grads, *h, gh);
                }
                if let Some(gt) = gt {
                    self.accumulate(grads, *theta, gt);
                }
            }
            Op::PairAttention {
                q,
                k,
                v,
                q_ranges,
                kv_ranges,
                heads,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qv.ncols();
                let hd = d / heads;
                let scale = T::one() / T::of(hd as f64).sqrt();
                let mut gq = Array2::<T>::zeros(qv.raw_dim());
                let mut gk = Array2::<T>::zeros(kv.raw_dim());
                let mut gvv = Array2::<T>::zeros(vv.raw_dim());
                for (p, (qr, kr)) in q_ranges.iter().zip(kv_ranges.iter()).enumerate() {
                    for head in 0..*heads {
                        let cols = head * hd..(head + 1) * hd;
                        let pm = &probs[p * heads + head];
                        let go = g.slice(s![qr.clone(), cols.clone()]);
                        let qh = qv.slice(s![qr.clone(), cols.clone()]);
                        let kh = kv.slice(s![kr.clone(), cols.clone()]);
                        let vh = vv.slice(s![kr.clone(), cols.clone()]);
                        // dV = Pᵀ dO ; dP = dO Vᵀ ; dS = P ⊙ (dP - rowsum(dP ⊙ P))
                        let dv = pm.t().dot(&go);
                        let dp = go.dot(&vh.t());
                        let mut ds = Array2::<T>::zeros(pm.raw_dim());
                        for i in 0..pm.nrows() {
                            let dot: T = (0..pm.ncols()).map(|j| dp[[i, j]] * pm[[i, j]]).sum();
                            for j in 0..pm.ncols() {
                                ds[[i, j]] = pm[[i, j]] * (dp[[i, j]] - dot) * scale;
                            }
                        }
                        let dq = ds.dot(&kh);
                        let dk = ds.t().dot(&qh);
                        let mut sq = gq.slice_mut(s![qr.clone(), cols.clone()]);
                        sq += &dq;
                        let mut sk = gk.slice_mut(s![kr.clone(), cols.clone()]);
                        sk += &dk;
                        let mut sv = gvv.slice_mut(s![kr.clone(), cols.clone()]);
                        sv += &dv;
                    }
                }
                self.accumulate(grads, *q, gq);
                self.accumulate(grads, *k, gk);
                self.accumulate(grads, *v, gvv);
            }
            Op::RowCosine { x, y, pairs } => {
                let (xv, yv) = (self.value(*x), self.value(*y));
                let mut gx = Array2::<T>::zeros(xv.raw_dim());
                let mut gy = Array2::<T>::zeros(yv.raw_dim());
                for (r, &(i, j)) in pairs.iter().enumerate() {
                    let gr = g[[r, 0]];
                    let xi = xv.row(i);
                    let yj = yv.row(j);
                    let nx = xi.iter().map(|&a| a * a).sum::<T>().sqrt();
                    let ny = yj.iter().map(|&a| a * a).sum::<T>().sqrt();
                    if nx == T::zero() || ny == T::zero() {
                        continue;
                    }
                    let c = node.value[[r, 0]];
                    let inv = T::one() / (nx * ny);
                    for t in 0..xi.len() {
                        gx[[i, t]] += gr * (yj[t] * inv - c * xi[t] / (nx * nx));
                        gy[[j, t]] += gr * (xi[t] * inv - c * yj[t] / (ny * ny));
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *y, gy);
            }
            Op::Sum(x) => {
                let gx = Array2::from_elem(self.value(*x).raw_dim(), g[[0, 0]]);
                self.accumulate(grads, *x, gx);
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let gx = Array2::from_elem(xv.raw_dim(), g[[0, 0]] / T::of(xv.len().max(1) as f64));
                self.accumulate(grads, *x, gx);
            }
            Op::BceWithLogits { logits, labels } => {
                let lv = self.value(*logits);
                let n = T::of(labels.len().max(1) as f64);
                let mut gx = Array2::zeros(lv.raw_dim());
                for (i, &y) in labels.iter().enumerate() {
                    gx[[i, 0]] = g[[0, 0]] * (sigmoid(lv[[i, 0]]) - y) / n;
                }
                self.accumulate(grads, *logits, gx);
            }
            Op::MaskedCrossEntropy {
                logits,
                labels,
                probs,
                active,
            } => {
                let mut gx = Array2::zeros(probs.raw_dim());
                if *active > 0 {
                    let scale = g[[0, 0]] / T::of(*active as f64);
                    for (i, &y) in labels.iter().enumerate() {
                        if y < 0 {
                            continue;
                        }
                        for j in 0..probs.ncols() {
                            let target = if j as i64 == y { T::one() } else { T::zero() };
                            gx[[i, j]] = (probs[[i, j]] - target) * scale;
                        }
                    }
                }
                self.accumulate(grads, *logits, gx);
            }
        }
    }
}

fn check_affine<T>(
    op: &'static str,
    x: &Array2<T>,
    gamma: &Array2<T>,
    beta: &Array2<T>,
) -> Result<()> {
    let d = x.ncols();
    if gamma.shape() != [1, d] {
        return Err(mismatch(op, x, gamma));
    }
    if beta.shape() != [1, d] {
        return Err(mismatch(op, x, beta));
    }
    Ok(())
}

/// Arc indices grouped by edge type.
fn arcs_by_type(arc_type: &[usize], n_types: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); n_types];
    for (a, &t) in arc_type.iter().enumerate() {
        groups[t].push(a);
    }
    groups
}

/// Row `t` of `theta` viewed as an `in_dim × out_dim` matrix.
fn theta_block<T: Real>(
    theta: &Array2<T>,
    t: usize,
    in_dim: usize,
    out_dim: usize,
) -> ndarray::ArrayView2<'_, T> {
    let row = theta.row(t).to_slice().expect("standard layout");
    ndarray::ArrayView2::from_shape((in_dim, out_dim), row)
        .expect("row holds in_dim × out_dim values")
}

/// Returns `(gamma·x̂ + beta, x̂)`.
fn normalize_cols<T: Real>(
    x: &Array2<T>,
    mean: &[T],
    inv_std: &[T],
    gamma: &Array2<T>,
    beta: &Array2<T>,
) -> (Array2<T>, Array2<T>) {
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut out = Array2::zeros(x.raw_dim());
    for ((mut hr, mut or), xr) in xhat
        .rows_mut()
        .into_iter()
        .zip(out.rows_mut())
        .zip(x.rows())
    {
        for j in 0..xr.len() {
            let h = (xr[j] - mean[j]) * inv_std[j];
            hr[j] = h;
            or[j] = h * gamma[[0, j]] + beta[[0, j]];
        }
    }
    (out, xhat)
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax of a plain matrix.
pub fn softmax_rows<T: Real, S: ndarray::Data<Elem = T>>(
    x: &ndarray::ArrayBase<S, ndarray::Ix2>,
) -> Array2<T> {
    let mut out = Array2::zeros(x.raw_dim());
    for (mut orow, xrow) in out.rows_mut().into_iter().zip(x.rows()) {
        let m = xrow.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (o, &v) in orow.iter_mut().zip(xrow.iter()) {
            *o = (v - m).exp();
            total += *o;
        }
        orow.mapv_inplace(|v| v / total);
    }
    out
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> T {
    let na = a.iter().map(|&v| v * v).sum::<T>().sqrt();
    let nb = b.iter().map(|&v| v * v).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum::<T>() / (na * nb)
}
