//! Reverse-mode differentiation over a linear tape of tensor primitives.
//!
//! Every primitive evaluates eagerly and appends a node; [`Tape::backward`]
//! replays the nodes in reverse and accumulates vector-Jacobian products.
//! The primitive set is deliberately narrow: row-batched affine maps,
//! elementwise arithmetic, row gathers/concatenations, segment reductions,
//! and a few fused operators for the rate objectives and feasibility maps.

use std::borrow::Cow;
use std::f64::consts::LN_2;
use std::sync::Arc;

use num_complex::Complex64;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index lists describing which rows feed each output row of a segment
/// reduction. Shared between tapes, so it is reference counted.
pub type Segments = Arc<[Vec<usize>]>;

/// Complex link coefficients for [`Tape::cross_gain_power`].
///
/// `coef[((j * receivers + k) * blocks + t) * width + n]` is the coefficient
/// multiplying entry `n` of the `t`-th block row of user `j`'s variable when
/// measured at receiver `k`.
#[derive(Debug, Clone)]
pub struct LinkCoefficients {
    pub users: usize,
    pub receivers: usize,
    pub blocks: usize,
    pub width: usize,
    pub coef: Vec<Complex64>,
    /// Row indices (into the variable tensor) of each user's blocks.
    pub rows: Vec<Vec<usize>>,
}

impl LinkCoefficients {
    #[inline]
    fn at(&self, j: usize, k: usize, t: usize) -> &[Complex64] {
        let off = ((j * self.receivers + k) * self.blocks + t) * self.width;
        &self.coef[off..off + self.width]
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MaskRows {
        x: Var,
        keep: Arc<[bool]>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Arc<[usize]>,
    },
    SegmentMax {
        x: Var,
        // per output entry: source row, or usize::MAX for an empty segment
        argmax: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        segments: Segments,
    },
    Sum(Var),
    Reshape(Var),
    Log2OnePlus(Var),
    RowScaleDown {
        x: Var,
        radius: Vec<f64>,
        norm: Vec<f64>,
    },
    SumScaleDown {
        x: Var,
        groups: Arc<[Vec<usize>]>,
        budget: Vec<f64>,
        total: Vec<f64>,
    },
    ScaleRowsConst {
        x: Var,
        c: Tensor,
    },
    CrossGainPower {
        v: Var,
        links: Arc<LinkCoefficients>,
        amp: Vec<Complex64>,
    },
    SinrRates {
        p: Var,
        noise: Vec<f64>,
        total: Vec<f64>,
        interf: Vec<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Recording context for one forward/backward pass.
///
/// Leaves may borrow parameter tensors for the lifetime `'a`, so sharing one
/// parameter set across many per-sample tapes does not copy the weights.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not influence the
    /// loss or was recorded without `requires_grad`.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like `v`; zeros when absent.
    pub fn tensor(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::invalid(format!("{op}: {detail}"))
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records an owned tensor; it is differentiable iff `requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let ng = t.requires_grad;
        self.push(t, Op::Leaf, ng)
    }

    /// Records a borrowed tensor (typically a model parameter).
    pub fn leaf_ref(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            needs_grad: t.requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a borrowed tensor as differentiable regardless of its flag.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// `y = x Wᵀ + b` applied to every row of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, din) = (xv.rows(), xv.cols());
        if wv.shape().len() != 2 || wv.shape()[1] != din {
            return Err(shape_err(
                "linear",
                format!("weight {:?} does not accept width {}", wv.shape(), din),
            ));
        }
        let dout = wv.shape()[0];
        let mut out = vec![0.0; n * dout];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != dout {
                return Err(shape_err("linear", format!("bias length {} != {}", bv.len(), dout)));
            }
            for r in 0..n {
                out[r * dout..(r + 1) * dout].copy_from_slice(bv.data());
            }
        }
        // Y += X · Wᵀ
        gemm_acc(n, din, dout, xv.data(), [din, 1], wv.data(), [1, din], &mut out);
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::matrix(n, dout, out)?, Op::Linear { x, w, b }, ng))
    }

    /// ReLU with subgradient 0 at the kink.
    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).unwrap();
        let ng = self.ng(x);
        self.push(t, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| logistic(v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).unwrap();
        let ng = self.ng(x);
        self.push(t, Op::Sigmoid(x), ng)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(shape_err(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * c).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).unwrap();
        let ng = self.ng(x);
        self.push(t, Op::Scale(x, c), ng)
    }

    /// Zeroes every row whose `keep` flag is false.
    pub fn mask_rows(&mut self, x: Var, keep: Arc<[bool]>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != keep.len() {
            return Err(shape_err(
                "mask_rows",
                format!("{} rows, mask of {}", xv.rows(), keep.len()),
            ));
        }
        let mut t = xv.clone();
        t.requires_grad = false;
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                t.row_mut(r).fill(0.0);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(t, Op::MaskRows { x, keep }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != n) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let width: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(n * width);
        for r in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(n, width, out)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != c) {
            return Err(shape_err("concat_rows", "row widths differ".into()));
        }
        let n: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut out = Vec::with_capacity(n * c);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(n, c, out)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= n {
                return Err(shape_err("gather_rows", format!("row {i} out of range for {n} rows")));
            }
            out.extend_from_slice(xv.row(i));
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(idx.len(), c, out)?, Op::GatherRows { x, idx }, ng))
    }

    /// Element-wise maximum over the rows listed in each segment.
    ///
    /// An empty segment yields a zero row. Ties route the subgradient to the
    /// first listed row attaining the maximum.
    pub fn segment_max(&mut self, x: Var, segments: &Segments) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; segments.len() * c];
        let mut argmax = vec![usize::MAX; segments.len() * c];
        for (s, rows) in segments.iter().enumerate() {
            let yo = &mut out[s * c..(s + 1) * c];
            let ao = &mut argmax[s * c..(s + 1) * c];
            for &r in rows {
                if r >= n {
                    return Err(shape_err("segment_max", format!("row {r} out of range for {n} rows")));
                }
                let xr = xv.row(r);
                for j in 0..c {
                    if ao[j] == usize::MAX || xr[j] > yo[j] {
                        yo[j] = xr[j];
                        ao[j] = r;
                    }
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::matrix(segments.len(), c, out)?,
            Op::SegmentMax { x, argmax },
            ng,
        ))
    }

    /// Mean over the rows of each segment; empty segments yield zeros.
    pub fn segment_mean(&mut self, x: Var, segments: &Segments) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; segments.len() * c];
        for (s, rows) in segments.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let yo = &mut out[s * c..(s + 1) * c];
            for &r in rows {
                if r >= n {
                    return Err(shape_err("segment_mean", format!("row {r} out of range for {n} rows")));
                }
                for (y, &v) in yo.iter_mut().zip(xv.row(r)) {
                    *y += v;
                }
            }
            let inv = 1.0 / rows.len() as f64;
            yo.iter_mut().for_each(|y| *y *= inv);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::matrix(segments.len(), c, out)?,
            Op::SegmentMean {
                x,
                segments: segments.clone(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let mut t = self.value(x).clone().reshape(shape)?;
        t.requires_grad = false;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// `log2(1 + x)`, computed through `ln_1p` for accuracy at small `x`.
    pub fn log2_one_plus(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.ln_1p() / LN_2).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).unwrap();
        let ng = self.ng(x);
        self.push(t, Op::Log2OnePlus(x), ng)
    }

    /// Scales each row down onto the ball of the given radius when it lies
    /// outside: `y_r = x_r · min(1, radius_r / ‖x_r‖)`.
    pub fn row_scale_down(&mut self, x: Var, radius: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != radius.len() {
            return Err(shape_err(
                "row_scale_down",
                format!("{} rows, {} radii", xv.rows(), radius.len()),
            ));
        }
        let mut t = xv.clone();
        t.requires_grad = false;
        let mut norm = Vec::with_capacity(radius.len());
        for (r, &rad) in radius.iter().enumerate() {
            let row = t.row_mut(r);
            let nrm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm > rad {
                let f = rad / nrm;
                row.iter_mut().for_each(|v| *v *= f);
            }
            norm.push(nrm);
        }
        let ng = self.ng(x);
        Ok(self.push(t, Op::RowScaleDown { x, radius, norm }, ng))
    }

    /// For nonnegative `x`, rescales each group so its sum does not exceed
    /// the group budget: `y_r = x_r · min(1, budget_g / Σ_{r∈g} x_r)`.
    pub fn sum_scale_down(&mut self, x: Var, groups: Arc<[Vec<usize>]>, budget: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if groups.len() != budget.len() {
            return Err(shape_err(
                "sum_scale_down",
                format!("{} groups, {} budgets", groups.len(), budget.len()),
            ));
        }
        let mut t = xv.clone();
        t.requires_grad = false;
        let mut total = Vec::with_capacity(groups.len());
        for (g, members) in groups.iter().enumerate() {
            if members.iter().any(|&r| r >= t.len()) {
                return Err(shape_err("sum_scale_down", "member out of range".into()));
            }
            let s: f64 = members.iter().map(|&r| xv.data()[r]).sum();
            if s > budget[g] {
                let f = budget[g] / s;
                for &r in members {
                    t.data_mut()[r] *= f;
                }
            }
            total.push(s);
        }
        let ng = self.ng(x);
        Ok(self.push(
            t,
            Op::SumScaleDown {
                x,
                groups,
                budget,
                total,
            },
            ng,
        ))
    }

    /// `y[r, c] = x[r] · c[r, c]` for a per-row scalar `x` and constant `c`.
    pub fn scale_rows_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != c.rows() {
            return Err(shape_err(
                "scale_rows_const",
                format!("{} scalars for {} rows", xv.len(), c.rows()),
            ));
        }
        let mut out = c.clone();
        out.requires_grad = false;
        for r in 0..c.rows() {
            let s = xv.data()[r];
            out.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::ScaleRowsConst { x, c }, ng))
    }

    /// Received power matrix `P[j, k] = |Σ_t Σ_n conj(g[j,k,t,n]) v[row_{j,t}, n]|²`.
    ///
    /// Each row of `v` holds one complex block as `[re_0..re_{N-1}, im_0..im_{N-1}]`.
    pub fn cross_gain_power(&mut self, v: Var, links: Arc<LinkCoefficients>) -> Result<Var> {
        let vv = self.value(v);
        let nw = links.width;
        if vv.cols() != 2 * nw {
            return Err(shape_err(
                "cross_gain_power",
                format!("rows of width {} for {} complex entries", vv.cols(), nw),
            ));
        }
        if links.rows.len() != links.users
            || links.rows.iter().any(|r| r.len() != links.blocks)
            || links.rows.iter().flatten().any(|&r| r >= vv.rows())
        {
            return Err(shape_err("cross_gain_power", "bad block row map".into()));
        }
        let (j_n, k_n) = (links.users, links.receivers);
        let mut amp = vec![Complex64::new(0.0, 0.0); j_n * k_n];
        let mut out = vec![0.0; j_n * k_n];
        for j in 0..j_n {
            for k in 0..k_n {
                let mut a = Complex64::new(0.0, 0.0);
                for (t, &row) in links.rows[j].iter().enumerate() {
                    let vr = vv.row(row);
                    let g = links.at(j, k, t);
                    for n in 0..nw {
                        let (re, im) = (vr[n], vr[nw + n]);
                        a.re += g[n].re * re + g[n].im * im;
                        a.im += g[n].re * im - g[n].im * re;
                    }
                }
                amp[j * k_n + k] = a;
                out[j * k_n + k] = a.norm_sqr();
            }
        }
        let ng = self.ng(v);
        Ok(self.push(Tensor::matrix(j_n, k_n, out)?, Op::CrossGainPower { v, links, amp }, ng))
    }

    /// Per-receiver rates `log2(1 + P[k,k] / (Σ_{j≠k} P[j,k] + noise_k))`
    /// from a square received-power matrix indexed `[transmit stream, receiver]`.
    pub fn sinr_rates(&mut self, p: Var, noise: Vec<f64>) -> Result<Var> {
        let pv = self.value(p);
        let k_n = noise.len();
        if pv.rows() != k_n || pv.cols() != k_n {
            return Err(shape_err(
                "sinr_rates",
                format!("power matrix {:?} for {} receivers", pv.shape(), k_n),
            ));
        }
        let d = pv.data();
        let mut total = vec![0.0; k_n];
        let mut interf = vec![0.0; k_n];
        let mut rates = vec![0.0; k_n];
        for k in 0..k_n {
            let mut i = noise[k];
            for j in 0..k_n {
                if j != k {
                    i += d[j * k_n + k];
                }
            }
            let s = d[k * k_n + k];
            interf[k] = i;
            total[k] = i + s;
            rates[k] = (s / i).ln_1p() / LN_2;
        }
        let ng = self.ng(p);
        Ok(self.push(
            Tensor::vector(rates),
            Op::SinrRates {
                p,
                noise,
                total,
                interf,
            },
            ng,
        ))
    }

    /// Gradient of every listed borrowed tensor, summed over all leaves that
    /// borrow it (a parameter may be recorded more than once).
    pub fn borrowed_grads(&self, grads: &Gradients, params: &[&Tensor]) -> Vec<Tensor> {
        let index: std::collections::HashMap<*const Tensor, usize> = params
            .iter()
            .enumerate()
            .map(|(i, t)| (*t as *const Tensor, i))
            .collect();
        let mut out: Vec<Tensor> = params.iter().map(|t| Tensor::zeros(t.shape())).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            let Cow::Borrowed(t) = &node.value else { continue };
            let Some(&j) = index.get(&(*t as *const Tensor)) else {
                continue;
            };
            if let Some(g) = grads.grads.get(i).and_then(|g| g.as_deref()) {
                for (o, v) in out[j].data_mut().iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        out
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &gy, &mut grads);
            grads[i] = Some(gy);
        }

        // Drop intermediate gradients that no caller can address meaningfully.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.needs_grad {
                *g = None;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, op: &Op, y: &Tensor, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, din) = (xv.rows(), xv.cols());
                let dout = wv.shape()[0];
                if let Some(gx) = self.acc(grads, *x) {
                    // gX += gY · W
                    gemm_acc(n, dout, din, gy, [dout, 1], wv.data(), [din, 1], gx);
                }
                if let Some(gw) = self.acc(grads, *w) {
                    // gW += gYᵀ · X
                    gemm_acc(dout, n, din, gy, [1, dout], xv.data(), [din, 1], gw);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.acc(grads, *b) {
                        for r in 0..n {
                            axpy(1.0, &gy[r * dout..(r + 1) * dout], gb);
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for ((g, &v), &d) in gx.iter_mut().zip(xv.data()).zip(gy) {
                        if v > 0.0 {
                            *g += d;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for ((g, &s), &d) in gx.iter_mut().zip(y.data()).zip(gy) {
                        *g += d * s * (1.0 - s);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(1.0, gy, ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    axpy(1.0, gy, gb);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(1.0, gy, ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    axpy(-1.0, gy, gb);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..ga.len() {
                        ga[i] += gy[i] * bv[i];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..gb.len() {
                        gb[i] += gy[i] * av[i];
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.acc(grads, *x) {
                    axpy(*c, gy, gx);
                }
            }
            Op::MaskRows { x, keep } => {
                let c = y.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, &k) in keep.iter().enumerate() {
                        if k {
                            axpy(1.0, &gy[r * c..(r + 1) * c], &mut gx[r * c..(r + 1) * c]);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let width = y.cols();
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if let Some(gp) = self.acc(grads, p) {
                        for r in 0..y.rows() {
                            axpy(
                                1.0,
                                &gy[r * width + off..r * width + off + pc],
                                &mut gp[r * pc..(r + 1) * pc],
                            );
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.acc(grads, p) {
                        axpy(1.0, &gy[off..off + len], gp);
                    }
                    off += len;
                }
            }
            Op::GatherRows { x, idx } => {
                let c = y.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (o, &i) in idx.iter().enumerate() {
                        axpy(1.0, &gy[o * c..(o + 1) * c], &mut gx[i * c..(i + 1) * c]);
                    }
                }
            }
            Op::SegmentMax { x, argmax } => {
                let c = y.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (e, &src) in argmax.iter().enumerate() {
                        if src != usize::MAX {
                            gx[src * c + e % c] += gy[e];
                        }
                    }
                }
            }
            Op::SegmentMean { x, segments } => {
                let c = y.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (s, rows) in segments.iter().enumerate() {
                        if rows.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / rows.len() as f64;
                        for &r in rows {
                            axpy(inv, &gy[s * c..(s + 1) * c], &mut gx[r * c..(r + 1) * c]);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|g| *g += gy[0]);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    axpy(1.0, gy, gx);
                }
            }
            Op::Log2OnePlus(x) => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..gx.len() {
                        gx[i] += gy[i] / ((1.0 + xv[i]) * LN_2);
                    }
                }
            }
            Op::RowScaleDown { x, radius, norm } => {
                let xv = self.value(*x);
                let c = xv.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..xv.rows() {
                        let gyr = &gy[r * c..(r + 1) * c];
                        let gxr = &mut gx[r * c..(r + 1) * c];
                        if norm[r] > radius[r] {
                            let xr = xv.row(r);
                            let nrm = norm[r];
                            let f = radius[r] / nrm;
                            let proj = dot(xr, gyr) * radius[r] / (nrm * nrm * nrm);
                            for i in 0..c {
                                gxr[i] += f * gyr[i] - proj * xr[i];
                            }
                        } else {
                            axpy(1.0, gyr, gxr);
                        }
                    }
                }
            }
            Op::SumScaleDown {
                x,
                groups,
                budget,
                total,
            } => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.acc(grads, *x) {
                    let mut touched = vec![false; gx.len()];
                    for (g, members) in groups.iter().enumerate() {
                        if total[g] > budget[g] {
                            let f = budget[g] / total[g];
                            let coupling: f64 =
                                members.iter().map(|&r| xv[r] * gy[r]).sum::<f64>() * budget[g] / (total[g] * total[g]);
                            for &r in members {
                                gx[r] += f * gy[r] - coupling;
                                touched[r] = true;
                            }
                        } else {
                            for &r in members {
                                gx[r] += gy[r];
                                touched[r] = true;
                            }
                        }
                    }
                    // entries outside every group pass through unchanged
                    for (r, t) in touched.iter().enumerate() {
                        if !t {
                            gx[r] += gy[r];
                        }
                    }
                }
            }
            Op::ScaleRowsConst { x, c } => {
                if let Some(gx) = self.acc(grads, *x) {
                    let w = c.cols();
                    for r in 0..c.rows() {
                        gx[r] += dot(c.row(r), &gy[r * w..(r + 1) * w]);
                    }
                }
            }
            Op::CrossGainPower { v, links, amp } => {
                let nw = links.width;
                let k_n = links.receivers;
                if let Some(gv) = self.acc(grads, *v) {
                    for j in 0..links.users {
                        for k in 0..k_n {
                            let d = gy[j * k_n + k];
                            if d == 0.0 {
                                continue;
                            }
                            let a = amp[j * k_n + k];
                            for (t, &row) in links.rows[j].iter().enumerate() {
                                let g = links.at(j, k, t);
                                let gr = &mut gv[row * 2 * nw..(row + 1) * 2 * nw];
                                for n in 0..nw {
                                    gr[n] += 2.0 * d * (a.re * g[n].re - a.im * g[n].im);
                                    gr[nw + n] += 2.0 * d * (a.re * g[n].im + a.im * g[n].re);
                                }
                            }
                        }
                    }
                }
            }
            Op::SinrRates {
                p,
                noise,
                total,
                interf,
            } => {
                let k_n = noise.len();
                if let Some(gp) = self.acc(grads, *p) {
                    for k in 0..k_n {
                        let d = gy[k] / LN_2;
                        for j in 0..k_n {
                            let mut g = 1.0 / total[k];
                            if j != k {
                                g -= 1.0 / interf[k];
                            }
                            gp[j * k_n + k] += d * g;
                        }
                    }
                }
            }
        }
    }
}

/// Below this many multiply-adds the packing in `dgemm` costs more than it
/// saves, when the operands allow direct dot products.
const SMALL_GEMM: usize = 32_768;

/// `C[m×n] += A[m×k] · B[k×n]` for row-major `C`; `A` and `B` are given
/// with explicit `[row, column]` strides so transposes cost nothing.
#[inline]
#[allow(clippy::too_many_arguments)]
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], sa: [usize; 2], b: &[f64], sb: [usize; 2], c: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * sa[0] + (k - 1) * sa[1]);
    assert!(b.len() > (k - 1) * sb[0] + (n - 1) * sb[1]);
    assert!(c.len() >= m * n);
    if m * k * n <= SMALL_GEMM && sa[1] == 1 && sb[0] == 1 {
        // both operands run contiguously along k: plain dot products
        for i in 0..m {
            let ar = &a[i * sa[0]..i * sa[0] + k];
            for j in 0..n {
                c[i * n + j] += dot_lanes(ar, &b[j * sb[1]..j * sb[1] + k]);
            }
        }
        return;
    }
    // SAFETY: the asserted extents keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa[0] as isize,
            sa[1] as isize,
            b.as_ptr(),
            sb[0] as isize,
            sb[1] as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dot product with eight independent partial sums, which vectorises.
#[inline]
fn dot_lanes(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
