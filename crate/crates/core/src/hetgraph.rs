//! Bipartite TX/RX graph data model.
//!
//! Edges are stored densely: an `M×K` presence mask plus an `M×K×d_E`
//! feature tensor whose fibers are zero wherever the edge is absent. Complex
//! features are stored already split into `[re..., im...]` halves.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::container::{Container, Value};
use crate::error::{Error, Result};
use crate::numkernel::{Segments, Tensor};

/// Splits complex values into `[re_0, .., re_{n-1}, im_0, .., im_{n-1}]`.
pub fn split_complex(values: &[num_complex::Complex64]) -> Vec<f64> {
    let mut out: Vec<f64> = values.iter().map(|c| c.re).collect();
    out.extend(values.iter().map(|c| c.im));
    out
}

/// Inverse of [`split_complex`].
pub fn join_complex(values: &[f64]) -> Result<Vec<num_complex::Complex64>> {
    if !values.len().is_multiple_of(2) {
        return Err(Error::invalid("split complex vector has odd length"));
    }
    let n = values.len() / 2;
    Ok((0..n)
        .map(|i| num_complex::Complex64::new(values[i], values[n + i]))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HetGraph {
    m: usize,
    k: usize,
    edge_mask: Vec<bool>,
    f_tx: Tensor,
    f_rx: Tensor,
    e: Tensor,
}

impl HetGraph {
    /// Builds a graph, zeroing edge fibers where the mask is false.
    ///
    /// `f_tx` is `[M, d_TX]`, `f_rx` is `[K, d_RX]`, `e` is `[M, K, d_E]`.
    pub fn new(edge_mask: Vec<bool>, f_tx: Tensor, f_rx: Tensor, mut e: Tensor) -> Result<Self> {
        if f_tx.shape().len() != 2 || f_rx.shape().len() != 2 || e.shape().len() != 3 {
            return Err(Error::invalid("graph tensors must be [M,d_TX], [K,d_RX], [M,K,d_E]"));
        }
        let (m, k) = (f_tx.shape()[0], f_rx.shape()[0]);
        if m == 0 || k == 0 {
            return Err(Error::invalid("graph needs at least one TX and one RX node"));
        }
        if e.shape()[0] != m || e.shape()[1] != k {
            return Err(Error::invalid(format!(
                "edge tensor {:?} does not match M={m}, K={k}",
                e.shape()
            )));
        }
        if edge_mask.len() != m * k {
            return Err(Error::invalid(format!(
                "edge mask of length {} for M·K = {}",
                edge_mask.len(),
                m * k
            )));
        }
        let de = e.shape()[2];
        for (idx, &present) in edge_mask.iter().enumerate() {
            if !present {
                e.data_mut()[idx * de..(idx + 1) * de].fill(0.0);
            }
        }
        Ok(Self {
            m,
            k,
            edge_mask,
            f_tx,
            f_rx,
            e,
        })
    }

    /// Complete bipartite graph.
    pub fn complete(f_tx: Tensor, f_rx: Tensor, e: Tensor) -> Result<Self> {
        let n = f_tx.shape().first().copied().unwrap_or(0) * f_rx.shape().first().copied().unwrap_or(0);
        Self::new(vec![true; n], f_tx, f_rx, e)
    }

    pub fn num_tx(&self) -> usize {
        self.m
    }

    pub fn num_rx(&self) -> usize {
        self.k
    }

    pub fn d_tx(&self) -> usize {
        self.f_tx.shape()[1]
    }

    pub fn d_rx(&self) -> usize {
        self.f_rx.shape()[1]
    }

    pub fn d_e(&self) -> usize {
        self.e.shape()[2]
    }

    pub fn f_tx(&self) -> &Tensor {
        &self.f_tx
    }

    pub fn f_rx(&self) -> &Tensor {
        &self.f_rx
    }

    pub fn edges(&self) -> &Tensor {
        &self.e
    }

    pub fn edge_mask(&self) -> &[bool] {
        &self.edge_mask
    }

    pub fn has_edge(&self, m: usize, k: usize) -> bool {
        m < self.m && k < self.k && self.edge_mask[m * self.k + k]
    }

    pub fn edge_fiber(&self, m: usize, k: usize) -> &[f64] {
        let de = self.d_e();
        let idx = m * self.k + k;
        &self.e.data()[idx * de..(idx + 1) * de]
    }

    /// Edge features as an `[M·K, d_E]` matrix, row `m·K + k`.
    pub fn edge_rows(&self) -> Tensor {
        self.e
            .clone()
            .reshape(vec![self.m * self.k, self.d_e()])
            .expect("edge reshape")
    }

    fn check_tx(&self, m: usize) -> Result<()> {
        if m >= self.m {
            return Err(Error::invalid(format!("TX index {m} out of range (M={})", self.m)));
        }
        Ok(())
    }

    fn check_rx(&self, k: usize) -> Result<()> {
        if k >= self.k {
            return Err(Error::invalid(format!("RX index {k} out of range (K={})", self.k)));
        }
        Ok(())
    }

    /// RX nodes adjacent to TX `m`.
    pub fn tx_neighbors(&self, m: usize) -> Result<Vec<usize>> {
        self.check_tx(m)?;
        Ok((0..self.k).filter(|&k| self.has_edge(m, k)).collect())
    }

    /// TX nodes adjacent to RX `k`.
    pub fn rx_neighbors(&self, k: usize) -> Result<Vec<usize>> {
        self.check_rx(k)?;
        Ok((0..self.m).filter(|&m| self.has_edge(m, k)).collect())
    }

    /// Neighboring edges of `(m, k)`: those sharing TX `m`, then those sharing RX `k`.
    #[allow(clippy::type_complexity)]
    pub fn edge_neighbors(&self, m: usize, k: usize) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
        self.check_tx(m)?;
        self.check_rx(k)?;
        if !self.has_edge(m, k) {
            return Err(Error::invalid(format!("edge ({m}, {k}) is not present")));
        }
        let tx_side = self
            .tx_neighbors(m)?
            .into_iter()
            .filter(|&k1| k1 != k)
            .map(|k1| (m, k1))
            .collect();
        let rx_side = self
            .rx_neighbors(k)?
            .into_iter()
            .filter(|&m1| m1 != m)
            .map(|m1| (m1, k))
            .collect();
        Ok((tx_side, rx_side))
    }

    pub fn topology(&self) -> Topology {
        Topology::new(self.m, self.k, &self.edge_mask)
    }

    pub fn to_container(&self, prefix: &str, c: &mut Container) {
        c.push(format!("{prefix}f_tx"), Value::from_tensor(&self.f_tx));
        c.push(format!("{prefix}f_rx"), Value::from_tensor(&self.f_rx));
        c.push(format!("{prefix}e"), Value::from_tensor(&self.e));
        c.push(
            format!("{prefix}edge_mask"),
            Value::U64 {
                shape: vec![self.m, self.k],
                data: self.edge_mask.iter().map(|&b| b as u64).collect(),
            },
        );
    }

    pub fn from_container(prefix: &str, c: &Container) -> Result<Self> {
        let f_tx = c.tensor(&format!("{prefix}f_tx"))?;
        let f_rx = c.tensor(&format!("{prefix}f_rx"))?;
        let e = c.tensor(&format!("{prefix}e"))?;
        let (_, mask) = c.u64s(&format!("{prefix}edge_mask"))?;
        let mask: Vec<bool> = mask.iter().map(|&v| v != 0).collect();
        let g = Self::new(mask, f_tx, f_rx, e.clone())?;
        if g.e != e {
            return Err(Error::format("edge fiber present where the mask is false"));
        }
        Ok(g)
    }
}

/// Optimised variables on TX nodes, RX nodes and edges (stored real widths).
#[derive(Debug, Clone, PartialEq)]
pub struct VariableBundle {
    /// `[M, w_TX]`
    pub s_tx: Tensor,
    /// `[K, w_RX]`
    pub s_rx: Tensor,
    /// `[M, K, w_E]`
    pub xi: Tensor,
}

impl VariableBundle {
    pub fn new(s_tx: Tensor, s_rx: Tensor, xi: Tensor) -> Result<Self> {
        if s_tx.shape().len() != 2 || s_rx.shape().len() != 2 || xi.shape().len() != 3 {
            return Err(Error::invalid("variable tensors must be [M,w], [K,w], [M,K,w]"));
        }
        if xi.shape()[0] != s_tx.shape()[0] || xi.shape()[1] != s_rx.shape()[0] {
            return Err(Error::invalid("edge variables do not match node counts"));
        }
        Ok(Self { s_tx, s_rx, xi })
    }

    pub fn num_tx(&self) -> usize {
        self.s_tx.shape()[0]
    }

    pub fn num_rx(&self) -> usize {
        self.s_rx.shape()[0]
    }

    pub fn xi_fiber(&self, m: usize, k: usize) -> &[f64] {
        let w = self.xi.shape()[2];
        let idx = m * self.num_rx() + k;
        &self.xi.data()[idx * w..(idx + 1) * w]
    }

    pub fn max_abs_diff(&self, other: &VariableBundle) -> f64 {
        self.s_tx
            .max_abs_diff(&other.s_tx)
            .max(self.s_rx.max_abs_diff(&other.s_rx))
            .max(self.xi.max_abs_diff(&other.xi))
    }
}

/// Pair of relabelings: TX `m` becomes `pi_tx[m]`, RX `k` becomes `pi_rx[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePermutation {
    pi_tx: Vec<usize>,
    pi_rx: Vec<usize>,
}

fn is_bijection(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &i in p {
        if i >= p.len() || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

fn invert(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &j) in p.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

impl NodePermutation {
    pub fn new(pi_tx: Vec<usize>, pi_rx: Vec<usize>) -> Result<Self> {
        if !is_bijection(&pi_tx) || !is_bijection(&pi_rx) {
            return Err(Error::invalid("node permutation is not a bijection"));
        }
        Ok(Self { pi_tx, pi_rx })
    }

    pub fn identity(m: usize, k: usize) -> Self {
        Self {
            pi_tx: (0..m).collect(),
            pi_rx: (0..k).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Self {
        let mut pi_tx: Vec<usize> = (0..m).collect();
        let mut pi_rx: Vec<usize> = (0..k).collect();
        pi_tx.shuffle(rng);
        pi_rx.shuffle(rng);
        Self { pi_tx, pi_rx }
    }

    pub fn pi_tx(&self) -> &[usize] {
        &self.pi_tx
    }

    pub fn pi_rx(&self) -> &[usize] {
        &self.pi_rx
    }

    pub fn inverse(&self) -> Self {
        Self {
            pi_tx: invert(&self.pi_tx),
            pi_rx: invert(&self.pi_rx),
        }
    }

    fn check(&self, m: usize, k: usize) -> Result<()> {
        if self.pi_tx.len() != m || self.pi_rx.len() != k {
            return Err(Error::invalid(format!(
                "permutation sizes ({}, {}) do not match graph ({m}, {k})",
                self.pi_tx.len(),
                self.pi_rx.len()
            )));
        }
        Ok(())
    }
}

/// Moves row `i` of `t` to row `pi[i]`.
pub(crate) fn permute_rows(t: &Tensor, pi: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(t.shape());
    for (i, &j) in pi.iter().enumerate() {
        out.row_mut(j).copy_from_slice(t.row(i));
    }
    out
}

/// Moves fiber `(m, k)` of an `[M, K, w]` tensor to `(pi_tx[m], pi_rx[k])`.
pub(crate) fn permute_fibers(t: &Tensor, pi_tx: &[usize], pi_rx: &[usize]) -> Tensor {
    let (m_n, k_n, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut out = Tensor::zeros(t.shape());
    for m in 0..m_n {
        for k in 0..k_n {
            let src = (m * k_n + k) * w;
            let dst = (pi_tx[m] * k_n + pi_rx[k]) * w;
            out.data_mut()[dst..dst + w].copy_from_slice(&t.data()[src..src + w]);
        }
    }
    out
}

pub(crate) fn permute_mask(mask: &[bool], k_n: usize, pi_tx: &[usize], pi_rx: &[usize]) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for (m, &pm) in pi_tx.iter().enumerate() {
        for (k, &pk) in pi_rx.iter().enumerate() {
            out[pm * k_n + pk] = mask[m * k_n + k];
        }
    }
    out
}

pub fn permute_graph(g: &HetGraph, p: &NodePermutation) -> Result<HetGraph> {
    p.check(g.m, g.k)?;
    Ok(HetGraph {
        m: g.m,
        k: g.k,
        edge_mask: permute_mask(&g.edge_mask, g.k, &p.pi_tx, &p.pi_rx),
        f_tx: permute_rows(&g.f_tx, &p.pi_tx),
        f_rx: permute_rows(&g.f_rx, &p.pi_rx),
        e: permute_fibers(&g.e, &p.pi_tx, &p.pi_rx),
    })
}

pub fn permute_vars(v: &VariableBundle, p: &NodePermutation) -> Result<VariableBundle> {
    p.check(v.num_tx(), v.num_rx())?;
    Ok(VariableBundle {
        s_tx: permute_rows(&v.s_tx, &p.pi_tx),
        s_rx: permute_rows(&v.s_rx, &p.pi_rx),
        xi: permute_fibers(&v.xi, &p.pi_tx, &p.pi_rx),
    })
}

/// Row-index plumbing shared by every layer of one forward pass.
///
/// Edge rows are numbered `m·K + k`. In `edge_segments`, indices below `M·K`
/// refer to TX-side messages and indices `M·K + r` to RX-side messages.
#[derive(Debug, Clone)]
pub struct Topology {
    pub m: usize,
    pub k: usize,
    pub mask: Arc<[bool]>,
    pub tx_of_row: Arc<[usize]>,
    pub rx_of_row: Arc<[usize]>,
    pub tx_segments: Segments,
    pub rx_segments: Segments,
    pub edge_segments: Segments,
}

impl Topology {
    pub fn new(m: usize, k: usize, mask: &[bool]) -> Self {
        let n = m * k;
        let tx_of_row: Vec<usize> = (0..n).map(|r| r / k).collect();
        let rx_of_row: Vec<usize> = (0..n).map(|r| r % k).collect();
        let tx_segments: Vec<Vec<usize>> = (0..m)
            .map(|mi| (0..k).map(|ki| mi * k + ki).filter(|&r| mask[r]).collect())
            .collect();
        let rx_segments: Vec<Vec<usize>> = (0..k)
            .map(|ki| (0..m).map(|mi| mi * k + ki).filter(|&r| mask[r]).collect())
            .collect();
        let edge_segments: Vec<Vec<usize>> = (0..n)
            .map(|r| {
                if !mask[r] {
                    return Vec::new();
                }
                let (mi, ki) = (r / k, r % k);
                let tx_side = tx_segments[mi].iter().copied().filter(|&s| s != r);
                let rx_side = rx_segments[ki].iter().copied().filter(|&s| s != r).map(|s| n + s);
                tx_side.chain(rx_side).collect()
            })
            .collect();
        Self {
            m,
            k,
            mask: mask.into(),
            tx_of_row: tx_of_row.into(),
            rx_of_row: rx_of_row.into(),
            tx_segments: tx_segments.into(),
            rx_segments: rx_segments.into(),
            edge_segments: edge_segments.into(),
        }
    }
}
