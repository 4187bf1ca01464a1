//! SINR and sum-rate evaluators, feasibility projections and residuals.
//!
//! Differentiable versions work in stream order: for IC and IBC row `k` is
//! the variable serving UE `k`; for coop row `m·K + k` is `v_{m,k}`. Complex
//! rows are stored `[re_0..re_{N-1}, im_0..im_{N-1}]`. Channel coefficients
//! are divided by each UE's noise standard deviation so the rate kernel sees
//! unit noise.

use std::sync::Arc;

use num_complex::Complex64;

use crate::chansim::{inner, ScenarioInstance, ScenarioKind};
use crate::error::{Error, Result};
use crate::hetgraph::{join_complex, split_complex, NodePermutation};
use crate::numkernel::{LinkCoefficients, Tape, Tensor, Var};

/// Slack allowed on power constraints, watts.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    /// Bits/s/Hz per UE.
    pub rates: Vec<f64>,
    pub sum_rate: f64,
}

impl RateReport {
    fn from_sinr(sinr: Vec<f64>) -> Self {
        let rates: Vec<f64> = sinr.iter().map(|s| s.ln_1p() / std::f64::consts::LN_2).collect();
        let sum_rate = rates.iter().sum();
        Self { sinr, rates, sum_rate }
    }
}

/// A candidate solution for one instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Solution {
    /// IC: `[K, N]`, beam `v_k` of UE `k`.
    Beams(Vec<Complex64>),
    /// IBC: power of each equivalent TX node.
    Powers(Vec<f64>),
    /// Coop: `[M, K, N]`, beam `v_{m,k}`.
    CoopBeams(Vec<Complex64>),
}

impl Solution {
    /// Relabels the solution alongside [`ScenarioInstance::permute`].
    pub fn permute(&self, inst: &ScenarioInstance, p: &NodePermutation) -> Result<Solution> {
        let (pt, pr) = (p.pi_tx(), p.pi_rx());
        let n = inst.n_antennas;
        let k_n = inst.n_ue;
        Ok(match self {
            Solution::Beams(v) => {
                let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
                for k in 0..k_n {
                    out[pr[k] * n..(pr[k] + 1) * n].copy_from_slice(&v[k * n..(k + 1) * n]);
                }
                Solution::Beams(out)
            }
            Solution::Powers(pw) => {
                let mut out = vec![0.0; pw.len()];
                for (m, &x) in pw.iter().enumerate() {
                    out[pt[m]] = x;
                }
                Solution::Powers(out)
            }
            Solution::CoopBeams(v) => {
                let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
                for m in 0..inst.n_bs {
                    for k in 0..k_n {
                        let (src, dst) = ((m * k_n + k) * n, (pt[m] * k_n + pr[k]) * n);
                        out[dst..dst + n].copy_from_slice(&v[src..src + n]);
                    }
                }
                Solution::CoopBeams(out)
            }
        })
    }
}

fn check_kind(inst: &ScenarioInstance, kind: ScenarioKind) -> Result<()> {
    if inst.kind != kind {
        return Err(Error::invalid(format!(
            "expected a '{}' instance, got '{}'",
            kind.name(),
            inst.kind.name()
        )));
    }
    Ok(())
}

fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

fn sinr_from_power(p: &[f64], noise: &[f64]) -> Vec<f64> {
    // p[j * K + k]: power of stream j received at UE k
    let k_n = noise.len();
    (0..k_n)
        .map(|k| {
            let interf: f64 = (0..k_n).filter(|&j| j != k).map(|j| p[j * k_n + k]).sum();
            p[k * k_n + k] / (interf + noise[k])
        })
        .collect()
}

pub fn sinr_ic(inst: &ScenarioInstance, v: &[Complex64]) -> Result<RateReport> {
    check_kind(inst, ScenarioKind::Ic)?;
    let (k_n, n) = (inst.n_ue, inst.n_antennas);
    if v.len() != k_n * n {
        return Err(Error::invalid(format!(
            "expected {} beam entries, got {}",
            k_n * n,
            v.len()
        )));
    }
    for k in 0..k_n {
        let pw = norm_sqr(&v[k * n..(k + 1) * n]);
        let budget = inst.budgets[inst.serving[k]];
        if pw > budget + FEASIBILITY_TOL {
            return Err(Error::Precondition(format!(
                "beam {k} uses {pw} W of a {budget} W budget"
            )));
        }
    }
    let mut p = vec![0.0; k_n * k_n];
    for j in 0..k_n {
        let vj = &v[j * n..(j + 1) * n];
        for k in 0..k_n {
            p[j * k_n + k] = inner(inst.channel(inst.serving[j], k), vj).norm_sqr();
        }
    }
    Ok(RateReport::from_sinr(sinr_from_power(&p, &inst.noise)))
}

/// `p` holds the power of each equivalent TX node.
pub fn sinr_ibc(inst: &ScenarioInstance, p: &[f64]) -> Result<RateReport> {
    check_kind(inst, ScenarioKind::Ibc)?;
    let d = inst.ibc()?;
    let k_n = inst.n_ue;
    if p.len() != k_n {
        return Err(Error::invalid(format!("expected {k_n} powers, got {}", p.len())));
    }
    if let Some(x) = p.iter().find(|&&x| !(x >= 0.0)) {
        return Err(Error::Precondition(format!("negative or undefined power {x}")));
    }
    let mut used = vec![0.0; d.n_cells];
    for (m, &x) in p.iter().enumerate() {
        used[d.tx_cell[m]] += x;
    }
    for (b, &u) in used.iter().enumerate() {
        if u > inst.budgets[b] + FEASIBILITY_TOL {
            return Err(Error::Precondition(format!(
                "cell {b} uses {u} W of a {} W budget",
                inst.budgets[b]
            )));
        }
    }
    let mut pm = vec![0.0; k_n * k_n];
    for j in 0..k_n {
        let m = inst.serving[j];
        for k in 0..k_n {
            pm[j * k_n + k] = d.gains[m * k_n + k].powi(2) * p[m];
        }
    }
    Ok(RateReport::from_sinr(sinr_from_power(&pm, &inst.noise)))
}

/// `v` is `[M, K, N]` with `v[m, k]` the beam of BS `m` for UE `k`.
pub fn sinr_coop(inst: &ScenarioInstance, v: &[Complex64]) -> Result<RateReport> {
    check_kind(inst, ScenarioKind::Coop)?;
    let (m_n, k_n, n) = (inst.n_bs, inst.n_ue, inst.n_antennas);
    if v.len() != m_n * k_n * n {
        return Err(Error::invalid(format!(
            "expected {} beam entries, got {}",
            m_n * k_n * n,
            v.len()
        )));
    }
    for m in 0..m_n {
        let pw = norm_sqr(&v[m * k_n * n..(m + 1) * k_n * n]);
        if pw > inst.budgets[m] + FEASIBILITY_TOL {
            return Err(Error::Precondition(format!(
                "BS {m} uses {pw} W of a {} W budget",
                inst.budgets[m]
            )));
        }
    }
    let mut p = vec![0.0; k_n * k_n];
    for j in 0..k_n {
        for k in 0..k_n {
            let a: Complex64 = (0..m_n)
                .map(|m| inner(inst.channel(m, k), &v[(m * k_n + j) * n..(m * k_n + j + 1) * n]))
                .sum();
            p[j * k_n + k] = a.norm_sqr();
        }
    }
    Ok(RateReport::from_sinr(sinr_from_power(&p, &inst.noise)))
}

pub fn evaluate(inst: &ScenarioInstance, s: &Solution) -> Result<RateReport> {
    match (inst.kind, s) {
        (ScenarioKind::Ic, Solution::Beams(v)) => sinr_ic(inst, v),
        (ScenarioKind::Ibc, Solution::Powers(p)) => sinr_ibc(inst, p),
        (ScenarioKind::Coop, Solution::CoopBeams(v)) => sinr_coop(inst, v),
        (kind, _) => Err(Error::invalid(format!(
            "solution type does not match a '{}' instance",
            kind.name()
        ))),
    }
}

/// Largest power-constraint violation (0 when feasible); negative IBC
/// powers count as violations too.
pub fn constraint_residual(inst: &ScenarioInstance, s: &Solution) -> Result<f64> {
    let n = inst.n_antennas;
    let k_n = inst.n_ue;
    let worst = |over: &mut dyn Iterator<Item = f64>| over.fold(0.0f64, |a, b| a.max(b));
    Ok(match (inst.kind, s) {
        (ScenarioKind::Ic, Solution::Beams(v)) if v.len() == k_n * n => {
            worst(&mut (0..k_n).map(|k| norm_sqr(&v[k * n..(k + 1) * n]) - inst.budgets[inst.serving[k]]))
        }
        (ScenarioKind::Ibc, Solution::Powers(p)) if p.len() == k_n => {
            let d = inst.ibc()?;
            let mut used = vec![0.0; d.n_cells];
            let mut neg: f64 = 0.0;
            for (m, &x) in p.iter().enumerate() {
                used[d.tx_cell[m]] += x;
                neg = neg.max(-x);
            }
            worst(&mut used.iter().zip(&inst.budgets).map(|(u, b)| u - b)).max(neg)
        }
        (ScenarioKind::Coop, Solution::CoopBeams(v)) if v.len() == inst.n_bs * k_n * n => {
            worst(&mut (0..inst.n_bs).map(|m| norm_sqr(&v[m * k_n * n..(m + 1) * k_n * n]) - inst.budgets[m]))
        }
        _ => return Err(Error::invalid("solution does not match the instance")),
    })
}

/// Precomputed tape plumbing for one instance: normalisation and sum rate.
#[derive(Debug, Clone)]
pub struct TapeObjective {
    kind: ScenarioKind,
    n_antennas: usize,
    n_bs: usize,
    n_ue: usize,
    /// IC/coop link coefficients (noise-normalised).
    links: Option<Arc<LinkCoefficients>>,
    /// IBC: `C[j, k] = g[m1(j), k]² / σ_k²`.
    ibc_gain: Option<Tensor>,
    /// IBC: budget of the cell serving each stream, and streams per cell.
    ibc_stream_budget: Vec<f64>,
    ibc_groups: Arc<[Vec<usize>]>,
    /// Projection radii: per stream (IC) or per BS (coop).
    radius: Vec<f64>,
    budgets: Vec<f64>,
}

impl TapeObjective {
    pub fn new(inst: &ScenarioInstance) -> Result<Self> {
        inst.validate()?;
        let (m_n, k_n, n) = (inst.n_bs, inst.n_ue, inst.n_antennas);
        let sigma: Vec<f64> = inst.noise.iter().map(|s| s.sqrt()).collect();
        let mut obj = Self {
            kind: inst.kind,
            n_antennas: n,
            n_bs: m_n,
            n_ue: k_n,
            links: None,
            ibc_gain: None,
            ibc_stream_budget: Vec::new(),
            ibc_groups: Arc::from(Vec::new()),
            radius: Vec::new(),
            budgets: inst.budgets.clone(),
        };
        match inst.kind {
            ScenarioKind::Ic => {
                let mut coef = Vec::with_capacity(k_n * k_n * n);
                for j in 0..k_n {
                    for k in 0..k_n {
                        coef.extend(inst.channel(inst.serving[j], k).iter().map(|h| h / sigma[k]));
                    }
                }
                obj.links = Some(Arc::new(LinkCoefficients {
                    users: k_n,
                    receivers: k_n,
                    blocks: 1,
                    width: n,
                    coef,
                    rows: (0..k_n).map(|j| vec![j]).collect(),
                }));
                obj.radius = (0..k_n).map(|k| inst.budgets[inst.serving[k]].sqrt()).collect();
            }
            ScenarioKind::Coop => {
                let mut coef = Vec::with_capacity(k_n * k_n * m_n * n);
                for _j in 0..k_n {
                    for k in 0..k_n {
                        for m in 0..m_n {
                            coef.extend(inst.channel(m, k).iter().map(|h| h / sigma[k]));
                        }
                    }
                }
                obj.links = Some(Arc::new(LinkCoefficients {
                    users: k_n,
                    receivers: k_n,
                    blocks: m_n,
                    width: n,
                    coef,
                    rows: (0..k_n).map(|j| (0..m_n).map(|m| m * k_n + j).collect()).collect(),
                }));
                obj.radius = inst.budgets.iter().map(|p| p.sqrt()).collect();
            }
            ScenarioKind::Ibc => {
                let d = inst.ibc()?;
                let mut c = vec![0.0; k_n * k_n];
                for j in 0..k_n {
                    let m = inst.serving[j];
                    for k in 0..k_n {
                        c[j * k_n + k] = d.gains[m * k_n + k].powi(2) / inst.noise[k];
                    }
                }
                obj.ibc_gain = Some(Tensor::matrix(k_n, k_n, c)?);
                let cell_of_stream: Vec<usize> = (0..k_n).map(|j| d.tx_cell[inst.serving[j]]).collect();
                obj.ibc_stream_budget = cell_of_stream.iter().map(|&b| inst.budgets[b]).collect();
                obj.ibc_groups = (0..d.n_cells)
                    .map(|b| (0..k_n).filter(|&j| cell_of_stream[j] == b).collect())
                    .collect();
            }
        }
        Ok(obj)
    }

    pub fn kind(&self) -> ScenarioKind {
        self.kind
    }

    /// Shape of the stream-ordered variable the objective consumes.
    pub fn var_shape(&self) -> [usize; 2] {
        match self.kind {
            ScenarioKind::Ic => [self.n_ue, 2 * self.n_antennas],
            ScenarioKind::Ibc => [self.n_ue, 1],
            ScenarioKind::Coop => [self.n_bs * self.n_ue, 2 * self.n_antennas],
        }
    }

    /// Scale-down projection onto the feasible set (IBC: logistic squashing
    /// to `(0, P_b)` first).
    pub fn normalize<'a>(&self, tape: &mut Tape<'a>, raw: Var) -> Result<Var> {
        let shape = tape.value(raw).shape().to_vec();
        let expect = self.var_shape();
        if tape.value(raw).len() != expect[0] * expect[1] {
            return Err(Error::invalid(format!(
                "raw variables {shape:?} do not match expected {expect:?}"
            )));
        }
        match self.kind {
            ScenarioKind::Ic => tape.row_scale_down(raw, self.radius.clone()),
            ScenarioKind::Coop => {
                let flat = tape.reshape(raw, vec![self.n_bs, self.n_ue * 2 * self.n_antennas])?;
                let scaled = tape.row_scale_down(flat, self.radius.clone())?;
                tape.reshape(scaled, vec![expect[0], expect[1]])
            }
            ScenarioKind::Ibc => {
                let s = tape.sigmoid(raw);
                let b = tape.constant(Tensor::matrix(self.n_ue, 1, self.ibc_stream_budget.clone())?);
                let p = tape.mul(s, b)?;
                let budgets = self
                    .ibc_groups
                    .iter()
                    .map(|g| g.first().map_or(1.0, |&j| self.ibc_stream_budget[j]))
                    .collect();
                tape.sum_scale_down(p, self.ibc_groups.clone(), budgets)
            }
        }
    }

    /// Per-UE rates of feasible stream-ordered variables.
    pub fn rates<'a>(&self, tape: &mut Tape<'a>, vars: Var) -> Result<Var> {
        let power = match self.kind {
            ScenarioKind::Ic | ScenarioKind::Coop => tape.cross_gain_power(vars, self.links.clone().expect("links"))?,
            ScenarioKind::Ibc => tape.scale_rows_const(vars, self.ibc_gain.clone().expect("gains"))?,
        };
        tape.sinr_rates(power, vec![1.0; self.n_ue])
    }

    pub fn sum_rate<'a>(&self, tape: &mut Tape<'a>, vars: Var) -> Result<Var> {
        let r = self.rates(tape, vars)?;
        Ok(tape.sum(r))
    }

    /// Reads stream-ordered variables back into a [`Solution`].
    pub fn solution(&self, inst: &ScenarioInstance, vars: &Tensor) -> Result<Solution> {
        let expect = self.var_shape();
        if vars.len() != expect[0] * expect[1] {
            return Err(Error::invalid("variables do not match the instance"));
        }
        let d = vars.data();
        Ok(match self.kind {
            ScenarioKind::Ic | ScenarioKind::Coop => {
                let w = expect[1];
                let mut out = Vec::with_capacity(d.len() / 2);
                for row in d.chunks(w) {
                    out.extend(join_complex(row)?);
                }
                if self.kind == ScenarioKind::Ic {
                    Solution::Beams(out)
                } else {
                    Solution::CoopBeams(out)
                }
            }
            ScenarioKind::Ibc => {
                let mut p = vec![0.0; self.n_ue];
                for (j, &x) in d.iter().enumerate() {
                    p[inst.serving[j]] = x;
                }
                Solution::Powers(p)
            }
        })
    }

    /// Inverse of [`TapeObjective::solution`].
    pub fn to_vars(&self, inst: &ScenarioInstance, s: &Solution) -> Result<Tensor> {
        let [r, c] = self.var_shape();
        let n = self.n_antennas;
        let data = match (self.kind, s) {
            (ScenarioKind::Ic, Solution::Beams(v)) | (ScenarioKind::Coop, Solution::CoopBeams(v))
                if v.len() == r * n =>
            {
                v.chunks(n).flat_map(split_complex).collect()
            }
            (ScenarioKind::Ibc, Solution::Powers(p)) if p.len() == r => (0..r).map(|j| p[inst.serving[j]]).collect(),
            _ => return Err(Error::invalid("solution does not match the instance")),
        };
        Tensor::matrix(r, c, data)
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }
}

fn run_normalize(inst: &ScenarioInstance, raw: Tensor) -> Result<Solution> {
    let obj = TapeObjective::new(inst)?;
    let mut tape = Tape::new();
    let v = tape.constant(raw);
    let y = obj.normalize(&mut tape, v)?;
    obj.solution(inst, tape.value(y))
}

/// `v_k ← ṽ_k · min(1, √P/‖ṽ_k‖)` for raw IC beams `[K, N]`.
pub fn normalize_ic(inst: &ScenarioInstance, raw: &[Complex64]) -> Result<Vec<Complex64>> {
    check_kind(inst, ScenarioKind::Ic)?;
    let obj = TapeObjective::new(inst)?;
    let t = obj.to_vars(inst, &Solution::Beams(raw.to_vec()))?;
    match run_normalize(inst, t)? {
        Solution::Beams(v) => Ok(v),
        _ => unreachable!(),
    }
}

/// Logistic squashing to `(0, P_b)` then per-cell rescaling. `raw` is per TX node.
pub fn normalize_ibc(inst: &ScenarioInstance, raw: &[f64]) -> Result<Vec<f64>> {
    check_kind(inst, ScenarioKind::Ibc)?;
    let obj = TapeObjective::new(inst)?;
    let t = obj.to_vars(inst, &Solution::Powers(raw.to_vec()))?;
    match run_normalize(inst, t)? {
        Solution::Powers(p) => Ok(p),
        _ => unreachable!(),
    }
}

/// Per-BS scale-down of raw coop beams `[M, K, N]`.
pub fn normalize_coop(inst: &ScenarioInstance, raw: &[Complex64]) -> Result<Vec<Complex64>> {
    check_kind(inst, ScenarioKind::Coop)?;
    let obj = TapeObjective::new(inst)?;
    let t = obj.to_vars(inst, &Solution::CoopBeams(raw.to_vec()))?;
    match run_normalize(inst, t)? {
        Solution::CoopBeams(v) => Ok(v),
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests;
