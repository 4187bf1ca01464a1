//! Classical baselines: WMMSE for all three scenarios and gradient
//! projection for cooperative beamforming.
//!
//! WMMSE alternates the MMSE receiver `u_k = a_kk / (σ_k² + Σ_j |a_jk|²)`,
//! the weight `w_k = 1 / (1 − u_k* a_kk)` and a beam step that minimises the
//! weighted MSE under the power constraints, where `a_jk` is the amplitude of
//! stream `j` at UE `k`. Each step is an exact (or block-exact) minimiser, so
//! the sum rate never decreases.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chansim::{inner, ScenarioInstance, ScenarioKind};
use crate::error::{Error, Result};
use crate::numkernel::Tape;
use crate::objectives::{evaluate, RateReport, Solution, TapeObjective};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once the sum rate moves less than this between iterations.
    pub tol: f64,
    /// Relative slack on the power constraint when bisecting a multiplier.
    pub bisection_tol: f64,
    /// Block sweeps per cooperative beam step.
    pub max_block_sweeps: usize,
    /// First trial step of gradient projection, in budget-normalised units.
    pub gp_initial_step: f64,
    /// Backtracking gives up below this step.
    pub gp_min_step: f64,
    /// Random start instead of full-power matched filters.
    pub init_seed: Option<u64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-6,
            bisection_tol: 1e-10,
            max_block_sweeps: 50,
            gp_initial_step: 1.0,
            gp_min_step: 1e-12,
            init_seed: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("tol", self.tol),
            ("bisection_tol", self.bisection_tol),
            ("gp_initial_step", self.gp_initial_step),
            ("gp_min_step", self.gp_min_step),
        ];
        if let Some((name, v)) = pos.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if self.max_iters == 0 || self.max_block_sweeps == 0 {
            return Err(Error::Config("iteration limits must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutput {
    pub solution: Solution,
    pub report: RateReport,
    /// Sum rate at the starting point, then after every iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Gradient projection only: backtracking collapsed.
    pub stagnated: bool,
}

impl SolverOutput {
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Wmmse,
    Gp,
}

impl Baseline {
    pub fn parse(s: &str) -> Result<Option<Self>> {
        match s {
            "wmmse" => Ok(Some(Baseline::Wmmse)),
            "gp" => Ok(Some(Baseline::Gp)),
            "none" => Ok(None),
            _ => Err(Error::Config(format!("unknown baseline '{s}' (wmmse, gp, none)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Wmmse => "wmmse",
            Baseline::Gp => "gp",
        }
    }
}

/// Runs the named baseline for the instance's scenario.
pub fn solve(b: Baseline, inst: &ScenarioInstance, cfg: &SolverConfig) -> Result<SolverOutput> {
    match (b, inst.kind) {
        (Baseline::Wmmse, ScenarioKind::Ic) => wmmse_ic(inst, cfg),
        (Baseline::Wmmse, ScenarioKind::Ibc) => wmmse_ibc_power(inst, cfg),
        (Baseline::Wmmse, ScenarioKind::Coop) => wmmse_coop(inst, cfg),
        (Baseline::Gp, ScenarioKind::Coop) => gp_coop(inst, cfg),
        (Baseline::Gp, kind) => Err(Error::Config(format!(
            "gradient projection is only provided for coop, not '{}'",
            kind.name()
        ))),
    }
}

type CVec = DVector<Complex64>;

fn cvec(s: &[Complex64]) -> CVec {
    DVector::from_column_slice(s)
}

fn check(inst: &ScenarioInstance, kind: ScenarioKind, cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    inst.validate()?;
    if inst.kind != kind {
        return Err(Error::invalid(format!(
            "expected a '{}' instance, got '{}'",
            kind.name(),
            inst.kind.name()
        )));
    }
    Ok(())
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let v: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let norm = v
        .iter()
        .map(|c| c.norm_sqr())
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    v.into_iter().map(|c| c / norm).collect()
}

fn unit(h: &[Complex64]) -> Vec<Complex64> {
    let norm = h.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        h.iter().map(|c| c / norm).collect()
    } else {
        vec![Complex64::new(0.0, 0.0); h.len()]
    }
}

/// `min Σ_k v_kᴴ A v_k − 2 Re(b_kᴴ v_k)` subject to `Σ_k ‖v_k‖² ≤ budget`,
/// solved through the eigendecomposition of the Hermitian `A` and bisection
/// on the shared multiplier.
fn ball_constrained_solve(a: &DMatrix<Complex64>, rhs: &[CVec], budget: f64, tol: f64) -> Result<Vec<CVec>> {
    let eig = SymmetricEigen::new(a.clone());
    let lam: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let lmax = lam.iter().copied().fold(0.0, f64::max);
    let floor = 1e-12 * lmax.max(f64::MIN_POSITIVE);
    let ut = eig.eigenvectors.adjoint();
    let coef: Vec<CVec> = rhs.iter().map(|b| &ut * b).collect();
    let weights: Vec<f64> = (0..lam.len())
        .map(|i| coef.iter().map(|c| c[i].norm_sqr()).sum())
        .collect();
    let total: f64 = weights.iter().sum();
    let power = |mu: f64| -> f64 {
        lam.iter()
            .zip(&weights)
            .map(|(&l, &w)| {
                if w <= 1e-300 * total.max(f64::MIN_POSITIVE) {
                    0.0
                } else if l + mu <= floor {
                    f64::INFINITY
                } else {
                    w / (l + mu).powi(2)
                }
            })
            .sum()
    };
    let mu = if power(0.0) <= budget {
        0.0
    } else {
        let mut hi = lmax.max(1e-300).max((total / budget).sqrt());
        let mut grow = 0;
        while power(hi) > budget {
            hi *= 2.0;
            grow += 1;
            if grow > 2000 {
                return Err(Error::Numerical("multiplier bracket did not close".into()));
            }
        }
        let mut lo = 0.0;
        for _ in 0..400 {
            if budget - power(hi) <= tol * budget {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if power(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let scale: Vec<f64> = lam
        .iter()
        .map(|&l| if l + mu <= floor { 0.0 } else { 1.0 / (l + mu) })
        .collect();
    let mut out: Vec<CVec> = coef
        .iter()
        .map(|c| {
            let d = CVec::from_iterator(c.len(), c.iter().zip(&scale).map(|(x, s)| x * *s));
            &eig.eigenvectors * d
        })
        .collect();
    let used: f64 = out.iter().map(|v| v.norm_squared()).sum();
    if !used.is_finite() {
        return Err(Error::Numerical("beam step produced non-finite values".into()));
    }
    if used > budget {
        let s = (budget / used).sqrt();
        out.iter_mut().for_each(|v| *v *= Complex64::new(s, 0.0));
    }
    Ok(out)
}

struct Loop {
    trace: Vec<f64>,
    converged: bool,
}

impl Loop {
    fn new(first: f64) -> Self {
        Self {
            trace: vec![first],
            converged: false,
        }
    }

    /// Records a rate; returns true once converged.
    fn push(&mut self, rate: f64, tol: f64) -> Result<bool> {
        if !rate.is_finite() {
            return Err(Error::Numerical(format!("sum rate became {rate}")));
        }
        let prev = *self.trace.last().expect("trace starts non-empty");
        self.trace.push(rate);
        self.converged = (rate - prev).abs() < tol;
        Ok(self.converged)
    }
}

fn finish(inst: &ScenarioInstance, solution: Solution, lp: Loop, stagnated: bool) -> Result<SolverOutput> {
    let report = evaluate(inst, &solution)?;
    Ok(SolverOutput {
        solution,
        report,
        trace: lp.trace,
        converged: lp.converged,
        stagnated,
    })
}

/// MMSE receivers and weights from the received amplitudes `a[j*K + k]`.
fn receivers(a: &[Complex64], noise: &[f64]) -> (Vec<Complex64>, Vec<f64>) {
    let k_n = noise.len();
    let mut u = Vec::with_capacity(k_n);
    let mut w = Vec::with_capacity(k_n);
    for k in 0..k_n {
        let total: f64 = noise[k] + (0..k_n).map(|j| a[j * k_n + k].norm_sqr()).sum::<f64>();
        let own = a[k * k_n + k];
        let uk = own / total;
        let err = (1.0 - (uk.conj() * own).re).max(f64::MIN_POSITIVE);
        u.push(uk);
        w.push(1.0 / err);
    }
    (u, w)
}

/// Single-antenna-receiver interference channel WMMSE with one multiplier
/// per beam.
pub fn wmmse_ic(inst: &ScenarioInstance, cfg: &SolverConfig) -> Result<SolverOutput> {
    check(inst, ScenarioKind::Ic, cfg)?;
    let (k_n, n) = (inst.n_ue, inst.n_antennas);
    let mut rng = cfg.init_seed.map(ChaCha8Rng::seed_from_u64);
    let h = |j: usize, k: usize| inst.channel(inst.serving[j], k);
    let mut v: Vec<Complex64> = Vec::with_capacity(k_n * n);
    for k in 0..k_n {
        let dir = match rng.as_mut() {
            Some(r) => random_unit(n, r),
            None => unit(h(k, k)),
        };
        let s = inst.budgets[inst.serving[k]].sqrt();
        v.extend(dir.into_iter().map(|c| c * s));
    }
    let rate = |v: &[Complex64]| evaluate(inst, &Solution::Beams(v.to_vec())).map(|r| r.sum_rate);
    let mut lp = Loop::new(rate(&v)?);
    for _ in 0..cfg.max_iters {
        let mut a = vec![Complex64::new(0.0, 0.0); k_n * k_n];
        for j in 0..k_n {
            for k in 0..k_n {
                a[j * k_n + k] = inner(h(j, k), &v[j * n..(j + 1) * n]);
            }
        }
        let (u, w) = receivers(&a, &inst.noise);
        for j in 0..k_n {
            let mut mat = DMatrix::<Complex64>::zeros(n, n);
            for k in 0..k_n {
                let hk = cvec(h(j, k));
                mat += &hk * hk.adjoint() * Complex64::new(w[k] * u[k].norm_sqr(), 0.0);
            }
            let b = cvec(h(j, j)) * (u[j] * w[j]);
            let sol = ball_constrained_solve(&mat, &[b], inst.budgets[inst.serving[j]], cfg.bisection_tol)?;
            v[j * n..(j + 1) * n].copy_from_slice(sol[0].as_slice());
        }
        if lp.push(rate(&v)?, cfg.tol)? {
            break;
        }
    }
    finish(inst, Solution::Beams(v), lp, false)
}

/// Scalar WMMSE over the zero-forcing gains with one bisected multiplier
/// per cell.
pub fn wmmse_ibc_power(inst: &ScenarioInstance, cfg: &SolverConfig) -> Result<SolverOutput> {
    check(inst, ScenarioKind::Ibc, cfg)?;
    let d = inst.ibc()?;
    let k_n = inst.n_ue;
    let g = |m: usize, k: usize| d.gains[m * k_n + k];
    let mut members = vec![Vec::new(); d.n_cells];
    for (m, &b) in d.tx_cell.iter().enumerate() {
        members[b].push(m);
    }
    // amplitude x_m = √p_m of each TX node
    let mut x: Vec<f64> = match cfg.init_seed {
        Some(seed) => {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..k_n).map(|_| r.random_range(0.0..1.0)).collect();
            let mut x = vec![0.0; k_n];
            for (b, ms) in members.iter().enumerate() {
                let s: f64 = ms.iter().map(|&m| raw[m]).sum::<f64>().max(f64::MIN_POSITIVE);
                for &m in ms {
                    x[m] = (inst.budgets[b] * raw[m] / s).sqrt();
                }
            }
            x
        }
        None => (0..k_n)
            .map(|m| (inst.budgets[d.tx_cell[m]] / members[d.tx_cell[m]].len() as f64).sqrt())
            .collect(),
    };
    let powers = |x: &[f64]| x.iter().map(|a| a * a).collect::<Vec<_>>();
    let rate = |x: &[f64]| evaluate(inst, &Solution::Powers(powers(x))).map(|r| r.sum_rate);
    let mut lp = Loop::new(rate(&x)?);
    for _ in 0..cfg.max_iters {
        let mut a = vec![Complex64::new(0.0, 0.0); k_n * k_n];
        for j in 0..k_n {
            let m = inst.serving[j];
            for k in 0..k_n {
                a[j * k_n + k] = Complex64::new(g(m, k) * x[m], 0.0);
            }
        }
        let (u, w) = receivers(&a, &inst.noise);
        for (b, ms) in members.iter().enumerate() {
            // stream served by each TX node of this cell
            let streams: Vec<usize> = ms
                .iter()
                .map(|&m| {
                    inst.serving
                        .iter()
                        .position(|&s| s == m)
                        .expect("serving is a bijection")
                })
                .collect();
            let num: Vec<f64> = ms
                .iter()
                .zip(&streams)
                .map(|(&m, &j)| (w[j] * u[j].re * g(m, j)).max(0.0))
                .collect();
            let den: Vec<f64> = ms
                .iter()
                .map(|&m| (0..k_n).map(|k| w[k] * u[k].norm_sqr() * g(m, k).powi(2)).sum())
                .collect();
            let sol = scalar_ball(&num, &den, inst.budgets[b], cfg.bisection_tol)?;
            for (&m, xm) in ms.iter().zip(sol) {
                x[m] = xm;
            }
        }
        if lp.push(rate(&x)?, cfg.tol)? {
            break;
        }
    }
    finish(inst, Solution::Powers(powers(&x)), lp, false)
}

/// `x_i = c_i / (d_i + μ)` with the smallest `μ ≥ 0` keeping `Σ x_i² ≤ budget`.
fn scalar_ball(c: &[f64], d: &[f64], budget: f64, tol: f64) -> Result<Vec<f64>> {
    let a = DMatrix::from_diagonal(&DVector::from_iterator(
        d.len(),
        d.iter().map(|&x| Complex64::new(x, 0.0)),
    ));
    let b: Vec<CVec> = c
        .iter()
        .enumerate()
        .map(|(i, &ci)| {
            let mut e = CVec::zeros(c.len());
            e[i] = Complex64::new(ci, 0.0);
            e
        })
        .collect();
    let sol = ball_constrained_solve(&a, &b, budget, tol)?;
    Ok(sol.iter().enumerate().map(|(i, v)| v[i].re.max(0.0)).collect())
}

/// Cooperative WMMSE on stacked beams. The beam step minimises the weighted
/// MSE block by block: each BS re-solves its `N × K` block exactly under its
/// own budget with one bisected multiplier, so every sweep is monotone.
pub fn wmmse_coop(inst: &ScenarioInstance, cfg: &SolverConfig) -> Result<SolverOutput> {
    check(inst, ScenarioKind::Coop, cfg)?;
    let (m_n, k_n, n) = (inst.n_bs, inst.n_ue, inst.n_antennas);
    let mut v = coop_start(inst, cfg.init_seed);
    let idx = |m: usize, k: usize| (m * k_n + k) * n;
    let rate = |v: &[Complex64]| evaluate(inst, &Solution::CoopBeams(v.to_vec())).map(|r| r.sum_rate);
    let mut lp = Loop::new(rate(&v)?);
    let zero = Complex64::new(0.0, 0.0);
    for _ in 0..cfg.max_iters {
        // s[j*K + k] = h_kᴴ v_j over all BSs
        let amplitudes = |v: &[Complex64]| {
            let mut s = vec![zero; k_n * k_n];
            for j in 0..k_n {
                for k in 0..k_n {
                    s[j * k_n + k] = (0..m_n)
                        .map(|m| inner(inst.channel(m, k), &v[idx(m, j)..idx(m, j) + n]))
                        .sum();
                }
            }
            s
        };
        let (u, w) = receivers(&amplitudes(&v), &inst.noise);
        let c: Vec<f64> = (0..k_n).map(|k| w[k] * u[k].norm_sqr()).collect();
        let blocks: Vec<DMatrix<Complex64>> = (0..m_n)
            .map(|m| {
                let mut a = DMatrix::<Complex64>::zeros(n, n);
                for k in 0..k_n {
                    let h = cvec(inst.channel(m, k));
                    a += &h * h.adjoint() * Complex64::new(c[k], 0.0);
                }
                a
            })
            .collect();
        // Quadratic part of the weighted MSE in v, used to stop the sweeps.
        let objective = |s: &[Complex64]| -> f64 {
            let mut f = 0.0;
            for j in 0..k_n {
                f += (0..k_n).map(|k| c[k] * s[j * k_n + k].norm_sqr()).sum::<f64>();
                f -= 2.0 * (w[j] * u[j].conj() * s[j * k_n + j]).re;
            }
            f
        };
        let mut s = amplitudes(&v);
        let mut f_prev = objective(&s);
        for _ in 0..cfg.max_block_sweeps {
            for m in 0..m_n {
                let rhs: Vec<CVec> = (0..k_n)
                    .map(|j| {
                        let own = cvec(&v[idx(m, j)..idx(m, j) + n]);
                        let mut r = cvec(inst.channel(m, j)) * (w[j] * u[j]);
                        for k in 0..k_n {
                            let h = cvec(inst.channel(m, k));
                            let others = s[j * k_n + k] - inner(inst.channel(m, k), own.as_slice());
                            r -= h * (others * c[k]);
                        }
                        r
                    })
                    .collect();
                let sol = ball_constrained_solve(&blocks[m], &rhs, inst.budgets[m], cfg.bisection_tol)?;
                for (j, vj) in sol.iter().enumerate() {
                    for k in 0..k_n {
                        let h = inst.channel(m, k);
                        s[j * k_n + k] += inner(h, vj.as_slice()) - inner(h, &v[idx(m, j)..idx(m, j) + n]);
                    }
                    v[idx(m, j)..idx(m, j) + n].copy_from_slice(vj.as_slice());
                }
            }
            let f = objective(&s);
            let done = (f_prev - f).abs() <= 1e-12 * f.abs().max(1.0);
            f_prev = f;
            if done || m_n == 1 {
                break;
            }
        }
        if lp.push(rate(&v)?, cfg.tol)? {
            break;
        }
    }
    finish(inst, Solution::CoopBeams(v), lp, false)
}

/// Full-power per-BS matched filters, or a seeded random feasible start.
fn coop_start(inst: &ScenarioInstance, seed: Option<u64>) -> Vec<Complex64> {
    let (m_n, k_n, n) = (inst.n_bs, inst.n_ue, inst.n_antennas);
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let mut v = Vec::with_capacity(m_n * k_n * n);
    for m in 0..m_n {
        let s = (inst.budgets[m] / k_n as f64).sqrt();
        for k in 0..k_n {
            let dir = match rng.as_mut() {
                Some(r) => random_unit(n, r),
                None => unit(inst.channel(m, k)),
            };
            v.extend(dir.into_iter().map(|c| c * s));
        }
    }
    v
}

/// Gradient projection from the matched-filter start (or `init_seed`).
pub fn gp_coop(inst: &ScenarioInstance, cfg: &SolverConfig) -> Result<SolverOutput> {
    check(inst, ScenarioKind::Coop, cfg)?;
    let v0 = coop_start(inst, cfg.init_seed);
    gp_coop_from(inst, cfg, Solution::CoopBeams(v0))
}

/// `V ← Proj(V + α·P_m·∇_V R)` with the per-BS ball projection. Steps are
/// taken in budget-normalised coordinates `V_m/√P_m`, which is why the
/// gradient is scaled by `P_m`; `α` doubles after an accepted step and
/// halves until the sum rate increases.
pub fn gp_coop_from(inst: &ScenarioInstance, cfg: &SolverConfig, start: Solution) -> Result<SolverOutput> {
    check(inst, ScenarioKind::Coop, cfg)?;
    let obj = TapeObjective::new(inst)?;
    let k_n = inst.n_ue;
    let mut vars = obj.to_vars(inst, &start)?;
    {
        let mut tape = Tape::new();
        let x = tape.constant(vars.clone());
        let p = obj.normalize(&mut tape, x)?;
        vars = tape.value(p).clone();
    }
    let value_and_grad = |vars: &crate::numkernel::Tensor, grad: bool| -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let x = tape.leaf(vars.clone().with_grad());
        let r = obj.sum_rate(&mut tape, x)?;
        let val = tape.value(r).data()[0];
        if !grad {
            return Ok((val, Vec::new()));
        }
        let g = tape.backward(r)?;
        Ok((val, g.get(x).map(|s| s.to_vec()).unwrap_or_default()))
    };
    let (mut f, _) = value_and_grad(&vars, false)?;
    let mut lp = Loop::new(f);
    let mut alpha = cfg.gp_initial_step;
    let mut stagnated = false;
    let width = vars.cols();
    for _ in 0..cfg.max_iters {
        let (_, grad) = value_and_grad(&vars, true)?;
        if grad.iter().all(|&g| g == 0.0) {
            lp.converged = true;
            break;
        }
        let mut accepted = None;
        while alpha >= cfg.gp_min_step {
            let mut trial = vars.clone();
            for (r, row) in trial.data_mut().chunks_mut(width).enumerate() {
                let p = inst.budgets[r / k_n];
                for (x, g) in row.iter_mut().zip(&grad[r * width..(r + 1) * width]) {
                    *x += alpha * p * g;
                }
            }
            let mut tape = Tape::new();
            let t = tape.constant(trial);
            let proj = obj.normalize(&mut tape, t)?;
            let trial = tape.value(proj).clone();
            let (ft, _) = value_and_grad(&trial, false)?;
            if ft > f {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, ft)) = accepted else {
            stagnated = true;
            break;
        };
        vars = next;
        f = ft;
        alpha = (2.0 * alpha).min(cfg.gp_initial_step * 1e6);
        if lp.push(f, cfg.tol)? {
            break;
        }
    }
    let solution = obj.solution(inst, &vars)?;
    finish(inst, solution, lp, stagnated)
}
