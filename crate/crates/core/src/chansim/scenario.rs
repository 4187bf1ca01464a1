use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{channel, dbm_to_watts, sample_geometry, GeometryConfig, MIN_LINK_DISTANCE};
use crate::error::{Error, Result};
use crate::hetgraph::{split_complex, HetGraph, NodePermutation};
use crate::numkernel::Tensor;

/// Reference budget for feature scaling (TX features are `P / P_ref`).
pub const REF_BUDGET_DBM: f64 = 33.0;
/// Reference noise for feature scaling (RX features are `σ / σ_ref`).
pub const REF_NOISE_DBM: f64 = -99.0;

/// Condition number above which zero-forcing is refused.
pub const ZF_MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// One BS per UE; cross links interfere.
    Ic,
    /// Cells of several UEs with fixed zero-forcing beams; powers are optimised.
    Ibc,
    /// Every BS serves every UE.
    Coop,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Ic => "ic",
            ScenarioKind::Ibc => "ibc",
            ScenarioKind::Coop => "coop",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ic" => Ok(ScenarioKind::Ic),
            "ibc" => Ok(ScenarioKind::Ibc),
            "coop" => Ok(ScenarioKind::Coop),
            other => Err(Error::invalid(format!("unknown scenario kind '{other}'"))),
        }
    }
}

/// Generation settings for one scenario family.
///
/// For `ibc`, `n_ue` is the total UE count and must be a multiple of `n_bs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub n_bs: usize,
    pub n_ue: usize,
    pub n_antennas: usize,
    pub field_size: f64,
    pub min_bs_spacing: f64,
    pub serve_dist: [f64; 2],
    pub budget_dbm: f64,
    pub noise_dbm: f64,
}

impl ScenarioConfig {
    pub fn default_for(kind: ScenarioKind) -> Self {
        let (n_bs, n_ue, n_antennas, spacing) = match kind {
            ScenarioKind::Ic => (4, 4, 2, 0.0),
            ScenarioKind::Ibc => (5, 10, 16, 500.0),
            ScenarioKind::Coop => (5, 2, 2, 500.0),
        };
        Self {
            kind,
            n_bs,
            n_ue,
            n_antennas,
            field_size: 2000.0,
            min_bs_spacing: spacing,
            serve_dist: [50.0, 250.0],
            budget_dbm: 33.0,
            noise_dbm: -99.0,
        }
    }

    pub fn geometry(&self) -> GeometryConfig {
        GeometryConfig {
            field_size: self.field_size,
            min_bs_spacing: self.min_bs_spacing,
            serve_dist: self.serve_dist,
            n_bs: self.n_bs,
            n_ue: self.n_ue,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry().validate()?;
        if self.n_antennas == 0 {
            return Err(Error::Config("antenna count must be at least 1".into()));
        }
        if !self.budget_dbm.is_finite() || !self.noise_dbm.is_finite() {
            return Err(Error::Config("budget and noise must be finite dBm values".into()));
        }
        Ok(())
    }

    /// Instance `index` of the stream identified by `seed`.
    pub fn generate(&self, seed: u64, index: u64) -> Result<ScenarioInstance> {
        let mut rng = sample_rng(seed, index);
        match self.kind {
            ScenarioKind::Ic => build_ic_instance(self, &mut rng).map(|r| r.0),
            ScenarioKind::Ibc => build_ibc_instance(self, &mut rng).map(|r| r.0),
            ScenarioKind::Coop => build_coop_instance(self, &mut rng).map(|r| r.0),
        }
    }
}

/// Independent generator for sample `index` of a seeded stream.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Fixed zero-forcing beams and equivalent gains of an IBC instance, indexed
/// by equivalent TX node `m` (one per served UE).
#[derive(Debug, Clone, PartialEq)]
pub struct IbcData {
    pub n_cells: usize,
    /// Cell (BS) owning each TX node.
    pub tx_cell: Vec<usize>,
    /// Cell of each UE.
    pub rx_cell: Vec<usize>,
    /// `[K, N]` unit-norm beam of each TX node.
    pub beams: Vec<Complex64>,
    /// `[K, K]` gains `g[m, k] = |h_{cell(m),k}ᴴ w_m|`.
    pub gains: Vec<f64>,
}

/// One problem realisation. Channels are indexed by physical BS.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioInstance {
    pub kind: ScenarioKind,
    pub n_bs: usize,
    pub n_ue: usize,
    pub n_antennas: usize,
    /// `[n_bs, n_ue, N]`, `h[m, k]`.
    pub channels: Vec<Complex64>,
    /// Per-BS budgets, watts.
    pub budgets: Vec<f64>,
    /// Per-UE noise power σ², watts.
    pub noise: Vec<f64>,
    /// Serving TX node of each UE (IC: BS, IBC: equivalent TX node). Empty for coop.
    pub serving: Vec<usize>,
    pub ibc: Option<IbcData>,
}

fn feature_scales() -> (f64, f64) {
    let p_ref = dbm_to_watts(REF_BUDGET_DBM);
    let sigma_ref = dbm_to_watts(REF_NOISE_DBM).sqrt();
    (p_ref, sigma_ref)
}

impl ScenarioInstance {
    /// TX-node count of the graph view.
    pub fn num_tx(&self) -> usize {
        match self.kind {
            ScenarioKind::Ibc => self.n_ue,
            _ => self.n_bs,
        }
    }

    pub fn num_rx(&self) -> usize {
        self.n_ue
    }

    pub fn channel(&self, m: usize, k: usize) -> &[Complex64] {
        let n = self.n_antennas;
        let off = (m * self.n_ue + k) * n;
        &self.channels[off..off + n]
    }

    pub fn ibc(&self) -> Result<&IbcData> {
        self.ibc
            .as_ref()
            .ok_or_else(|| Error::Precondition("instance has no zero-forcing gains".into()))
    }

    /// Budget of each graph TX node.
    pub fn tx_budgets(&self) -> Vec<f64> {
        match (&self.kind, &self.ibc) {
            (ScenarioKind::Ibc, Some(d)) => d.tx_cell.iter().map(|&b| self.budgets[b]).collect(),
            _ => self.budgets.clone(),
        }
    }

    /// Checks basic invariants; instances read from disk go through this.
    pub fn validate(&self) -> Result<()> {
        let (m, k, n) = (self.n_bs, self.n_ue, self.n_antennas);
        let bad = |msg: &str| Err(Error::invalid(format!("malformed instance: {msg}")));
        if m == 0 || k == 0 || n == 0 {
            return bad("empty dimension");
        }
        if self.channels.len() != m * k * n || self.budgets.len() != m || self.noise.len() != k {
            return bad("array sizes do not match dimensions");
        }
        if self.budgets.iter().any(|&p| !(p > 0.0)) || self.noise.iter().any(|&s| !(s > 0.0)) {
            return bad("budgets and noise must be positive");
        }
        match self.kind {
            ScenarioKind::Ic => {
                if m != k || !is_perm(&self.serving, k) {
                    return bad("serving map must be a bijection with M = K");
                }
            }
            ScenarioKind::Ibc => {
                let d = self.ibc()?;
                if self.serving.len() != k || !is_perm(&self.serving, k) {
                    return bad("serving map must be a bijection on TX nodes");
                }
                if d.tx_cell.len() != k || d.rx_cell.len() != k || d.beams.len() != k * n || d.gains.len() != k * k {
                    return bad("cell data sizes");
                }
                if d.n_cells != m || d.tx_cell.iter().chain(&d.rx_cell).any(|&b| b >= m) {
                    return bad("cell index out of range");
                }
                if d.gains.iter().any(|&g| !(g >= 0.0)) {
                    return bad("gains must be nonnegative");
                }
            }
            ScenarioKind::Coop => {
                if !self.serving.is_empty() {
                    return bad("cooperative instances have no serving map");
                }
            }
        }
        Ok(())
    }

    /// Graph view with scaled features.
    ///
    /// Channels enter as `h·√P_ref/σ_ref` (SNR-amplitude units), budgets as
    /// `P/P_ref`, noise as `σ/σ_ref`. All features are complex and split.
    pub fn graph(&self) -> Result<HetGraph> {
        let (p_ref, sigma_ref) = feature_scales();
        let amp = p_ref.sqrt() / sigma_ref;
        let (mm, kk, n) = (self.num_tx(), self.num_rx(), self.n_antennas);
        let real_col = |vals: Vec<f64>| {
            let rows = vals.len();
            let mut d = Vec::with_capacity(2 * rows);
            for v in vals {
                d.push(v);
                d.push(0.0);
            }
            Tensor::matrix(rows, 2, d)
        };
        let f_tx = real_col(self.tx_budgets().iter().map(|p| p / p_ref).collect())?;
        let f_rx = real_col(self.noise.iter().map(|s| s.sqrt() / sigma_ref).collect())?;
        let zero = Complex64::new(0.0, 0.0);
        let (de, fibers): (usize, Vec<f64>) = match self.kind {
            ScenarioKind::Ic => {
                let mut out = Vec::with_capacity(mm * kk * 4 * n);
                for m in 0..mm {
                    for k in 0..kk {
                        let h = self.channel(m, k).iter().map(|c| c * amp);
                        let mut v = vec![zero; 2 * n];
                        let off = if self.serving[k] == m { 0 } else { n };
                        for (slot, c) in v[off..off + n].iter_mut().zip(h) {
                            *slot = c;
                        }
                        out.extend(split_complex(&v));
                    }
                }
                (4 * n, out)
            }
            ScenarioKind::Ibc => {
                let d = self.ibc()?;
                let mut out = Vec::with_capacity(mm * kk * 6);
                for m in 0..mm {
                    for k in 0..kk {
                        let g = d.gains[m * kk + k] * amp;
                        let slot = if self.serving[k] == m {
                            0
                        } else if d.tx_cell[m] == d.rx_cell[k] {
                            1
                        } else {
                            2
                        };
                        let mut v = [0.0; 6];
                        v[slot] = g;
                        out.extend_from_slice(&v);
                    }
                }
                (6, out)
            }
            ScenarioKind::Coop => {
                let mut out = Vec::with_capacity(mm * kk * 2 * n);
                for m in 0..mm {
                    for k in 0..kk {
                        let h: Vec<Complex64> = self.channel(m, k).iter().map(|c| c * amp).collect();
                        out.extend(split_complex(&h));
                    }
                }
                (2 * n, out)
            }
        };
        HetGraph::complete(f_tx, f_rx, Tensor::new(vec![mm, kk, de], fibers)?)
    }

    /// Relabels TX nodes by `pi_tx` and UEs by `pi_rx`. For IBC the TX
    /// permutation acts on equivalent TX nodes, not on BSs.
    pub fn permute(&self, p: &NodePermutation) -> Result<Self> {
        let (mm, kk, n) = (self.num_tx(), self.n_ue, self.n_antennas);
        if p.pi_tx().len() != mm || p.pi_rx().len() != kk {
            return Err(Error::invalid("permutation does not match instance size"));
        }
        let (pt, pr) = (p.pi_tx(), p.pi_rx());
        let bs_perm: Vec<usize> = match self.kind {
            ScenarioKind::Ibc => (0..self.n_bs).collect(),
            _ => pt.to_vec(),
        };
        let mut channels = vec![Complex64::new(0.0, 0.0); self.channels.len()];
        for m in 0..self.n_bs {
            for k in 0..kk {
                let dst = (bs_perm[m] * kk + pr[k]) * n;
                channels[dst..dst + n].copy_from_slice(self.channel(m, k));
            }
        }
        let mut budgets = vec![0.0; self.n_bs];
        for m in 0..self.n_bs {
            budgets[bs_perm[m]] = self.budgets[m];
        }
        let mut noise = vec![0.0; kk];
        for k in 0..kk {
            noise[pr[k]] = self.noise[k];
        }
        let mut serving = vec![0; self.serving.len()];
        for (k, &m) in self.serving.iter().enumerate() {
            serving[pr[k]] = pt[m];
        }
        let ibc = match &self.ibc {
            None => None,
            Some(d) => {
                let mut tx_cell = vec![0; mm];
                let mut beams = vec![Complex64::new(0.0, 0.0); mm * n];
                for m in 0..mm {
                    tx_cell[pt[m]] = d.tx_cell[m];
                    beams[pt[m] * n..(pt[m] + 1) * n].copy_from_slice(&d.beams[m * n..(m + 1) * n]);
                }
                let mut rx_cell = vec![0; kk];
                for k in 0..kk {
                    rx_cell[pr[k]] = d.rx_cell[k];
                }
                let mut gains = vec![0.0; mm * kk];
                for m in 0..mm {
                    for k in 0..kk {
                        gains[pt[m] * kk + pr[k]] = d.gains[m * kk + k];
                    }
                }
                Some(IbcData {
                    n_cells: d.n_cells,
                    tx_cell,
                    rx_cell,
                    beams,
                    gains,
                })
            }
        };
        Ok(Self {
            kind: self.kind,
            n_bs: self.n_bs,
            n_ue: kk,
            n_antennas: n,
            channels,
            budgets,
            noise,
            serving,
            ibc,
        })
    }
}

fn is_perm(p: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    p.len() == n
        && p.iter().all(|&i| {
            if i >= n || seen[i] {
                false
            } else {
                seen[i] = true;
                true
            }
        })
}

fn draw_channels<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Vec<Complex64>> {
    let geo = sample_geometry(&cfg.geometry(), rng)?;
    let mut out = Vec::with_capacity(cfg.n_bs * cfg.n_ue * cfg.n_antennas);
    for m in 0..cfg.n_bs {
        for k in 0..cfg.n_ue {
            let d = geo.distance(m, k).max(MIN_LINK_DISTANCE);
            out.extend(channel(d, cfg.n_antennas, rng)?);
        }
    }
    Ok(out)
}

fn base_instance<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<ScenarioInstance> {
    cfg.validate()?;
    Ok(ScenarioInstance {
        kind: cfg.kind,
        n_bs: cfg.n_bs,
        n_ue: cfg.n_ue,
        n_antennas: cfg.n_antennas,
        channels: draw_channels(cfg, rng)?,
        budgets: vec![dbm_to_watts(cfg.budget_dbm); cfg.n_bs],
        noise: vec![dbm_to_watts(cfg.noise_dbm); cfg.n_ue],
        serving: Vec::new(),
        ibc: None,
    })
}

fn expect_kind(cfg: &ScenarioConfig, kind: ScenarioKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::invalid(format!(
            "config is for '{}', expected '{}'",
            cfg.kind.name(),
            kind.name()
        )));
    }
    Ok(())
}

pub fn build_ic_instance<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<(ScenarioInstance, HetGraph)> {
    expect_kind(cfg, ScenarioKind::Ic)?;
    if cfg.n_bs != cfg.n_ue {
        return Err(Error::invalid(format!(
            "interference channel needs M = K, got M={} K={}",
            cfg.n_bs, cfg.n_ue
        )));
    }
    let mut inst = base_instance(cfg, rng)?;
    inst.serving = (0..cfg.n_ue).collect();
    let g = inst.graph()?;
    Ok((inst, g))
}

pub fn build_ibc_instance<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<(ScenarioInstance, HetGraph)> {
    expect_kind(cfg, ScenarioKind::Ibc)?;
    if cfg.n_bs == 0 || !cfg.n_ue.is_multiple_of(cfg.n_bs) || cfg.n_ue == 0 {
        return Err(Error::invalid(format!(
            "IBC needs the same number of UEs in every cell, got {} UEs for {} cells",
            cfg.n_ue, cfg.n_bs
        )));
    }
    let q = cfg.n_ue / cfg.n_bs;
    if cfg.n_antennas < q {
        return Err(Error::invalid(format!(
            "zero-forcing needs N >= Q, got N={} Q={}",
            cfg.n_antennas, q
        )));
    }
    let mut inst = base_instance(cfg, rng)?;
    let (b_n, k_n, n) = (cfg.n_bs, cfg.n_ue, cfg.n_antennas);
    let mut beams = Vec::with_capacity(k_n * n);
    for b in 0..b_n {
        let cols: Vec<Vec<Complex64>> = (0..q).map(|j| inst.channel(b, b * q + j).to_vec()).collect();
        for w in zero_forcing(&cols)? {
            beams.extend(w);
        }
    }
    let tx_cell: Vec<usize> = (0..k_n).map(|m| m / q).collect();
    let rx_cell = tx_cell.clone();
    let mut gains = vec![0.0; k_n * k_n];
    for m in 0..k_n {
        let w = &beams[m * n..(m + 1) * n];
        for k in 0..k_n {
            let h = inst.channel(tx_cell[m], k);
            gains[m * k_n + k] = inner(h, w).norm();
        }
    }
    inst.serving = (0..k_n).collect();
    inst.ibc = Some(IbcData {
        n_cells: b_n,
        tx_cell,
        rx_cell,
        beams,
        gains,
    });
    let g = inst.graph()?;
    Ok((inst, g))
}

pub fn build_coop_instance<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<(ScenarioInstance, HetGraph)> {
    expect_kind(cfg, ScenarioKind::Coop)?;
    let inst = base_instance(cfg, rng)?;
    let g = inst.graph()?;
    Ok((inst, g))
}

/// `aᴴ b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Unit-norm zero-forcing beams for the columns `h_q` of `H` (`N × Q`):
/// the columns of `H(HᴴH)⁻¹`, each rescaled to unit norm.
pub fn zero_forcing(cols: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>> {
    let q = cols.len();
    let n = cols.first().map_or(0, |c| c.len());
    if q == 0 || n < q || cols.iter().any(|c| c.len() != n) {
        return Err(Error::invalid(format!(
            "zero-forcing needs N >= Q >= 1 equal-length columns, got N={n} Q={q}"
        )));
    }
    let h = DMatrix::from_fn(n, q, |i, j| cols[j][i]);
    let svd = h.svd(true, true);
    let s = &svd.singular_values;
    let (smax, smin) = (s.max(), s.min());
    if !(smin > 0.0) || smax / smin > ZF_MAX_CONDITION {
        return Err(Error::Numerical(format!(
            "channel matrix is rank deficient (condition number {:.3e})",
            smax / smin
        )));
    }
    let u = svd.u.as_ref().expect("svd u");
    let v_t = svd.v_t.as_ref().expect("svd v_t");
    let mut u_scaled = u.clone();
    for (j, mut col) in u_scaled.column_iter_mut().enumerate() {
        col /= Complex64::new(s[j], 0.0);
    }
    let w = u_scaled * v_t;
    Ok((0..q)
        .map(|j| {
            let col: Vec<Complex64> = w.column(j).iter().copied().collect();
            let norm = col.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            col.into_iter().map(|c| c / norm).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_cols(n: usize, q: usize, r: &mut ChaCha8Rng) -> Vec<Vec<Complex64>> {
        (0..q)
            .map(|_| {
                (0..n)
                    .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn zf_single_user_is_matched_filter() {
        let mut r = rng(1);
        let h = random_cols(4, 1, &mut r);
        let w = zero_forcing(&h).unwrap();
        let nrm = h[0].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        // ZF of one column is h/‖h‖ up to a global phase; here the phase is exact
        for (a, b) in w[0].iter().zip(&h[0]) {
            assert!((a - b / nrm).norm() < 1e-12);
        }
    }

    #[test]
    fn zf_orthogonal_columns_are_proportional() {
        let c = |re: f64| Complex64::new(re, 0.0);
        let h = vec![vec![c(2.0), c(0.0), c(0.0)], vec![c(0.0), c(0.0), c(-3.0)]];
        let w = zero_forcing(&h).unwrap();
        assert!((w[0][0] - c(1.0)).norm() < 1e-12);
        assert!((w[1][2] - c(-1.0)).norm() < 1e-12);
    }

    #[test]
    fn zf_nulls_cross_terms() {
        let mut r = rng(2);
        for _ in 0..50 {
            let h = random_cols(16, 2, &mut r);
            let w = zero_forcing(&h).unwrap();
            for i in 0..2 {
                let nrm: f64 = w[i].iter().map(|c| c.norm_sqr()).sum();
                assert!((nrm - 1.0).abs() < 1e-12);
                for j in 0..2 {
                    if i != j {
                        assert!(inner(&h[i], &w[j]).norm() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn zf_rejects_rank_deficiency() {
        let mut r = rng(3);
        let h = random_cols(4, 1, &mut r);
        let dup = vec![h[0].clone(), h[0].clone()];
        assert!(matches!(zero_forcing(&dup), Err(Error::Numerical(_))));
        assert!(zero_forcing(&random_cols(1, 2, &mut r)).is_err());
    }

    #[test]
    fn ic_instance_layout() {
        let mut cfg = ScenarioConfig::default_for(ScenarioKind::Ic);
        let (inst, g) = build_ic_instance(&cfg, &mut rng(4)).unwrap();
        let n = cfg.n_antennas;
        assert_eq!(g.d_e(), 4 * n);
        assert_eq!((g.d_tx(), g.d_rx()), (2, 2));
        for m in 0..4 {
            for k in 0..4 {
                let f = g.edge_fiber(m, k);
                let first: f64 = (0..n).map(|i| f[i].abs() + f[2 * n + i].abs()).sum();
                let second: f64 = (0..n).map(|i| f[n + i].abs() + f[3 * n + i].abs()).sum();
                assert_eq!(first > 0.0, inst.serving[k] == m);
                assert_eq!(second > 0.0, inst.serving[k] != m);
            }
        }
        cfg.n_bs = 1;
        cfg.n_ue = 1;
        let (_, g) = build_ic_instance(&cfg, &mut rng(5)).unwrap();
        let f = g.edge_fiber(0, 0);
        assert!(f[n..2 * n].iter().chain(&f[3 * n..]).all(|&v| v == 0.0));
        cfg.n_ue = 2;
        assert!(matches!(
            build_ic_instance(&cfg, &mut rng(5)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn purely_real_features_split_with_zero_imaginary_part() {
        let cfg = ScenarioConfig::default_for(ScenarioKind::Ic);
        let (_, g) = build_ic_instance(&cfg, &mut rng(6)).unwrap();
        for m in 0..4 {
            assert!((g.f_tx().row(m)[0] - 1.0).abs() < 1e-12);
            assert_eq!(g.f_tx().row(m)[1], 0.0);
            assert!((g.f_rx().row(m)[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ibc_instance_layout_and_zf_gains() {
        let cfg = ScenarioConfig::default_for(ScenarioKind::Ibc);
        for seed in 0..20 {
            let (inst, g) = build_ibc_instance(&cfg, &mut rng(seed)).unwrap();
            inst.validate().unwrap();
            let d = inst.ibc().unwrap();
            assert_eq!((g.num_tx(), g.num_rx(), g.d_e()), (10, 10, 6));
            for m in 0..10 {
                for k in 0..10 {
                    let f = g.edge_fiber(m, k);
                    let gain = d.gains[m * 10 + k];
                    assert!(gain >= 0.0);
                    if m != inst.serving[k] && d.tx_cell[m] == d.rx_cell[k] {
                        assert!(gain < 1e-8, "intra-cell gain {gain}");
                        assert!(f[0] == 0.0 && f[2] == 0.0);
                    }
                    if m == inst.serving[k] {
                        assert!(f[0] > 0.0 && f[1..].iter().all(|&v| v == 0.0));
                    }
                    if d.tx_cell[m] != d.rx_cell[k] {
                        assert!(f[..2].iter().all(|&v| v == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn ibc_single_ue_cells_have_no_intra_category() {
        let mut cfg = ScenarioConfig::default_for(ScenarioKind::Ibc);
        cfg.n_ue = cfg.n_bs;
        let (inst, g) = build_ibc_instance(&cfg, &mut rng(7)).unwrap();
        for m in 0..inst.num_tx() {
            for k in 0..inst.num_rx() {
                assert_eq!(g.edge_fiber(m, k)[1], 0.0);
            }
        }
        cfg.n_antennas = 1;
        cfg.n_ue = 2 * cfg.n_bs;
        assert!(matches!(
            build_ibc_instance(&cfg, &mut rng(7)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn coop_instance_layout() {
        let cfg = ScenarioConfig::default_for(ScenarioKind::Coop);
        let (inst, g) = build_coop_instance(&cfg, &mut rng(8)).unwrap();
        assert_eq!(g.d_e(), 2 * cfg.n_antennas);
        assert!(g.edge_mask().iter().all(|&b| b));
        let (p_ref, s_ref) = feature_scales();
        let amp = p_ref.sqrt() / s_ref;
        let f = g.edge_fiber(1, 1);
        let h = inst.channel(1, 1);
        assert!((f[0] - h[0].re * amp).abs() < 1e-9 * f[0].abs().max(1.0));
        assert!((f[cfg.n_antennas] - h[0].im * amp).abs() < 1e-9 * f[cfg.n_antennas].abs().max(1.0));
    }

    #[test]
    fn generation_is_reproducible() {
        for kind in [ScenarioKind::Ic, ScenarioKind::Ibc, ScenarioKind::Coop] {
            let cfg = ScenarioConfig::default_for(kind);
            let a = cfg.generate(42, 3).unwrap();
            let b = cfg.generate(42, 3).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, cfg.generate(42, 4).unwrap());
        }
    }

    #[test]
    fn permuted_instance_gives_permuted_graph() {
        let mut r = rng(9);
        for kind in [ScenarioKind::Ic, ScenarioKind::Ibc, ScenarioKind::Coop] {
            let inst = ScenarioConfig::default_for(kind).generate(1, 0).unwrap();
            let p = NodePermutation::random(inst.num_tx(), inst.num_rx(), &mut r);
            let pi = inst.permute(&p).unwrap();
            pi.validate().unwrap();
            let lhs = pi.graph().unwrap();
            let rhs = crate::hetgraph::permute_graph(&inst.graph().unwrap(), &p).unwrap();
            assert_eq!(lhs, rhs, "{kind:?}");
            assert_eq!(pi.permute(&p.inverse()).unwrap(), inst);
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ScenarioConfig::default_for(ScenarioKind::Ibc);
        let text = toml::to_string(&cfg).unwrap();
        let back: ScenarioConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(toml::from_str::<ScenarioConfig>("kind = \"mesh\"").is_err());
    }
}
