use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::chansim::{ScenarioConfig, ScenarioKind};
use crate::numkernel::fd_check;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn rand_c(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Complex64> {
    (0..n)
        .map(|_| c(rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
        .collect()
}

fn small(kind: ScenarioKind, n_bs: usize, n_ue: usize, n: usize, rng: &mut ChaCha8Rng) -> ScenarioInstance {
    let mut cfg = ScenarioConfig::default_for(kind);
    cfg.n_bs = n_bs;
    cfg.n_ue = n_ue;
    cfg.n_antennas = n;
    cfg.min_bs_spacing = 0.0;
    cfg.generate(rng.random(), 0).unwrap()
}

/// Random feasible solution at a random fraction of each budget.
fn random_solution(inst: &ScenarioInstance, rng: &mut ChaCha8Rng) -> Solution {
    let (m_n, k_n, n) = (inst.n_bs, inst.n_ue, inst.n_antennas);
    match inst.kind {
        ScenarioKind::Ic => {
            let mut v = rand_c(rng, k_n * n, 1.0);
            for k in 0..k_n {
                let b = &mut v[k * n..(k + 1) * n];
                let s = rng.random_range(0.0..1.0) * (inst.budgets[k] / norm_sqr(b)).sqrt();
                b.iter_mut().for_each(|x| *x *= s);
            }
            Solution::Beams(v)
        }
        ScenarioKind::Ibc => {
            let d = inst.ibc().unwrap();
            let q = k_n / d.n_cells;
            Solution::Powers(
                (0..k_n)
                    .map(|m| rng.random_range(0.0..1.0) * inst.budgets[d.tx_cell[m]] / q as f64)
                    .collect(),
            )
        }
        ScenarioKind::Coop => {
            let mut v = rand_c(rng, m_n * k_n * n, 1.0);
            for m in 0..m_n {
                let b = &mut v[m * k_n * n..(m + 1) * k_n * n];
                let s = rng.random_range(0.0..1.0) * (inst.budgets[m] / norm_sqr(b)).sqrt();
                b.iter_mut().for_each(|x| *x *= s);
            }
            Solution::CoopBeams(v)
        }
    }
}

/// Signal and interference-plus-noise straight from the received-signal
/// model: each symbol's complex amplitude at UE k, then powers.
fn brute_force_sinr(inst: &ScenarioInstance, s: &Solution) -> Vec<f64> {
    let (m_n, k_n, n) = (inst.n_bs, inst.n_ue, inst.n_antennas);
    let mut out = Vec::new();
    for k in 0..k_n {
        let mut amps = vec![c(0.0, 0.0); k_n];
        match s {
            Solution::Beams(v) => {
                for j in 0..k_n {
                    let h = inst.channel(inst.serving[j], k);
                    for i in 0..n {
                        amps[j] += h[i].conj() * v[j * n + i];
                    }
                }
            }
            Solution::Powers(p) => {
                let d = inst.ibc().unwrap();
                for j in 0..k_n {
                    let m = inst.serving[j];
                    let h = inst.channel(d.tx_cell[m], k);
                    let w = &d.beams[m * n..(m + 1) * n];
                    for i in 0..n {
                        amps[j] += p[m].sqrt() * h[i].conj() * w[i];
                    }
                }
            }
            Solution::CoopBeams(v) => {
                for j in 0..k_n {
                    for m in 0..m_n {
                        let h = inst.channel(m, k);
                        for i in 0..n {
                            amps[j] += h[i].conj() * v[(m * k_n + j) * n + i];
                        }
                    }
                }
            }
        }
        let sig = amps[k].norm_sqr();
        let interf: f64 = (0..k_n).filter(|&j| j != k).map(|j| amps[j].norm_sqr()).sum();
        out.push(sig / (interf + inst.noise[k]));
    }
    out
}

#[test]
fn single_user_matched_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inst = small(ScenarioKind::Ic, 1, 1, 3, &mut rng);
    let h = inst.channel(0, 0).to_vec();
    let p = inst.budgets[0];
    let nh = norm_sqr(&h).sqrt();
    let v: Vec<Complex64> = h.iter().map(|x| x * (p.sqrt() / nh)).collect();
    let r = sinr_ic(&inst, &v).unwrap();
    let expect = p * nh * nh / inst.noise[0];
    assert!((r.sinr[0] / expect - 1.0).abs() < 1e-12);
    assert!((r.sum_rate - expect.log2().max((1.0 + expect).log2())).abs() < 1e-9);

    let zero = vec![c(0.0, 0.0); 3];
    let r = sinr_ic(&inst, &zero).unwrap();
    assert_eq!((r.sinr[0], r.sum_rate), (0.0, 0.0));
}

#[test]
fn rate_increases_with_power_along_matched_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inst = small(ScenarioKind::Ic, 1, 1, 2, &mut rng);
    let h = inst.channel(0, 0).to_vec();
    let dir: Vec<Complex64> = h.iter().map(|x| x / norm_sqr(&h).sqrt()).collect();
    let mut last = -1.0;
    for i in 0..=20 {
        let a = inst.budgets[0].sqrt() * i as f64 / 20.0;
        let v: Vec<Complex64> = dir.iter().map(|x| x * a).collect();
        let r = sinr_ic(&inst, &v).unwrap().sum_rate;
        assert!(r > last);
        last = r;
    }
}

#[test]
fn evaluators_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..100 {
        for inst in [
            small(ScenarioKind::Ic, 3, 3, 2, &mut rng),
            small(ScenarioKind::Ibc, 2, 4, 3, &mut rng),
            small(ScenarioKind::Coop, 2, 3, 2, &mut rng),
        ] {
            let s = random_solution(&inst, &mut rng);
            let r = evaluate(&inst, &s).unwrap();
            let b = brute_force_sinr(&inst, &s);
            for (x, y) in r.sinr.iter().zip(&b) {
                assert!(
                    (x - y).abs() <= 1e-12 * y.abs().max(1e-300),
                    "trial {trial} {:?}: {x} vs {y}",
                    inst.kind
                );
            }
            let total: f64 = r.rates.iter().sum();
            assert_eq!(total, r.sum_rate);
        }
    }
}

#[test]
fn ibc_special_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inst = small(ScenarioKind::Ibc, 2, 4, 3, &mut rng);
    let r = sinr_ibc(&inst, &[0.0; 4]).unwrap();
    assert!(r.sinr.iter().all(|&s| s == 0.0));
    assert!(matches!(
        sinr_ibc(&inst, &[-1e-3, 0.0, 0.0, 0.0]),
        Err(Error::Precondition(_))
    ));
    assert!(matches!(
        sinr_ibc(&inst, &[2.0, 2.0, 0.0, 0.0]),
        Err(Error::Precondition(_))
    ));

    let one = small(ScenarioKind::Ibc, 1, 1, 2, &mut rng);
    let g = one.ibc().unwrap().gains[0];
    let p = 0.7;
    let r = sinr_ibc(&one, &[p]).unwrap();
    assert!((r.sinr[0] / (g * g * p / one.noise[0]) - 1.0).abs() < 1e-12);

    // with zero-forcing the intra-cell term is negligible next to the rest
    let inst = ScenarioConfig::default_for(ScenarioKind::Ibc).generate(9, 0).unwrap();
    let d = inst.ibc().unwrap();
    for k in 0..inst.n_ue {
        let total: f64 = (0..inst.n_ue).map(|m| d.gains[m * inst.n_ue + k].powi(2)).sum::<f64>() + inst.noise[k];
        let intra: f64 = (0..inst.n_ue)
            .filter(|&m| m != inst.serving[k] && d.tx_cell[m] == d.rx_cell[k])
            .map(|m| d.gains[m * inst.n_ue + k].powi(2))
            .sum();
        assert!(intra < 1e-16 * total, "intra {intra} total {total}");
    }
}

#[test]
fn coop_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // M=2, K=1: coherent sum before squaring
    let one = small(ScenarioKind::Coop, 2, 1, 1, &mut rng);
    let (h1, h2) = (one.channel(0, 0)[0], one.channel(1, 0)[0]);
    let v1 = h1 / h1.norm() * one.budgets[0].sqrt();
    let v2 = h2 / h2.norm() * one.budgets[1].sqrt();
    let r = sinr_coop(&one, &[v1, v2]).unwrap();
    let (a, b) = (h1.conj() * v1, h2.conj() * v2);
    assert!((r.sinr[0] / ((a + b).norm_sqr() / one.noise[0]) - 1.0).abs() < 1e-12);
    assert!(((a + b).norm_sqr() - (a.norm() + b.norm()).powi(2)).abs() < 1e-12 * (a + b).norm_sqr());

    // second BS silent: same as the first BS alone
    let two = small(ScenarioKind::Coop, 2, 2, 2, &mut rng);
    let mut single = two.clone();
    single.n_bs = 1;
    single.channels.truncate(2 * 2);
    single.budgets.truncate(1);
    let Solution::CoopBeams(mut v) = random_solution(&single, &mut rng) else {
        unreachable!()
    };
    let r1 = sinr_coop(&single, &v).unwrap();
    v.extend(vec![c(0.0, 0.0); 4]);
    let r2 = sinr_coop(&two, &v).unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn infeasible_beams_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inst = small(ScenarioKind::Ic, 2, 2, 2, &mut rng);
    let big = vec![c(10.0, 0.0); 4];
    assert!(matches!(sinr_ic(&inst, &big), Err(Error::Precondition(_))));
    assert!(sinr_ic(&inst, &big[..2]).is_err());
    let coop = small(ScenarioKind::Coop, 2, 2, 2, &mut rng);
    assert!(matches!(
        sinr_coop(&coop, &[c(10.0, 0.0); 8]),
        Err(Error::Precondition(_))
    ));
    assert!(evaluate(&coop, &Solution::Powers(vec![0.0; 2])).is_err());
}

#[test]
fn normalize_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inst = small(ScenarioKind::Ic, 2, 2, 2, &mut rng);
    let p = inst.budgets[0];
    let feasible = vec![c(0.3, 0.1), c(-0.2, 0.4), c(0.0, 0.5), c(0.1, 0.1)];
    assert_eq!(normalize_ic(&inst, &feasible).unwrap(), feasible);
    // ‖ṽ‖² = 4P → halved
    let s = p.sqrt();
    let raw = vec![c(2.0 * s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
    let v = normalize_ic(&inst, &raw).unwrap();
    assert!((v[0].re - s).abs() < 1e-15);
    assert_eq!(v[2..], raw[2..]);

    let ibc = small(ScenarioKind::Ibc, 2, 4, 2, &mut rng);
    let pb = ibc.budgets[0];
    let pw = normalize_ibc(&ibc, &[0.0; 4]).unwrap();
    assert!(pw.iter().all(|&x| (x - pb / 2.0).abs() < 1e-15));
    let pw = normalize_ibc(&ibc, &[30.0, 30.0, -30.0, 30.0]).unwrap();
    assert!((pw[0] + pw[1] - pb).abs() < 1e-12 && (pw[0] - pw[1]).abs() < 1e-15);

    let coop = small(ScenarioKind::Coop, 2, 2, 1, &mut rng);
    let s0 = coop.budgets[0].sqrt();
    let raw = vec![c(2.0 * s0, 0.0), c(0.0, 0.0), c(0.1, 0.0), c(0.0, 0.1)];
    let v = normalize_coop(&coop, &raw).unwrap();
    assert!((v[0].re - s0).abs() < 1e-15);
    assert_eq!(v[2..], raw[2..]);
}

#[test]
fn normalized_outputs_are_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let inst = small(ScenarioKind::Ic, 3, 3, 2, &mut rng);
        let v = normalize_ic(&inst, &rand_c(&mut rng, 6, 5.0)).unwrap();
        assert!(constraint_residual(&inst, &Solution::Beams(v)).unwrap() <= 1e-12);
        let ibc = small(ScenarioKind::Ibc, 2, 4, 2, &mut rng);
        let raw: Vec<f64> = (0..4).map(|_| rng.random_range(-20.0..20.0)).collect();
        let p = normalize_ibc(&ibc, &raw).unwrap();
        assert!(p.iter().all(|&x| x >= 0.0 && x <= ibc.budgets[0]));
        assert!(constraint_residual(&ibc, &Solution::Powers(p)).unwrap() <= 1e-12);
        let coop = small(ScenarioKind::Coop, 3, 2, 2, &mut rng);
        let v = normalize_coop(&coop, &rand_c(&mut rng, 12, 5.0)).unwrap();
        assert!(constraint_residual(&coop, &Solution::CoopBeams(v)).unwrap() <= 1e-12);
    }
}

#[test]
fn residual_reports_violations() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inst = small(ScenarioKind::Ibc, 2, 4, 2, &mut rng);
    let p = inst.budgets[0];
    let r = constraint_residual(&inst, &Solution::Powers(vec![p, 0.5, -0.25, 0.0])).unwrap();
    assert!((r - 0.5).abs() < 1e-12);
    assert_eq!(
        constraint_residual(&inst, &Solution::Powers(vec![0.0; 4])).unwrap(),
        0.0
    );
}

#[test]
fn sum_rate_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        for inst in [
            small(ScenarioKind::Ic, 4, 4, 2, &mut rng),
            small(ScenarioKind::Ibc, 2, 4, 3, &mut rng),
            small(ScenarioKind::Coop, 3, 2, 2, &mut rng),
        ] {
            let s = random_solution(&inst, &mut rng);
            let p = NodePermutation::random(inst.num_tx(), inst.num_rx(), &mut rng);
            let pi = inst.permute(&p).unwrap();
            let ps = s.permute(&inst, &p).unwrap();
            let a = evaluate(&inst, &s).unwrap().sum_rate;
            let b = evaluate(&pi, &ps).unwrap().sum_rate;
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{:?}: {a} vs {b}", inst.kind);
        }
    }
}

#[test]
fn tape_sum_rate_matches_plain_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        for inst in [
            small(ScenarioKind::Ic, 3, 3, 2, &mut rng),
            small(ScenarioKind::Ibc, 2, 4, 3, &mut rng),
            small(ScenarioKind::Coop, 3, 2, 2, &mut rng),
        ] {
            let s = random_solution(&inst, &mut rng);
            let obj = TapeObjective::new(&inst).unwrap();
            let vars = obj.to_vars(&inst, &s).unwrap();
            assert_eq!(obj.solution(&inst, &vars).unwrap(), s);
            let mut tape = Tape::new();
            let v = tape.constant(vars);
            let r = obj.sum_rate(&mut tape, v).unwrap();
            let plain = evaluate(&inst, &s).unwrap().sum_rate;
            let t = tape.value(r).data()[0];
            assert!((t - plain).abs() <= 1e-12 * plain.max(1.0), "{t} vs {plain}");
        }
    }
}

#[test]
fn sum_rate_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        for inst in [
            small(ScenarioKind::Ic, 2, 2, 2, &mut rng),
            small(ScenarioKind::Ibc, 2, 4, 3, &mut rng),
            small(ScenarioKind::Coop, 2, 2, 2, &mut rng),
        ] {
            let obj = TapeObjective::new(&inst).unwrap();
            let [r, c] = obj.var_shape();
            // raw variables pass through the projection too
            let x: Vec<f64> = (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect();
            let value = |xs: &[f64], grad: bool| {
                let mut tape = Tape::new();
                let v = tape.leaf(Tensor::matrix(r, c, xs.to_vec()).unwrap().with_grad());
                let n = obj.normalize(&mut tape, v).unwrap();
                let s = obj.sum_rate(&mut tape, n).unwrap();
                let val = tape.value(s).data()[0];
                (val, grad.then(|| tape.backward(s).unwrap().tensor(v).into_data()))
            };
            let g = value(&x, true).1.unwrap();
            let rep = fd_check(&x, &g, 1e-6, 1e-3, |xs| Ok(value(xs, false).0)).unwrap();
            assert!(rep.max_rel_err <= 1e-6, "{:?}: {rep:?}", inst.kind);
        }
    }
}
