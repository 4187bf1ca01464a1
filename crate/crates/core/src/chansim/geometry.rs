use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rejection-sampling budget for each BS and each UE placement.
pub const MAX_ATTEMPTS: usize = 10_000;

/// Cross-link distances are clamped here so path loss stays finite.
pub const MIN_LINK_DISTANCE: f64 = 1.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// `30.5 + 36.7·log10(d)` dB with `d` in meters.
pub fn path_loss_db(d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::invalid(format!("distance must be positive, got {d}")));
    }
    Ok(30.5 + 36.7 * d.log10())
}

/// Rayleigh-faded channel of `n` antennas at distance `d`.
pub fn channel<R: Rng + ?Sized>(d: f64, n: usize, rng: &mut R) -> Result<Vec<Complex64>> {
    let amp = 10f64.powf(-path_loss_db(d)? / 20.0);
    let s = amp * std::f64::consts::FRAC_1_SQRT_2;
    Ok((0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(s * re, s * im)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Side of the square field, meters.
    pub field_size: f64,
    pub min_bs_spacing: f64,
    /// `[min, max]` BS-to-anchored-UE distance, meters.
    pub serve_dist: [f64; 2],
    pub n_bs: usize,
    pub n_ue: usize,
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bs == 0 || self.n_ue == 0 {
            return Err(Error::Config("BS and UE counts must be at least 1".into()));
        }
        if !(self.field_size > 0.0) {
            return Err(Error::Config("field size must be positive".into()));
        }
        let [lo, hi] = self.serve_dist;
        if !(lo > 0.0 && lo <= hi && hi < self.field_size) {
            return Err(Error::Config(format!(
                "serving distance range [{lo}, {hi}] must be positive, ordered and inside a {} m field",
                self.field_size
            )));
        }
        if !(self.min_bs_spacing >= 0.0) {
            return Err(Error::Config("minimum BS spacing must be nonnegative".into()));
        }
        Ok(())
    }

    /// BS that UE `k` is placed around: UEs are spread evenly in index order.
    pub fn anchor(&self, k: usize) -> usize {
        k * self.n_bs / self.n_ue
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub bs: Vec<[f64; 2]>,
    pub ue: Vec<[f64; 2]>,
}

impl Geometry {
    pub fn distance(&self, m: usize, k: usize) -> f64 {
        let (a, b) = (self.bs[m], self.ue[k]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    pub fn min_bs_spacing(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.bs.len() {
            for j in i + 1..self.bs.len() {
                let (a, b) = (self.bs[i], self.bs[j]);
                best = best.min(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        best
    }
}

/// BSs uniform in the field with a minimum pairwise spacing; each UE uniform
/// (by area) in the serving annulus around its anchor BS, inside the field.
pub fn sample_geometry<R: Rng + ?Sized>(cfg: &GeometryConfig, rng: &mut R) -> Result<Geometry> {
    cfg.validate()?;
    let f = cfg.field_size;
    let mut bs: Vec<[f64; 2]> = Vec::with_capacity(cfg.n_bs);
    for _ in 0..cfg.n_bs {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let p = [rng.random_range(0.0..f), rng.random_range(0.0..f)];
            let ok = bs
                .iter()
                .all(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() >= cfg.min_bs_spacing);
            if ok {
                bs.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place {} BSs at least {} m apart in a {} m field after {} attempts",
                cfg.n_bs, cfg.min_bs_spacing, f, MAX_ATTEMPTS
            )));
        }
    }
    let [lo, hi] = cfg.serve_dist;
    let mut ue = Vec::with_capacity(cfg.n_ue);
    for k in 0..cfg.n_ue {
        let c = bs[cfg.anchor(k)];
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let r = rng.random_range(lo * lo..=hi * hi).sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let p = [c[0] + r * a.cos(), c[1] + r * a.sin()];
            if (0.0..=f).contains(&p[0]) && (0.0..=f).contains(&p[1]) {
                ue.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place UE {k} within [{lo}, {hi}] m of its BS inside the field after {} attempts",
                MAX_ATTEMPTS
            )));
        }
    }
    Ok(Geometry { bs, ue })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(n_bs: usize, n_ue: usize, spacing: f64) -> GeometryConfig {
        GeometryConfig {
            field_size: 2000.0,
            min_bs_spacing: spacing,
            serve_dist: [50.0, 250.0],
            n_bs,
            n_ue,
        }
    }

    #[test]
    fn unit_conversions() {
        assert!((dbm_to_watts(33.0) - 1.9952623149688795).abs() < 1e-12);
        assert!((dbm_to_watts(-99.0) / 1.2589254117941663e-13 - 1.0).abs() < 1e-12);
        for dbm in [-120.0, -99.0, 0.0, 21.0, 33.0, 46.0] {
            assert!((watts_to_dbm(dbm_to_watts(dbm)) - dbm).abs() <= 1e-12 * dbm.abs().max(1.0));
        }
    }

    #[test]
    fn path_loss_values() {
        assert!((path_loss_db(1.0).unwrap() - 30.5).abs() < 1e-12);
        assert!((path_loss_db(10.0).unwrap() - 67.2).abs() < 1e-12);
        assert!((10f64.powf(-path_loss_db(1.0).unwrap() / 20.0) - 0.02985).abs() < 1e-5);
        assert!(path_loss_db(0.0).is_err());
        assert!(path_loss_db(-3.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(channel(0.0, 2, &mut rng).is_err());
    }

    #[test]
    fn channel_power_matches_path_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 100.0;
        let expect = 10f64.powf(-path_loss_db(d).unwrap() / 10.0);
        let n = 4;
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            acc += channel(d, n, &mut rng)
                .unwrap()
                .iter()
                .map(|c| c.norm_sqr())
                .sum::<f64>()
                / n as f64;
        }
        let ratio = acc / draws as f64 / expect;
        assert!((ratio - 1.0).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn single_bs_always_succeeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let g = sample_geometry(&cfg(1, 3, 0.0), &mut rng).unwrap();
            assert!(g.bs[0].iter().all(|&v| (0.0..=2000.0).contains(&v)));
            for k in 0..3 {
                let d = g.distance(0, k);
                assert!((50.0 - 1e-9..=250.0 + 1e-9).contains(&d));
            }
        }
    }

    #[test]
    fn spacing_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let g = sample_geometry(&cfg(5, 5, 500.0), &mut rng).unwrap();
            assert!(g.min_bs_spacing() >= 500.0);
            for p in &g.ue {
                assert!(p.iter().all(|&v| (0.0..=2000.0).contains(&v)));
            }
        }
        let g = sample_geometry(&cfg(2, 2, 500.0), &mut rng).unwrap();
        assert!(g.min_bs_spacing() >= 500.0);
    }

    #[test]
    fn infeasible_spacing_reports_the_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = sample_geometry(&cfg(50, 50, 1500.0), &mut rng).unwrap_err();
        assert!(matches!(err, Error::Generation(ref m) if m.contains("apart")), "{err}");
    }

    #[test]
    fn anchors_spread_evenly() {
        let c = cfg(5, 2, 0.0);
        assert_eq!((c.anchor(0), c.anchor(1)), (0, 2));
        let c = cfg(3, 6, 0.0);
        let a: Vec<usize> = (0..6).map(|k| c.anchor(k)).collect();
        assert_eq!(a, vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = cfg(2, 2, 0.0);
        c.serve_dist = [300.0, 100.0];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.serve_dist = [50.0, 5000.0];
        assert!(c.validate().is_err());
        assert!(cfg(0, 1, 0.0).validate().is_err());
    }
}
