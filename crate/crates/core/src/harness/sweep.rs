use serde::Serialize;

use super::{evaluate, train, Checkpoint};
use crate::baselines::{Baseline, SolverConfig};
use crate::chansim::{ScenarioConfig, ScenarioKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NPairs,
    NUes,
    NBss,
    NoiseDbm,
    FieldSize,
    BudgetDbm,
    NTrainSamples,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "n_pairs" => SweepAxis::NPairs,
            "n_ues" => SweepAxis::NUes,
            "n_bss" => SweepAxis::NBss,
            "noise_dBm" | "noise_dbm" => SweepAxis::NoiseDbm,
            "field_size" => SweepAxis::FieldSize,
            "budget_dBm" | "budget_dbm" => SweepAxis::BudgetDbm,
            "n_train_samples" => SweepAxis::NTrainSamples,
            _ => {
                return Err(Error::Config(format!(
                    "unknown axis '{s}' (n_pairs, n_ues, n_bss, noise_dBm, field_size, budget_dBm, n_train_samples)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NPairs => "n_pairs",
            SweepAxis::NUes => "n_ues",
            SweepAxis::NBss => "n_bss",
            SweepAxis::NoiseDbm => "noise_dBm",
            SweepAxis::FieldSize => "field_size",
            SweepAxis::BudgetDbm => "budget_dBm",
            SweepAxis::NTrainSamples => "n_train_samples",
        }
    }

    fn count(self, v: f64) -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 && v <= 1e9 {
            Ok(v as usize)
        } else {
            Err(Error::Config(format!(
                "{} needs positive integers, got {v}",
                self.name()
            )))
        }
    }

    /// The scenario this axis value describes.
    pub fn apply(self, base: &ScenarioConfig, v: f64) -> Result<ScenarioConfig> {
        let mut s = base.clone();
        let mismatch = || {
            Err(Error::Config(format!(
                "axis {} does not apply to '{}' scenarios",
                self.name(),
                base.kind.name()
            )))
        };
        match (self, base.kind) {
            (SweepAxis::NPairs, ScenarioKind::Ic) => {
                s.n_bs = self.count(v)?;
                s.n_ue = s.n_bs;
            }
            (SweepAxis::NUes, ScenarioKind::Ibc | ScenarioKind::Coop) => s.n_ue = self.count(v)?,
            (SweepAxis::NBss, ScenarioKind::Ibc) => {
                // cells keep their UE count
                let q = base.n_ue / base.n_bs;
                s.n_bs = self.count(v)?;
                s.n_ue = s.n_bs * q;
            }
            (SweepAxis::NBss, ScenarioKind::Coop) => s.n_bs = self.count(v)?,
            (SweepAxis::NoiseDbm, _) => s.noise_dbm = v,
            (SweepAxis::FieldSize, _) => s.field_size = v,
            (SweepAxis::BudgetDbm, _) => s.budget_dbm = v,
            (SweepAxis::NTrainSamples, _) => {
                self.count(v)?;
            }
            _ => return mismatch(),
        }
        s.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: f64,
    pub samples: usize,
    pub engnn_sum_rate: f64,
    pub engnn_residual_max: f64,
    pub baseline: Option<&'static str>,
    pub baseline_sum_rate: Option<f64>,
    pub baseline_residual_max: Option<f64>,
    /// Learned over baseline mean sum rate.
    pub ratio: Option<f64>,
}

pub const SWEEP_HEADER: [&str; 9] = [
    "axis",
    "value",
    "samples",
    "engnn_sum_rate",
    "engnn_residual_max",
    "baseline",
    "baseline_sum_rate",
    "baseline_residual_max",
    "ratio",
];

/// Evaluates the checkpoint at every axis value on the same test seed. The
/// `n_train_samples` axis retrains from the checkpoint's echoed config with
/// a fixed pool of that many instances, then evaluates on `base`.
pub fn sweep(
    ck: &Checkpoint,
    base: &ScenarioConfig,
    axis: SweepAxis,
    values: &[f64],
    n_samples: usize,
    seed: u64,
    baseline: Option<(Baseline, &SolverConfig)>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let scenario = axis.apply(base, v)?;
        let res = if axis == SweepAxis::NTrainSamples {
            let mut cfg = ck.train.clone();
            cfg.train_samples = Some(axis.count(v)?);
            cfg.checkpoint = None;
            let trained = train(&cfg)?.checkpoint;
            evaluate(&trained, &scenario, n_samples, seed, baseline)?
        } else {
            evaluate(ck, &scenario, n_samples, seed, baseline)?
        };
        rows.push(SweepRow {
            axis: axis.name(),
            value: v,
            samples: n_samples,
            engnn_sum_rate: res.row.mean_sum_rate,
            engnn_residual_max: res.row.residual_max,
            baseline: baseline.map(|(b, _)| b.name()),
            baseline_sum_rate: res.baseline_mean,
            baseline_residual_max: res.baseline_residual_max,
            ratio: res.baseline_mean.map(|b| res.row.mean_sum_rate / b),
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: std::io::Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
