//! Unsupervised training, evaluation, generalisation sweeps and the
//! checkpoint format.

mod eval;
mod sweep;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chansim::{ScenarioConfig, ScenarioKind};
use crate::container::{Container, Value};
use crate::engnn::{EngnnConfig, EngnnParams};
use crate::error::{Error, Result};

pub use eval::{
    evaluate, evaluate_instances, run_baseline, run_baseline_instances, write_samples_csv, EvalResult, SampleRow,
    SAMPLES_HEADER,
};
pub use sweep::{sweep, write_sweep_csv, SweepAxis, SweepRow, SWEEP_HEADER};
pub use train::{train, TrainOutcome};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ENGC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn default_decay() -> f64 {
    0.99
}

fn default_epsilon() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// When set, the step size decays geometrically to this value over the
    /// run; otherwise it stays at `learning_rate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_learning_rate: Option<f64>,
    #[serde(default = "default_decay")]
    pub rmsprop_decay: f64,
    #[serde(default = "default_epsilon")]
    pub rmsprop_epsilon: f64,
    /// Cycle through a fixed pool of this many training instances instead
    /// of drawing fresh ones for every minibatch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub model: EngnnConfig,
}

impl TrainConfig {
    /// Desk-scale defaults: 100 epochs of 20 minibatches of 32 instances,
    /// step size decaying from 5e-3 to 1e-3.
    pub fn default_for(kind: ScenarioKind) -> Self {
        let scenario = ScenarioConfig::default_for(kind);
        let model = EngnnConfig::default_for(kind, scenario.n_antennas);
        Self {
            seed: 1,
            epochs: 100,
            batches_per_epoch: 20,
            batch_size: 32,
            learning_rate: 5e-3,
            final_learning_rate: Some(1e-3),
            rmsprop_decay: default_decay(),
            rmsprop_epsilon: default_epsilon(),
            train_samples: None,
            checkpoint: None,
            scenario,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs > 0 && (self.batches_per_epoch == 0 || self.batch_size == 0) {
            return bad("batches_per_epoch and batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.final_learning_rate.is_some_and(|f| !(f > 0.0)) {
            return bad("final_learning_rate must be positive".into());
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) || !(self.rmsprop_epsilon > 0.0) {
            return bad("rmsprop_decay must lie in (0, 1) and rmsprop_epsilon be positive".into());
        }
        if self.train_samples == Some(0) {
            return bad("train_samples must be at least 1".into());
        }
        self.scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate()?;
        check_compatible(&self.model, &self.scenario)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Feature widths implied by a scenario's graph view.
pub fn scenario_widths(s: &ScenarioConfig) -> [usize; 3] {
    let d_e = match s.kind {
        ScenarioKind::Ic => 4 * s.n_antennas,
        ScenarioKind::Ibc => 6,
        ScenarioKind::Coop => 2 * s.n_antennas,
    };
    [2, 2, d_e]
}

pub fn check_compatible(model: &EngnnConfig, s: &ScenarioConfig) -> Result<()> {
    let want = scenario_widths(s);
    let have = [model.d_tx, model.d_rx, model.d_e];
    if want != have {
        return Err(Error::Config(format!(
            "model input widths {have:?} do not fit '{}' graphs with N={} (need {want:?})",
            s.kind.name(),
            s.n_antennas
        )));
    }
    Ok(())
}

/// Trained (or initial) parameters with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub params: EngnnParams,
    pub epochs_done: usize,
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        c.push("train.config", Value::Text(self.train.to_toml()?));
        c.push("train.epochs_done", Value::scalar_u64(self.epochs_done as u64));
        self.params.to_container(&mut c)?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let train: TrainConfig =
            toml::from_str(c.text("train.config")?).map_err(|e| Error::format(format!("training config: {e}")))?;
        let params = EngnnParams::from_container(c)?;
        if params.config != train.model {
            return Err(Error::format("model config disagrees with the training config echo"));
        }
        Ok(Self {
            train,
            params,
            epochs_done: c.u64_scalar("train.epochs_done")? as usize,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        Self::from_container(&c).map_err(|e| match e {
            Error::Format { reason, .. } => Error::Format {
                path: Some(path.to_path_buf()),
                reason,
            },
            other => other,
        })
    }
}

/// One line of training or evaluation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub epoch: usize,
    /// Bits/s/Hz.
    pub mean_sum_rate: f64,
    pub residual_max: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: [&str; 5] = ["run_id", "epoch", "mean_sum_rate", "residual_max", "seconds"];

pub fn write_metrics_csv<W: std::io::Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
