use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Checkpoint, MetricsRow, TrainConfig};
use crate::chansim::ScenarioInstance;
use crate::engnn::{forward, normalize, EngnnParams};
use crate::error::{Error, Result};
use crate::hetgraph::HetGraph;
use crate::numkernel::{RmsProp, Tape, Tensor};
use crate::objectives::TapeObjective;

/// Parameter initialisation uses its own seed so it never shares a stream
/// with the training instances.
pub(super) const INIT_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// One row per epoch: mean training sum rate and worst residual.
    pub history: Vec<MetricsRow>,
}

struct SampleGrad {
    rate: f64,
    residual: f64,
    grads: Vec<Tensor>,
}

/// Sum rate and its parameter gradient for one instance.
fn sample_grad(params: &EngnnParams, inst: &ScenarioInstance, g: &HetGraph) -> Result<SampleGrad> {
    let obj = TapeObjective::new(inst)?;
    let topo = g.topology();
    let mut tape = Tape::new();
    let raw = forward(params, &mut tape, g, &topo)?;
    let vars = normalize(params, &mut tape, &raw, inst, &obj)?;
    let rate = obj.sum_rate(&mut tape, vars)?;
    let value = tape.value(rate).data()[0];
    let residual = {
        let s = obj.solution(inst, tape.value(vars))?;
        crate::objectives::constraint_residual(inst, &s)?
    };
    let grads = tape.backward(rate)?;
    Ok(SampleGrad {
        rate: value,
        residual,
        grads: tape.borrowed_grads(&grads, &params.tensors()),
    })
}

fn instances(cfg: &TrainConfig, indices: &[u64]) -> Result<Vec<(ScenarioInstance, HetGraph)>> {
    indices
        .par_iter()
        .map(|&i| {
            let inst = cfg.scenario.generate(cfg.seed, i)?;
            let g = inst.graph()?;
            Ok((inst, g))
        })
        .collect()
}

/// Unsupervised training: every minibatch maximises the mean sum rate of its
/// instances with one RMSProp ascent step. Per-sample gradients run in
/// parallel and are summed in sample order, so results do not depend on the
/// thread count.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_SEED_MIX);
    let mut params = EngnnParams::init(&cfg.model, &mut rng)?;
    let mut opt = RmsProp::new(cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon)?;
    let pool = match cfg.train_samples {
        Some(n) => Some(instances(cfg, &(0..n as u64).collect::<Vec<_>>())?),
        None => None,
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    let bs = cfg.batch_size as u64;
    let run_id = format!("{}-seed{}", cfg.scenario.kind.name(), cfg.seed);
    let mut done = 0;
    for epoch in 0..cfg.epochs {
        let (mut rate_sum, mut residual_max, mut count) = (0.0, 0.0f64, 0usize);
        for batch in 0..cfg.batches_per_epoch {
            let step = (epoch * cfg.batches_per_epoch + batch) as u64;
            opt.learning_rate = step_size(cfg, step);
            let indices: Vec<u64> = (step * bs..(step + 1) * bs).collect();
            let fresh;
            let data: Vec<&(ScenarioInstance, HetGraph)> = match &pool {
                Some(p) => indices.iter().map(|&i| &p[(i % p.len() as u64) as usize]).collect(),
                None => {
                    fresh = instances(cfg, &indices)?;
                    fresh.iter().collect()
                }
            };
            let results: Vec<Result<SampleGrad>> =
                data.par_iter().map(|(inst, g)| sample_grad(&params, inst, g)).collect();
            let mut total: Option<Vec<Tensor>> = None;
            let mut batch_rate = 0.0;
            for r in results {
                let r = r?;
                let finite = r.rate.is_finite() && r.grads.iter().all(Tensor::is_finite);
                if !finite {
                    return Err(Error::Training(format!(
                        "non-finite loss or gradient at epoch {epoch}, batch {batch}; \
                         reproduce with seed {} and instance indices {}..{}",
                        cfg.seed,
                        indices[0],
                        indices[indices.len() - 1] + 1
                    )));
                }
                batch_rate += r.rate;
                residual_max = residual_max.max(r.residual);
                match &mut total {
                    None => total = Some(r.grads),
                    Some(t) => {
                        for (acc, g) in t.iter_mut().zip(&r.grads) {
                            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                                *a += b;
                            }
                        }
                    }
                }
            }
            let n = data.len() as f64;
            let mut grads = total.expect("batch is non-empty");
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x /= n);
            }
            opt.step(&mut params.tensors_mut(), &grads)?;
            rate_sum += batch_rate;
            count += data.len();
        }
        done = epoch + 1;
        history.push(MetricsRow {
            run_id: run_id.clone(),
            epoch: done,
            mean_sum_rate: rate_sum / count as f64,
            residual_max,
            seconds: start.elapsed().as_secs_f64(),
        });
        if let Some(path) = &cfg.checkpoint {
            checkpoint(cfg, &params, done).save(path)?;
        }
    }
    let ck = checkpoint(cfg, &params, done);
    if let Some(path) = &cfg.checkpoint {
        ck.save(path)?;
    }
    Ok(TrainOutcome {
        checkpoint: ck,
        history,
    })
}

pub(super) fn step_size(cfg: &TrainConfig, step: u64) -> f64 {
    let total = (cfg.epochs * cfg.batches_per_epoch) as f64;
    match cfg.final_learning_rate {
        Some(end) if total > 1.0 => {
            let frac = step as f64 / (total - 1.0);
            cfg.learning_rate * (end / cfg.learning_rate).powf(frac)
        }
        _ => cfg.learning_rate,
    }
}

fn checkpoint(cfg: &TrainConfig, params: &EngnnParams, epochs_done: usize) -> Checkpoint {
    Checkpoint {
        train: cfg.clone(),
        params: params.clone(),
        epochs_done,
    }
}
