//! Fixture builders shared by the criterion benches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use engnn_core::chansim::{ScenarioConfig, ScenarioInstance, ScenarioKind};
use engnn_core::engnn::{EngnnConfig, EngnnParams};
use engnn_core::hetgraph::HetGraph;

pub const FIXTURE_SEED: u64 = 2024;

/// `count` instances of the default scenario of `kind`, with their graphs.
pub fn instances(kind: ScenarioKind, count: usize) -> Vec<(ScenarioInstance, HetGraph)> {
    instances_of(&ScenarioConfig::default_for(kind), count)
}

pub fn instances_of(cfg: &ScenarioConfig, count: usize) -> Vec<(ScenarioInstance, HetGraph)> {
    (0..count as u64)
        .map(|i| {
            let inst = cfg.generate(FIXTURE_SEED, i).expect("default scenarios generate");
            let g = inst.graph().expect("generated instances have graphs");
            (inst, g)
        })
        .collect()
}

/// Randomly initialised parameters; inference cost does not depend on training.
pub fn params(kind: ScenarioKind, n_antennas: usize, width: Option<usize>) -> EngnnParams {
    let mut c = EngnnConfig::default_for(kind, n_antennas);
    if let Some(w) = width {
        c.set_widths(w);
    }
    EngnnParams::init(&c, &mut ChaCha8Rng::seed_from_u64(FIXTURE_SEED)).expect("default configs are valid")
}
