//! Scenario generation: geometry, path loss, Rayleigh fading, and the
//! instance/graph pairs of the three problem families.

mod dataset;
mod geometry;
mod scenario;

pub use dataset::{
    generate_dataset, instance_from_container, instance_to_container, read_dataset, write_dataset, DATASET_MAGIC,
    DATASET_VERSION,
};
pub use geometry::{
    channel, dbm_to_watts, path_loss_db, sample_geometry, watts_to_dbm, Geometry, GeometryConfig, MAX_ATTEMPTS,
    MIN_LINK_DISTANCE,
};
pub use scenario::{
    build_coop_instance, build_ibc_instance, build_ic_instance, inner, sample_rng, zero_forcing, IbcData,
    ScenarioConfig, ScenarioInstance, ScenarioKind, REF_BUDGET_DBM, REF_NOISE_DBM, ZF_MAX_CONDITION,
};
