//! Edge-update heterogeneous graph neural network for radio resource management.

// `!(x > 0.0)` is how NaN gets rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over several parallel arrays read better than zipped iterators here.
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod chansim;
pub mod container;
pub mod engnn;
pub mod error;
pub mod harness;
pub mod hetgraph;
pub mod numkernel;
pub mod objectives;

pub use error::{Error, Result};
