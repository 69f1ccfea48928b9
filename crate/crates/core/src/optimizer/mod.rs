//! Conjugate-gradient minimisation and the minibatch training schedule.

mod cg;
mod train;

pub use cg::{cg_minimize, CgOptions, CgOutcome};
pub use train::{init_params, rng_streams, train, BatchRecord, TraceRow, TrainOutcome, TrainedModel};
