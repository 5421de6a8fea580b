//! Online three-tier association of partial-view object detections into a
//! compact spatial-temporal store, with query evaluation, a patrol
//! simulator and baselines.

pub mod dbscan;
pub mod error;
pub mod eval;
pub mod model;
pub mod perception;
pub mod query;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod store;

pub use error::{D3aError, Result};
