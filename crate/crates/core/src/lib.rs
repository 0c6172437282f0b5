//! Ground-truth tooling for direction-conditioned occlusion reasoning in
//! synthetic plant scenes.

pub mod bundle;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod labeling;
pub mod metrics;
pub mod objectives;
pub mod pipeline;
pub mod raycast;
pub mod schema;
pub mod scorer;
pub mod scene;

pub use error::{Error, Result};
