//! Baseline CNN and multi-column tied network.

pub mod checkpoint;
pub mod config;
pub mod network;
pub mod tied;

pub use checkpoint::{load_checkpoint, load_into_config, save_checkpoint};
pub use config::{ColumnSpec, NetworkConfig, PoolKind};
pub use network::{CanonicalGradients, ForwardOutput, Model, Params, UpdateScope};
pub use tied::{MaterializedColumn, TiedConvLayer};

#[cfg(test)]
mod tests;
