use std::path::PathBuf;

use thiserror::Error;

use crate::ids::NodeId;

/// Failures while reading or validating a scenario file.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl ConfigError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("slot {slot} is outside the simulated horizon of {n_slots} slots")]
    SlotOutOfRange { slot: usize, n_slots: usize },
    #[error("invariant violated at slot {slot}, node {node}: {detail}")]
    Invariant {
        slot: usize,
        node: NodeId,
        detail: String,
    },
    #[error("grid point {point}")]
    GridPoint {
        point: String,
        #[source]
        source: Box<SimError>,
    },
    #[error("no offered rate in [{lo}, {hi}] Mbps keeps the loss rate below {target}")]
    CalibrationInfeasible { lo: u32, hi: u32, target: f64 },
    #[error("empty parameter grid")]
    EmptyGrid,
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
