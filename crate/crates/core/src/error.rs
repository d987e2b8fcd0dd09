use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("descriptor is empty after tokenization")]
    DescriptorEmpty,
    #[error("node `{0}` has no descriptor")]
    MissingDescriptor(String),
    #[error("self-loop on node `{0}`")]
    SelfLoop(String),
    #[error("malformed input at line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("graph is not connected")]
    Disconnected,
    #[error("node {next} is not a neighbor of node {cur}")]
    NotNeighbor { cur: usize, next: usize },
    #[error("node `{0}` has no neighbors")]
    IsolatedNode(String),
    #[error("non-finite value in encoder input")]
    NonFinite,
    #[error("backward requested for node {node} ({side}) without a cached forward pass")]
    StaleBackward { node: usize, side: &'static str },
    #[error("cannot draw {needed} negatives from {available} eligible nodes")]
    NotEnoughNodes { needed: usize, available: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("only {achieved} of {target} edges can be removed without disconnecting the graph")]
    SplitInfeasible { achieved: usize, target: usize },
    #[error("found only {found} of {needed} negative pairs")]
    NotEnoughNegatives { found: usize, needed: usize },
    #[error("embedding has zero norm")]
    ZeroVector,
    #[error("score list is empty")]
    EmptyScores,
    #[error("operation not supported for encoder `{0}`")]
    UnsupportedEncoder(String),
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable identifier used by the CLI for machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DescriptorEmpty => "DescriptorEmpty",
            Error::MissingDescriptor(_) => "MissingDescriptor",
            Error::SelfLoop(_) => "SelfLoop",
            Error::MalformedLine { .. } => "MalformedLine",
            Error::UnknownNode(_) => "UnknownNode",
            Error::Disconnected => "Disconnected",
            Error::NotNeighbor { .. } => "NotNeighbor",
            Error::IsolatedNode(_) => "IsolatedNode",
            Error::NonFinite => "NonFinite",
            Error::StaleBackward { .. } => "StaleBackward",
            Error::NotEnoughNodes { .. } => "NotEnoughNodes",
            Error::NonFiniteGradient => "NonFiniteGradient",
            Error::SplitInfeasible { .. } => "SplitInfeasible",
            Error::NotEnoughNegatives { .. } => "NotEnoughNegatives",
            Error::ZeroVector => "ZeroVector",
            Error::EmptyScores => "EmptyScores",
            Error::UnsupportedEncoder(_) => "UnsupportedEncoder",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::ModelFormat(_) => "ModelFormat",
            Error::Io(_) => "Io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
