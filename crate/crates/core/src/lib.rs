//! Content-aware node embeddings for text-attributed networks.
//!
//! Nodes carry short textual descriptors. Second-order random walks over the
//! graph supply (focus, context) pairs; a skip-gram objective with negative
//! sampling trains an encoder that builds each node's vectors from the word
//! vectors of its descriptor. Link prediction with random or close-proximity
//! negatives measures the result.

pub mod analysis;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod fixtures;
pub mod graph;
pub mod model_io;
mod seeding;
pub mod tensor;
pub mod trainer;
pub mod walks;

pub use encoders::{EncoderKind, EncoderModel, NodeInputs, Side};
pub use error::{Error, Result};
pub use exec::Exec;
pub use graph::{load_graph, tokenize, Graph, NodeId, Vocabulary};
pub use trainer::{train, TrainConfig};
pub use walks::WalkConfig;
