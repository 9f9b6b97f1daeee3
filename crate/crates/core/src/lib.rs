//! Multi-field neural document ranking over click logs.
//!
//! The crate covers the whole experimental loop: parsing recipe documents and
//! search logs into labeled query groups, encoding text fields by averaged term
//! embeddings, four scoring architectures (representation-based, implicit
//! concatenation, Hadamard field interactions, and a field-weighted
//! factorization machine), pairwise training, NDCG evaluation, and the
//! significance tests used to compare variants across temporal folds.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fields;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod report;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use fields::{FieldId, FieldPair, InteractionMode};
pub use model::{Architecture, ModelConfig, RankingModel};
