//! Multilingual word embeddings in a shared space, learned from
//! sentence-aligned parallel text with compositional sentence models, plus
//! cross-lingual document classification on top of them.

pub mod cli;
pub mod composition;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod objective;
pub mod synth;
pub mod training;
pub mod vocab;

pub use composition::CompositionKind;
pub use corpus::{ParallelCorpus, TextDocument};
pub use embeddings::{EmbeddingTable, ModelBundle};
pub use error::{Error, Result};
pub use training::{TrainConfig, TrainMode, Trainer};
pub use vocab::{TokenId, Vocabulary};
