//! Temporal knowledge graph reasoning with recurrently evolved entity and
//! relation embeddings.
//!
//! A history window of graph snapshots is encoded by a relation-aware GCN,
//! a time gate over entity states, and a GRU over relation states; ConvTransE
//! decoders then score candidate entities and relations for the next
//! timestamp.

pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod eval;
pub mod evolution;
pub mod model;
pub mod tensor;
pub mod training;
