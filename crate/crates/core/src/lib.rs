//! Semantic initialization of categorical embeddings for sequential
//! transaction models.

pub mod dataset;
pub mod embed;
pub mod fusion;
pub mod model;
pub mod promptgen;
pub mod train;
pub mod txn;
pub mod vocab;
