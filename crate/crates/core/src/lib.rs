//! Retrieval-based augmentation of relational tuple graphs.
//!
//! A database is loaded from CSV ([`relational`]), turned into a typed tuple
//! graph ([`graph`]), and every entity tuple is summarised as a bag of terms
//! collected by random walks with restart ([`documenter`]). Per-table BM25
//! indices ([`index`]) over those documents drive two augmentation passes
//! ([`augment`]): intra-table pairs for training and cross-table edges added
//! back into the graph. [`analytics`] measures the effect on graph topology
//! and [`pipeline`] wires the stages together over an output directory.

pub mod analytics;
pub mod augment;
pub mod documenter;
pub mod error;
pub mod fixtures;
pub mod graph;
pub mod index;
pub mod pipeline;
pub mod relational;
pub mod tokenizer;

pub use error::{Error, Result};
pub use graph::{EdgeType, HeteroGraph, NodeId, NodeRef, Relation};
pub use relational::{AttributeValue, ColumnKind, ColumnSpec, Database, Table, TableRole, Tuple};
