//! Hierarchical long-term semantic memory.
//!
//! Documents hang off the leaves of a schema-aligned tree. Every node keeps a
//! multi-view memory (facets, QA pairs, summary) built from its leaves or
//! merged from its children, and queries are answered from a scoped subtree.

pub mod adaptation;
pub mod aggregation;
pub mod answer;
pub mod backend;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod eval;
pub mod indexer;
pub mod memory;
pub mod prompts;
pub mod retrieval;
pub mod service;
pub mod store;
pub mod text;
pub mod tree;

pub use error::{Error, Result};
