//! Evaluation: metrics, synthetic corpora with planted facts, and a
//! benchmark runner comparing the tree memory against flat chunk RAG.

pub mod bench;
pub mod corpus;
pub mod metrics;

pub use bench::{prepare, render_table, run_benchmark, run_suite, BenchOptions, BenchReport, FlatRag, SystemKind};
pub use corpus::{BenchQuery, CorpusSpec, PlantedFact, SyntheticCorpus};
pub use metrics::{bleu1, leakage, retrieval_prf, token_f1, Leakage, MeanStderr, Prf, ScopedReturn};
