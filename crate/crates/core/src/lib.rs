//! Cost-aware SPJ query engine over unstructured documents.
//!
//! Attributes are extracted lazily by an LLM provider from retrieved text
//! segments; the planner orders filters and joins per document so that the
//! expected number of tokens read is minimal.

pub mod bench;
pub mod catalog;
pub mod config;
pub mod exec;
pub mod extract;
pub mod index;
pub mod planner;
pub mod query;
pub mod stats;
pub mod text;
pub mod workload;
