//! Heterogeneous retrieval-augmented generation.
//!
//! Every chunk of a corpus gets two representations: an enriched retrieval
//! view (chunk text plus document/section leads, neighbouring chunks and
//! document metadata) that is embedded and searched, and a bare generation
//! view that is the only thing placed into a generator prompt. The crate also
//! trains per-level embedding adapters with InfoNCE and evaluates retrieval
//! (nDCG) and QA (EM, token F1, answer recall).
//!
//! Batch work (embedding, index scans, per-query evaluation) is data-parallel
//! through rayon when the `parallel` feature is on (the default) and falls
//! back to sequential loops otherwise; results are identical either way.

pub mod app;
pub mod corpus;
pub mod embed;
pub mod encoding;
pub mod error;
pub mod eval;
mod http;
pub mod index;
pub mod io;
pub mod par;
pub mod rag;
pub mod tuning;
pub mod views;

pub use error::{Error, Result};
pub use http::JsonClient;
