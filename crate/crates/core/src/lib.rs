//! Document analytics directly on grammar-compressed text.
//!
//! A corpus is dictionary encoded ([`corpus`]), compressed into a Sequitur
//! context-free grammar ([`sequitur`]) and stored in a `.tdoc` container
//! ([`container`]). Analytics kernels ([`kernels`]) then run on the rule DAG
//! ([`dag`]) without expanding it back to text, reusing the result of every
//! rule across all of its occurrences. [`scheduler`] picks traversal variants
//! and runs partitions in parallel; [`oracle`] holds the uncompressed
//! reference implementations every kernel is tested against.

pub mod bench;
pub mod bitmap;
pub mod container;
pub mod corpus;
pub mod dag;
mod error;
pub mod kernels;
pub mod oracle;
pub mod result;
pub mod scheduler;
pub mod sequitur;

pub use error::{Error, Result};

/// Code of a terminal (word or file separator) or a rule identifier.
pub type Symbol = u32;
