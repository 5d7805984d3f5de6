//! Composed retrieval over slice-partitioned attribute embeddings: an
//! anchor item plus a text delta become a query, candidates come from an
//! exact or IVF index, specialist rankers and a metadata guard refine them,
//! and a Thought–Action–Critic–Speak planner drives the whole episode.

mod binio;
pub mod catalog;
pub mod composer;
pub mod constraints;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod guard;
pub mod index;
pub mod pipeline;
pub mod planner;
pub mod rankers;
pub mod schema;
pub mod session;

pub use error::{Error, Result};
