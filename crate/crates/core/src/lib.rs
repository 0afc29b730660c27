//! Clique-tree density models for categorical data.
//!
//! Pairwise normalized mutual information is thresholded into a dependency
//! graph, which is triangulated, decomposed into maximal cliques, and joined
//! into a clique tree. Marginal tables on the cliques and separators give a
//! normalized joint distribution. The threshold is chosen by maximizing the
//! likelihood of a held-out split, and the fitted model drives anomaly
//! scoring and clique-based clustering.

pub mod analysis;
pub mod cli;
pub mod cliquetree;
pub mod dataset;
pub mod depgraph;
pub mod error;
pub mod information;
pub mod learn;
pub mod model;

pub use error::{Error, Result};
