//! Alignment of correlated attributed Erdős–Rényi graph pairs.
//!
//! The pipeline has three stages:
//!
//! 1. [`tree_counting`] scores every user pair by counting signed attributed
//!    trees (a root user, `k` disjoint two-hop paths ending at a fixed set of
//!    `k` attributes) and keeps the pairs whose score clears a threshold.
//! 2. [`refinement`] greedily extends that partial alignment to a full
//!    permutation using matched common user neighbours, and optionally common
//!    attribute neighbours.
//! 3. [`bipartite_map`] covers the attribute-dominated regime with a
//!    maximum-likelihood assignment over user-attribute edges only.
//!
//! [`graph_model`] samples the correlated pairs, [`analysis`] holds the closed
//! form moments and condition reports, and [`harness`] drives seeded Monte
//! Carlo experiments over parameter grids.

#![forbid(unsafe_code)]

pub mod analysis;
pub mod bipartite_map;
pub mod error;
pub mod graph_model;
pub mod harness;
pub mod pair_io;
pub mod refinement;
pub mod tree_counting;
pub mod verify;

mod bitmatrix;
pub mod combinatorics;

pub use error::{Error, Result};
pub use graph_model::{
    generate_pair, generate_pair_with, seeded_mode_params, AttributedGraph, AttributedGraphPair,
    ModelParams, PartialMapping, Permutation, TruthPolicy,
};
pub use pair_io::{read_pair, write_pair};
