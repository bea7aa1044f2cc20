//! Sequential entity alignment over pre-trained knowledge-graph embeddings.
//!
//! Aligning two KGs is treated as a sequential decision process: candidate
//! pairs (a source entity and one of its nearest target entities by cosine
//! similarity) are visited in order of similarity, and an agent decides
//! `match` or `mismatch` for each. Matching a pair excludes both entities
//! from the rest of the episode, so good decisions compound — the agent is
//! trained with REINFORCE plus a learned value baseline, with a curriculum
//! that skips hard pairs early in training.
//!
//! The crate provides:
//! - triple/alignment ingestion and embedding loaders ([`kg`], [`embedding`]),
//! - the policy network with exact analytic gradients ([`policy`]),
//! - the sequencing environment with exclusion, skipping, and difficulty
//!   scheduling ([`env`]),
//! - the REINFORCE trainer ([`trainer`]),
//! - evaluation strategies, metrics, oracles, and a synthetic task
//!   generator ([`eval`]),
//! - a CLI (`seqalign`) tying it together via a TOML run config.

pub mod commands;
pub mod config;
pub mod embedding;
pub mod env;
pub mod error;
pub mod eval;
pub mod kg;
pub mod policy;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
