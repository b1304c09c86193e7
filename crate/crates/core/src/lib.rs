//! Lexical hold-out evaluation harness for token-level binary classifiers.

pub mod corpus;
pub mod lemma_stats;
pub mod split;
pub mod freq;
pub mod metrics;
pub mod probes;
pub mod config;
pub mod layout;
pub mod results;
pub mod report;
pub mod runner;
pub mod pipeline;
