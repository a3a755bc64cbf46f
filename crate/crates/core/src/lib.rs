//! Warm-start laboratory for multi-objective configuration optimization.
//!
//! Four domain-knowledge strategies for LLM-generated warm starts (human
//! feedback loops, multi-stage prompting, progressive subspace refinement,
//! statistical scouting with retrieval) alongside random, GP-UCB and
//! few-shot baselines, all scored by Chebyshev distance on tabular pools
//! and ranked with Scott-Knott ESD.

pub mod data;
pub mod metrics;
pub mod stats;
pub mod llm;
pub mod baselines;
pub mod amp;
pub mod dapr;
pub mod hkma;
pub mod hdkp;
pub mod runner;
