//! Retrieval-augmented prompt optimization for text-to-video models.
//!
//! The library turns short user prompts into prompts shaped like a video
//! model's training captions. It builds a relation graph of scenes and
//! modifiers from a caption corpus, retrieves the most relevant modifiers
//! for an input prompt, merges them in one at a time, refactors the result,
//! runs a parallel direct-rewrite branch, and lets a discriminator pick the
//! better candidate. Builders for the two instruction-tuning datasets and a
//! corpus length analyzer round out the toolkit.

pub mod analytics;
pub mod dataset;
pub mod embed;
pub mod gateway;
pub mod graph;
pub mod io;
pub mod pipeline;
pub mod retrieval;
pub mod testkit;
pub mod text;
