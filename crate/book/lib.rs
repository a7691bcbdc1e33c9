//! The guide's chapters as module docs, so `cargo test` runs every snippet.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/tempering.md")]
pub mod tempering {}
#[doc = include_str!("src/flows.md")]
pub mod flows {}
#[doc = include_str!("src/targets.md")]
pub mod targets {}
#[doc = include_str!("src/training.md")]
pub mod training {}
#[doc = include_str!("src/evidence.md")]
pub mod evidence {}
#[doc = include_str!("src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
