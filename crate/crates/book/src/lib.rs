//! The guide's chapters, included so `cargo test` runs their snippets.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/tensors.md")]
pub mod tensors {}
#[doc = include_str!("../../../book/src/message-passing.md")]
pub mod message_passing {}
#[doc = include_str!("../../../book/src/synthetic-data.md")]
pub mod synthetic_data {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/decoding.md")]
pub mod decoding {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
