//! Stepwise: an on-demand guidance engine for screen-reader users.
//!
//! The engine captures desktop and screen-reader context, retrieves
//! software documentation, assembles accessibility-aware prompts for a
//! pluggable model, and serves step-navigable guidance over a
//! newline-delimited JSON protocol.
//!
//! Layout:
//! - [`context`]: trace buffer, chat history, truncation, per-feature bundles
//! - [`platform`]: desktop adapter trait, focus highlight, scripted simulator
//! - [`gateway`]: completion/embedding providers, mock, tokenizer, usage ledger
//! - [`kb`]: chunking, paraphrase variants, flat index, HyDE, persistence
//! - [`prompt`]: system instruction, templates, rendering, style lint
//! - [`session`]: the feature state machine and step navigation
//! - [`protocol`]: wire messages and the per-connection server
//! - [`eval`]: scenario replay and reporting

pub mod context;
pub mod eval;
pub mod gateway;
pub mod kb;
pub mod platform;
pub mod prompt;
pub mod protocol;
pub mod session;
