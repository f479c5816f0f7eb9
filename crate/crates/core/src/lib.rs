//! Large/small model collaboration for search query correction.
//!
//! A query first passes a correction trigger that filters out queries which
//! are already correct. Queries that need work go to a cheap small corrector;
//! an LLM trigger decides whether to escalate to the expensive LLM corrector,
//! and a fallback trigger decides whether to discard every rewrite and return
//! the original query.
//!
//! The crate is corrector-agnostic: correctors are opaque behind
//! [`pipeline::Corrector`], and triggers are hashed character n-gram logistic
//! models ([`trigger::TriggerModel`]). Around the cascade sit the pieces needed
//! to train and evaluate it: edit extraction ([`edits`]), ERRANT-style scoring
//! ([`scorer`]), training-set construction ([`labels`]), baseline routing
//! policies ([`policies`]) and a file-driven experiment harness ([`harness`]).

pub mod corpus;
pub mod correctors;
pub mod edits;
mod error;
pub mod harness;
pub mod jsonl;
pub mod labels;
pub mod pipeline;
pub mod policies;
pub mod scorer;
pub mod trigger;

pub use error::{Error, Result};
