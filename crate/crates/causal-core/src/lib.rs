//! Causal analysis of security violations in concurrent protocol runs.
//!
//! Given a protocol — a set of threads exchanging messages and computing
//! with symbolic cryptography — a security property, and the log of a run
//! that violated the property, this crate determines which logged actions
//! actually caused the violation, in two phases:
//!
//! 1. **Phase one** finds the minimal projected prefixes of the log that
//!    are sufficient for the violation: every run containing such a prefix
//!    (thread by thread) violates the property, and nothing smaller does.
//! 2. **Phase two** minimizes further to projected *sublogs*: individual
//!    actions are dropped and the programs counterfactually rewritten as if
//!    those actions had produced arbitrary values. A sublog is an actual
//!    cause when the violation survives every such counterfactual.
//!
//! The threads mentioned in an actual cause form a *program cause*; joint
//! accountability then classifies each as norm-following, deviant but
//! harmless, or implicated, by comparison against the normative programs.

pub mod term;
pub mod lang;
pub mod parse;
pub mod label;
pub mod semantics;
pub mod explore;
pub mod property;
pub mod replay;
pub mod cause;
pub mod accountability;
pub mod report;
