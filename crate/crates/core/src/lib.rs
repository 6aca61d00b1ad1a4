//! Symbolic execution and bounded invariant checking for hierarchical
//! state-machine programs.
//!
//! The pipeline: [`model`] parses and validates a program, [`sos`] runs it
//! concretely, [`ssos`] runs one top-level step symbolically, [`sts`] collects
//! the symbolic steps into a transition system, and [`bmc`] unrolls that
//! system into SMT-LIB queries answered by an external solver ([`solver`]).
//! [`conformance`] cross-checks the symbolic layers against the concrete one.

pub mod bmc;
pub mod conformance;
pub mod lang;
pub mod model;
pub mod models;
pub mod smt;
pub mod solver;
pub mod sos;
pub mod ssos;
pub mod sts;
