//! Active learning of sound deterministic negotiations.
//!
//! [`teacher::Teacher`] answers membership and equivalence queries about a target.
//! [`paths::learn`] asks membership queries about local paths; [`exec::learn`] asks only
//! about executions and keeps every hypothesis sound before it is submitted.

pub mod exec;
pub mod paths;
pub mod teacher;

pub use teacher::{EquivAnswer, QueryStats, Sign, Teacher, TeacherError};
