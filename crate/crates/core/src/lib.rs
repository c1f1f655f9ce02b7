//! Sound deterministic negotiations.
//!
//! A negotiation is a graph of nodes, each owned by a set of processes. All processes
//! of a node jointly pick an outgoing action, after which each of them moves to its own
//! successor node. This crate covers the model and its semantics, the trace algebra of
//! executions, path automata and minimization, soundness checking, random generation,
//! and JSON/DOT input and output.

pub mod alphabet;
pub mod automata;
pub mod dot;
pub mod fixtures;
pub mod generate;
pub mod json;
pub mod model;
pub mod soundness;
pub mod traces;

pub use alphabet::{Act, AlphabetError, DistributedAlphabet, Local, Proc, ProcSet};
pub use model::{ConfigGraph, Configuration, ExecutionOutcome, ModelError, Negotiation, Node, Violation, DEFAULT_STATE_CAP};
pub use automata::PartialDfa;
pub use soundness::{PatternWitness, SearchLimits, SoundnessError};
pub use traces::Trace;
