//! Symbolic intruder model: terms modulo XOR, knowledge closure, a small
//! protocol description language and a bounded attack search.

pub mod concrete;
pub mod knowledge;
pub mod search;
pub mod spec;
pub mod term;

pub use concrete::{replay_concretely, CrossCheck};
pub use knowledge::{derivable, KnowledgeSet};
pub use search::{search_attacks, AttackTrace, SearchConfig, SearchResult, TraceStep, Violation};
pub use spec::{corpus_spec, ProtocolSpec, Scenario, CORPUS};
pub use term::{normalize, Term};
