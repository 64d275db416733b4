//! Subcontext dialog pipeline.
//!
//! A conversation is routed once to a case file ([`seek`]), then each turn
//! retrieves the case sentences nearest to the human utterance ([`read`]),
//! generates candidate replies from that neighbourhood and keeps the one that
//! correlates best with the recent history ([`reply`]). [`engine`] runs the
//! loop; [`backends`] provides the local and remote model implementations.

pub mod backends;
pub mod corpus;
pub mod engine;
pub mod read;
pub mod reply;
pub mod seek;
pub mod textnum;

pub use corpus::{CaseEntry, CorpusIndex, SentenceSet};
pub use engine::{Engine, EngineConfig, EngineError, ParamOverrides, Session, SessionParams, TurnRecord};
pub use textnum::{DenseMatrix, DenseVector};
