//! Timing-free view of a conversation, used for golden-file comparisons and
//! for parity checks between the CLI and the HTTP service.

use serde::{Deserialize, Serialize};

use super::{Flag, Session, SessionParams, TurnRecord};
use crate::read::Subcontext;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub case_id: String,
    pub m: usize,
    pub params: SessionParams,
    pub turns: Vec<TranscriptTurn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub k: usize,
    pub human: String,
    pub j_star: usize,
    pub similarity: Vec<f64>,
    pub subcontext: Subcontext,
    pub candidates: Vec<String>,
    pub rho: Vec<f64>,
    pub selected: usize,
    pub reply: String,
    pub flags: Vec<Flag>,
}

impl From<&TurnRecord> for TranscriptTurn {
    fn from(t: &TurnRecord) -> Self {
        Self {
            k: t.k,
            human: t.human.clone(),
            j_star: t.j_star,
            similarity: t.similarity.clone(),
            subcontext: t.subcontext.clone(),
            candidates: t.candidates.clone(),
            rho: t.rho.clone(),
            selected: t.selected,
            reply: t.reply.clone(),
            flags: t.flags.clone(),
        }
    }
}

impl Transcript {
    pub fn new(case_id: impl Into<String>, m: usize, params: SessionParams, turns: &[TurnRecord]) -> Self {
        Self {
            case_id: case_id.into(),
            m,
            params,
            turns: turns.iter().map(TranscriptTurn::from).collect(),
        }
    }

    /// `None` for an unstarted session.
    pub fn of(session: &Session) -> Option<Self> {
        Some(Self::new(
            session.case_id()?,
            session.m()?,
            session.params().clone(),
            session.turns(),
        ))
    }

    /// Pretty JSON with a trailing newline; the golden-file format.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("transcript serializes");
        s.push('\n');
        s
    }
}
