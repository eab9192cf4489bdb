//! Dialogue corpora in a normalized form.
//!
//! Raw MultiWoZ JSON and PersonaChat text are parsed into
//! [`NormalizedDialogue`] values, which are stored as NDF: one JSON object
//! per line, UTF-8, LF line endings.

mod context;
mod multiwoz;
mod personachat;
mod tokenize;
mod vocab;

use std::collections::BTreeSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use context::{make_contexts, Context};
pub use multiwoz::{belief_state, parse_multiwoz};
pub use personachat::parse_personachat;
pub use tokenize::{tokenize, SPLIT_PUNCTUATION};
pub use vocab::{build_vocabulary, Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("parse error{} at byte {offset}: {message}", .dialogue_id.as_ref().map(|d| format!(" in dialogue {d}")).unwrap_or_default())]
    Parse { dialogue_id: Option<String>, offset: usize, message: String },
    #[error("format error on line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid dialogue {id}: {message}")]
    Invalid { id: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::User => Speaker::System,
            Speaker::System => Speaker::User,
        }
    }
}

/// A (topic, slot, value) triple newly supplied by the user.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InfoEvent {
    pub topic: String,
    pub slot: String,
    pub value: String,
}

impl InfoEvent {
    pub fn new(topic: &str, slot: &str, value: &str) -> Self {
        InfoEvent { topic: topic.to_lowercase(), slot: slot.to_lowercase(), value: value.to_lowercase() }
    }
}

/// Placeholder used when an act carries no slot or no value.
pub const NONE_PLACEHOLDER: &str = "none";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DialogueAct {
    pub act_name: String,
    pub slot_values: Vec<(String, String)>,
}

impl DialogueAct {
    pub fn new(name: &str, slot_values: &[(&str, &str)]) -> Self {
        DialogueAct {
            act_name: name.to_lowercase(),
            slot_values: slot_values.iter().map(|(s, v)| (s.to_lowercase(), v.to_lowercase())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub events: Vec<InfoEvent>,
    #[serde(default)]
    pub acts: Vec<DialogueAct>,
    #[serde(default)]
    pub persona: Option<Vec<String>>,
}

impl Turn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Turn { speaker, text, tokens, events: Vec::new(), acts: Vec::new(), persona: None }
    }

    pub fn with_events(mut self, events: Vec<InfoEvent>) -> Self {
        self.events = events;
        self
    }

    pub fn with_acts(mut self, acts: Vec<DialogueAct>) -> Self {
        self.acts = acts;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedDialogue {
    pub id: String,
    pub domain_goals: BTreeSet<String>,
    pub turns: Vec<Turn>,
}

impl NormalizedDialogue {
    /// Checks the structural invariants every parser and generator must uphold.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |message: String| Err(CorpusError::Invalid { id: self.id.clone(), message });
        for (i, t) in self.turns.iter().enumerate() {
            if i > 0 && t.speaker == self.turns[i - 1].speaker {
                return bad(format!("turns {} and {i} share speaker {:?}", i - 1, t.speaker));
            }
            if t.tokens != tokenize(&t.text) {
                return bad(format!("turn {i} tokens do not match its text"));
            }
            if t.speaker == Speaker::System && !t.events.is_empty() {
                return bad(format!("system turn {i} carries events"));
            }
            if t.speaker == Speaker::User && !t.acts.is_empty() {
                return bad(format!("user turn {i} carries acts"));
            }
            for e in &t.events {
                for f in [&e.topic, &e.slot, &e.value] {
                    if f.is_empty() || *f != f.to_lowercase() {
                        return bad(format!("turn {i} event field {f:?} is empty or not lowercase"));
                    }
                }
            }
            for a in &t.acts {
                if a.act_name != a.act_name.to_lowercase() {
                    return bad(format!("turn {i} act {:?} is not lowercase", a.act_name));
                }
            }
        }
        Ok(())
    }

    /// True when at least one system turn carries acts.
    pub fn has_acts(&self) -> bool {
        self.turns.iter().any(|t| !t.acts.is_empty())
    }
}

/// Dialogues plus the non-fatal issues met while parsing them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutput {
    pub dialogues: Vec<NormalizedDialogue>,
    pub warnings: Vec<String>,
}

/// Serializes dialogues as NDF.
pub fn write_ndf(dialogues: &[NormalizedDialogue]) -> String {
    let mut out = String::new();
    for d in dialogues {
        out.push_str(&serde_json::to_string(d).expect("dialogue serializes"));
        out.push('\n');
    }
    out
}

/// Reads NDF; blank lines are ignored.
pub fn read_ndf<R: BufRead>(reader: R) -> Result<Vec<NormalizedDialogue>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: NormalizedDialogue =
            serde_json::from_str(&line).map_err(|e| CorpusError::Format { line: i + 1, message: e.to_string() })?;
        out.push(d);
    }
    Ok(out)
}
