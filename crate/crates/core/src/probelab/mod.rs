//! Probe-task labels derived from normalized dialogues.

mod audit;
mod derive;
mod space;
mod stopwords;
mod tasks;

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NormalizedDialogue;
use crate::parallel::{map_slice, Execution};

pub use audit::{audit_distribution, entropy_and_majority, AuditReport, TaskAudit};
pub use derive::{
    derive_downstream, derive_goal_info, derive_personal_info, derive_word_cont, mid_frequency_words, word_band,
    Downstream, GoalInfo, LabelSetup, LocBuckets, RawLabel, RawRecord, NONE_LABEL, OTHER_LABEL, REFERENCE_TOKENS,
};
pub use space::{LabelSpace, MapOutcome};
pub use stopwords::{is_stopword, STOPWORDS};
pub use tasks::{Applicability, DatasetKind, ProbeTaskId, TaskKind};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("format error on line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BucketMode {
    #[default]
    EqualWidth,
    EqualMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WordSource {
    #[default]
    Context,
    Target,
}

/// Which earlier user turns count when looking for repeated information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepeatHorizon {
    #[default]
    AnyEarlier,
    PreviousUserTurn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub buckets: usize,
    pub bucket_mode: BucketMode,
    pub count_cap: u32,
    pub value_cap: usize,
    /// Explicit mid-frequency band; `None` scales `[1000, 3000]` by corpus size.
    pub word_band: Option<(u64, u64)>,
    pub word_set_size: usize,
    pub word_source: WordSource,
    pub repeat_horizon: RepeatHorizon,
    pub window: usize,
    /// Restrict derivation to these tasks.
    pub tasks: Option<Vec<ProbeTaskId>>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            buckets: 5,
            bucket_mode: BucketMode::EqualWidth,
            count_cap: 10,
            value_cap: 200,
            word_band: None,
            word_set_size: 500,
            word_source: WordSource::Context,
            repeat_horizon: RepeatHorizon::AnyEarlier,
            window: 100,
            tasks: None,
        }
    }
}

/// A class index / capped count, or a sorted set of label indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "label")]
    Single(u32),
    #[serde(rename = "labels")]
    Set(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeLabelRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub task: ProbeTaskId,
    #[serde(flatten)]
    pub label: Label,
}

#[derive(Debug, Clone)]
pub struct DerivedLabels {
    pub setup: LabelSetup,
    pub space: LabelSpace,
    pub train: Vec<ProbeLabelRecord>,
    pub valid: Vec<ProbeLabelRecord>,
    pub train_audit: AuditReport,
    pub valid_audit: AuditReport,
}

/// Raw labels for many dialogues, in input order.
pub fn derive_raw(setup: &LabelSetup, dialogues: &[NormalizedDialogue], exec: Execution) -> Vec<RawRecord> {
    map_slice(exec, dialogues, |d| setup.derive_dialogue(d)).into_iter().flatten().collect()
}

fn encode_all(space: &LabelSpace, raw: &[RawRecord]) -> Result<(Vec<ProbeLabelRecord>, Vec<MapOutcome>), LabelError> {
    raw.iter().map(|r| space.encode(r)).collect::<Result<Vec<_>, _>>().map(|v| v.into_iter().unzip())
}

/// Fits setup and label space on `train`, then labels both splits.
pub fn derive_labels(
    train: &[NormalizedDialogue],
    valid: &[NormalizedDialogue],
    dataset: DatasetKind,
    config: &LabelConfig,
    exec: Execution,
) -> Result<DerivedLabels, LabelError> {
    let setup = LabelSetup::fit(train, dataset, config)?;
    let train_raw = derive_raw(&setup, train, exec);
    let space = LabelSpace::build(&train_raw, &setup.tasks(), config);
    let valid_raw = derive_raw(&setup, valid, exec);
    let (train, train_out) = encode_all(&space, &train_raw)?;
    let (valid, valid_out) = encode_all(&space, &valid_raw)?;
    let train_audit = audit_distribution(&train, &train_out, &space);
    let valid_audit = audit_distribution(&valid, &valid_out, &space);
    Ok(DerivedLabels { setup, space, train, valid, train_audit, valid_audit })
}

pub fn write_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("record serializes"));
        s.push('\n');
    }
    s
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(reader: R) -> Result<Vec<T>, LabelError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LabelError::Format { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{InfoEvent, Speaker, Turn};
    use std::collections::BTreeSet;

    #[test]
    fn record_json_shape() {
        let r = ProbeLabelRecord {
            dialogue_id: "d".into(),
            turn_index: 2,
            task: ProbeTaskId::AllSlots,
            label: Label::Set(vec![0, 3]),
        };
        let js = serde_json::to_string(&r).unwrap();
        assert_eq!(js, r#"{"dialogue_id":"d","turn_index":2,"task":"AllSlots","labels":[0,3]}"#);
        let s = ProbeLabelRecord { label: Label::Single(4), task: ProbeTaskId::NumAllInfo, ..r.clone() };
        assert!(serde_json::to_string(&s).unwrap().ends_with(r#""task":"NumAllInfo","label":4}"#));
        let back: Vec<ProbeLabelRecord> = read_jsonl(write_jsonl(&[r.clone(), s.clone()]).as_bytes()).unwrap();
        assert_eq!(back, [r, s]);
    }

    fn dialogue(id: &str, topics: &[&str]) -> NormalizedDialogue {
        let mut turns = Vec::new();
        for (i, t) in topics.iter().enumerate() {
            turns.push(Turn::new(Speaker::User, format!("{t} please")).with_events(vec![InfoEvent::new(
                t,
                "area",
                &format!("v{i}"),
            )]));
            turns.push(Turn::new(Speaker::System, "sure"));
        }
        NormalizedDialogue { id: id.into(), domain_goals: BTreeSet::new(), turns }
    }

    #[test]
    fn chit_chat_tasks_never_appear_on_goal_corpora() {
        let train = vec![dialogue("a", &["hotel", "taxi"]), dialogue("b", &["hotel"])];
        let out =
            derive_labels(&train, &train, DatasetKind::GoalOriented, &LabelConfig::default(), Execution::Sequential)
                .unwrap();
        for r in out.train.iter().chain(&out.valid) {
            assert!(r.task.applicability().covers(DatasetKind::GoalOriented));
        }
        assert!(out.space.names(ProbeTaskId::WordCont).is_none());
        assert_eq!(out.train, out.valid);
    }

    #[test]
    fn parallel_matches_sequential() {
        let train: Vec<_> =
            (0..20).map(|i| dialogue(&format!("d{i}"), &["hotel", "taxi", "train"][..1 + i % 3])).collect();
        let cfg = LabelConfig::default();
        let a = derive_labels(&train, &train, DatasetKind::GoalOriented, &cfg, Execution::Sequential).unwrap();
        let b = derive_labels(&train, &train, DatasetKind::GoalOriented, &cfg, Execution::Parallel).unwrap();
        assert_eq!(write_jsonl(&a.train), write_jsonl(&b.train));
    }

    #[test]
    fn chit_chat_with_empty_band_is_a_config_error() {
        let d = NormalizedDialogue {
            id: "c".into(),
            domain_goals: BTreeSet::new(),
            turns: vec![Turn::new(Speaker::User, "hi"), Turn::new(Speaker::System, "yo")],
        };
        let cfg = LabelConfig { word_band: Some((100, 200)), ..LabelConfig::default() };
        assert!(matches!(
            derive_labels(&[d.clone()], &[d], DatasetKind::ChitChat, &cfg, Execution::Sequential),
            Err(LabelError::Config(_))
        ));
    }
}
