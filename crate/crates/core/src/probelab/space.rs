use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::derive::{RawLabel, RawRecord, NONE_LABEL, OTHER_LABEL};
use super::{Label, LabelConfig, LabelError, ProbeLabelRecord, ProbeTaskId, TaskKind};

/// How a raw label landed in the space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MapOutcome {
    /// Labels sent to OTHER.
    pub other: usize,
    /// Set members discarded because the space lacks them.
    pub dropped: usize,
}

/// Per-task ordered label names, built from the training split only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<ProbeTaskId, Vec<String>>", into = "BTreeMap<ProbeTaskId, Vec<String>>")]
pub struct LabelSpace {
    names: BTreeMap<ProbeTaskId, Vec<String>>,
    index: HashMap<ProbeTaskId, HashMap<String, u32>>,
}

impl From<BTreeMap<ProbeTaskId, Vec<String>>> for LabelSpace {
    fn from(names: BTreeMap<ProbeTaskId, Vec<String>>) -> Self {
        let index = names
            .iter()
            .map(|(t, ns)| (*t, ns.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect()))
            .collect();
        LabelSpace { names, index }
    }
}

impl From<LabelSpace> for BTreeMap<ProbeTaskId, Vec<String>> {
    fn from(s: LabelSpace) -> Self {
        s.names
    }
}

fn ranked(freq: HashMap<&str, usize>, cap: Option<usize>) -> Vec<String> {
    let mut v: Vec<(&str, usize)> = freq.into_iter().collect();
    if let Some(cap) = cap {
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v.truncate(cap);
    }
    let mut names: Vec<String> = v.into_iter().map(|(n, _)| n.to_string()).collect();
    names.sort();
    names
}

impl LabelSpace {
    /// Builds the space for `tasks` from training-split raw records.
    ///
    /// Fixed spaces: UtteranceLoc `0..B`, counts `0..=cap`, IsMultiTopic
    /// `false/true`. Other categorical tasks list their training classes
    /// plus OTHER. Set tasks list their training labels plus NONE; value
    /// tasks keep only the `value_cap` most frequent and add OTHER.
    pub fn build(train: &[RawRecord], tasks: &[ProbeTaskId], cfg: &LabelConfig) -> Self {
        let mut freq: HashMap<ProbeTaskId, HashMap<&str, usize>> = HashMap::new();
        for r in train {
            let f = freq.entry(r.task).or_default();
            match &r.label {
                RawLabel::Class(c) => *f.entry(c).or_insert(0) += 1,
                RawLabel::Set(s) => s.iter().for_each(|x| *f.entry(x).or_insert(0) += 1),
                RawLabel::Count(_) => {}
            }
        }
        let mut names = BTreeMap::new();
        for &task in tasks {
            let mut f = freq.remove(&task).unwrap_or_default();
            let list = match (task, task.kind()) {
                (ProbeTaskId::UtteranceLoc, _) => (0..cfg.buckets).map(|b| b.to_string()).collect(),
                (ProbeTaskId::IsMultiTopic, _) => vec!["false".into(), "true".into()],
                (_, TaskKind::Count) => (0..=cfg.count_cap).map(|c| c.to_string()).collect(),
                (_, TaskKind::Categorical) => {
                    f.remove(OTHER_LABEL);
                    let mut l = ranked(f, None);
                    l.push(OTHER_LABEL.into());
                    l
                }
                (_, TaskKind::LabelSet) => {
                    f.remove(NONE_LABEL);
                    f.remove(OTHER_LABEL);
                    let capped = task.is_value_task();
                    let mut l = ranked(f, capped.then_some(cfg.value_cap));
                    l.push(NONE_LABEL.into());
                    if capped {
                        l.push(OTHER_LABEL.into());
                    }
                    l
                }
            };
            names.insert(task, list);
        }
        names.into()
    }

    pub fn tasks(&self) -> impl Iterator<Item = ProbeTaskId> + '_ {
        self.names.keys().copied()
    }

    pub fn names(&self, task: ProbeTaskId) -> Option<&[String]> {
        self.names.get(&task).map(Vec::as_slice)
    }

    pub fn num_labels(&self, task: ProbeTaskId) -> usize {
        self.names.get(&task).map_or(0, Vec::len)
    }

    pub fn id(&self, task: ProbeTaskId, name: &str) -> Option<u32> {
        self.index.get(&task)?.get(name).copied()
    }

    pub fn name(&self, task: ProbeTaskId, id: u32) -> Option<&str> {
        self.names.get(&task)?.get(id as usize).map(String::as_str)
    }

    /// Index of NONE for a set task.
    pub fn none_id(&self, task: ProbeTaskId) -> Option<u32> {
        self.id(task, NONE_LABEL)
    }

    pub fn encode(&self, raw: &RawRecord) -> Result<(ProbeLabelRecord, MapOutcome), LabelError> {
        let task = raw.task;
        let missing = || LabelError::Integrity(format!("label space has no entry for task {task}"));
        let n = self.num_labels(task);
        if n == 0 {
            return Err(missing());
        }
        let mut outcome = MapOutcome::default();
        let label = match (&raw.label, task.kind()) {
            (RawLabel::Count(c), TaskKind::Count) => Label::Single((*c).min(n as u32 - 1)),
            (RawLabel::Class(c), TaskKind::Categorical) => match self.id(task, c) {
                Some(i) => Label::Single(i),
                None => {
                    outcome.other += 1;
                    Label::Single(self.id(task, OTHER_LABEL).ok_or_else(|| {
                        LabelError::Integrity(format!("class {c:?} is outside the fixed space of {task}"))
                    })?)
                }
            },
            (RawLabel::Set(s), TaskKind::LabelSet) => {
                let other = self.id(task, OTHER_LABEL);
                let mut ids = Vec::with_capacity(s.len());
                for x in s {
                    match (self.id(task, x), other) {
                        (Some(i), _) => ids.push(i),
                        (None, Some(o)) => {
                            outcome.other += 1;
                            ids.push(o);
                        }
                        (None, None) => outcome.dropped += 1,
                    }
                }
                ids.sort_unstable();
                ids.dedup();
                if ids.is_empty() {
                    ids.push(self.none_id(task).ok_or_else(missing)?);
                }
                Label::Set(ids)
            }
            (l, k) => return Err(LabelError::Integrity(format!("{task} is a {k:?} task but got {l:?}"))),
        };
        Ok((
            ProbeLabelRecord { dialogue_id: raw.dialogue_id.clone(), turn_index: raw.turn_index, task, label },
            outcome,
        ))
    }
}
