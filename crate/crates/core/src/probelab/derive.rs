use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::stopwords::is_stopword;
use super::{BucketMode, DatasetKind, LabelConfig, LabelError, ProbeTaskId, RepeatHorizon, WordSource};
use crate::corpus::{make_contexts, NormalizedDialogue, Speaker, NONE_PLACEHOLDER, SPLIT_PUNCTUATION};

pub const NONE_LABEL: &str = "NONE";
pub const OTHER_LABEL: &str = "OTHER";

/// Placeholder values that never become EntityValues labels.
const PLACEHOLDER_VALUES: [&str; 3] = [NONE_PLACEHOLDER, "?", ""];

/// Approximate token count of the full chit-chat training split, against
/// which the mid-frequency band is scaled for smaller corpora.
pub const REFERENCE_TOKENS: u64 = 1_900_000;

/// A label before it is mapped through a label space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawLabel {
    Class(String),
    Count(u32),
    Set(BTreeSet<String>),
}

impl RawLabel {
    fn set(items: BTreeSet<String>) -> Self {
        if items.is_empty() {
            RawLabel::Set(BTreeSet::from([NONE_LABEL.to_string()]))
        } else {
            RawLabel::Set(items)
        }
    }

    fn count(n: usize) -> Self {
        RawLabel::Count(n.try_into().unwrap_or(u32::MAX))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub task: ProbeTaskId,
    pub label: RawLabel,
}

/// Position buckets fitted on the training split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocBuckets {
    pub buckets: usize,
    pub mode: BucketMode,
    /// Bucket width (equal-width mode).
    pub width: usize,
    /// Lower bounds of buckets 1..B (equal-mass mode).
    pub cuts: Vec<usize>,
}

impl LocBuckets {
    pub fn fit(turn_indices: &[usize], buckets: usize, mode: BucketMode) -> Result<Self, LabelError> {
        if buckets < 2 {
            return Err(LabelError::Config(format!("bucket count must be at least 2, got {buckets}")));
        }
        let max = turn_indices.iter().copied().max().unwrap_or(0);
        let width = max.div_ceil(buckets).max(1);
        let mut cuts = Vec::new();
        if mode == BucketMode::EqualMass && !turn_indices.is_empty() {
            let mut s = turn_indices.to_vec();
            s.sort_unstable();
            cuts = (1..buckets).map(|k| s[k * s.len() / buckets]).collect();
        }
        Ok(LocBuckets { buckets, mode, width, cuts })
    }

    pub fn with_width(buckets: usize, width: usize) -> Self {
        LocBuckets { buckets, mode: BucketMode::EqualWidth, width: width.max(1), cuts: Vec::new() }
    }

    pub fn bucket(&self, turn_index: usize) -> usize {
        match self.mode {
            BucketMode::EqualWidth => (turn_index / self.width).min(self.buckets - 1),
            BucketMode::EqualMass => self.cuts.iter().filter(|&&c| turn_index >= c).count().min(self.buckets - 1),
        }
    }
}

/// `[lo, hi]` training-frequency band for the mid-frequency word set.
pub fn word_band(cfg: &LabelConfig, corpus_tokens: u64) -> (u64, u64) {
    if let Some(b) = cfg.word_band {
        return b;
    }
    let scale = (corpus_tokens as f64 / REFERENCE_TOKENS as f64).min(1.0);
    let lo = ((1000.0 * scale).round() as u64).max(1);
    let hi = ((3000.0 * scale).round() as u64).max(lo);
    (lo, hi)
}

/// Tokens with training frequency in `[lo, hi]`, most frequent first
/// (ties lexicographic), truncated to `size`.
pub fn mid_frequency_words(freq: &HashMap<String, u64>, lo: u64, hi: u64, size: usize) -> Vec<String> {
    let mut band: Vec<(&String, u64)> =
        freq.iter().filter(|(_, &c)| c >= lo && c <= hi).map(|(w, &c)| (w, c)).collect();
    band.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    band.into_iter().take(size).map(|(w, _)| w.clone()).collect()
}

pub fn derive_word_cont(tokens: &[String], mid: &HashSet<String>) -> BTreeSet<String> {
    tokens.iter().filter(|t| mid.contains(*t)).cloned().collect()
}

fn is_content_token(t: &str) -> bool {
    !(t.starts_with('\'') || t.chars().all(|c| SPLIT_PUNCTUATION.contains(&c) || c == ':' || c == '-'))
}

/// Non-stopword tokens of the persona lines. Punctuation and clitic tokens
/// are dropped along with the stopwords.
pub fn derive_personal_info<S: AsRef<str>>(persona: &[S], stopword: impl Fn(&str) -> bool) -> BTreeSet<String> {
    persona
        .iter()
        .flat_map(|line| crate::corpus::tokenize(line.as_ref()))
        .filter(|t| is_content_token(t) && !stopword(t))
        .collect()
}

/// Labels of the twelve information tasks at one context end.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoalInfo {
    pub recent_topic: Option<String>,
    pub recent_slots: BTreeSet<String>,
    pub recent_values: BTreeSet<String>,
    pub num_recent_info: usize,
    pub all_slots: BTreeSet<String>,
    pub all_values: BTreeSet<String>,
    pub all_topics: BTreeSet<String>,
    pub num_all_info: usize,
    pub repeat_info: BTreeSet<String>,
}

impl GoalInfo {
    pub fn num_all_topics(&self) -> usize {
        self.all_topics.len()
    }

    pub fn is_multi_topic(&self) -> bool {
        self.all_topics.len() > 1
    }

    pub fn num_repeat_info(&self) -> usize {
        self.repeat_info.len()
    }

    pub fn labels(&self) -> Vec<(ProbeTaskId, RawLabel)> {
        use ProbeTaskId::*;
        vec![
            (IsMultiTopic, RawLabel::Class(self.is_multi_topic().to_string())),
            (NumAllTopics, RawLabel::count(self.num_all_topics())),
            (RepeatInfo, RawLabel::set(self.repeat_info.clone())),
            (NumRepeatInfo, RawLabel::count(self.num_repeat_info())),
            (AllTopics, RawLabel::set(self.all_topics.clone())),
            (RecentSlots, RawLabel::set(self.recent_slots.clone())),
            (NumRecentInfo, RawLabel::count(self.num_recent_info)),
            (RecentValues, RawLabel::set(self.recent_values.clone())),
            (AllSlots, RawLabel::set(self.all_slots.clone())),
            (AllValues, RawLabel::set(self.all_values.clone())),
            (RecentTopic, RawLabel::Class(self.recent_topic.clone().unwrap_or_else(|| NONE_LABEL.into()))),
            (NumAllInfo, RawLabel::count(self.num_all_info)),
        ]
    }
}

/// Information-task labels for the context ending at `turn_index`.
pub fn derive_goal_info(d: &NormalizedDialogue, turn_index: usize, horizon: RepeatHorizon) -> GoalInfo {
    let user_turns: Vec<usize> = (0..=turn_index.min(d.turns.len().saturating_sub(1)))
        .filter(|&i| d.turns[i].speaker == Speaker::User)
        .collect();
    let mut info = GoalInfo::default();
    let Some(&latest) = user_turns.last() else {
        return info;
    };

    let mut triples = BTreeSet::new();
    for &i in &user_turns {
        for e in &d.turns[i].events {
            info.all_slots.insert(e.slot.clone());
            info.all_values.insert(e.value.clone());
            info.all_topics.insert(e.topic.clone());
            triples.insert(e);
        }
    }
    info.num_all_info = triples.len();

    let recent = &d.turns[latest].events;
    info.num_recent_info = recent.len();
    let mut topic_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in recent {
        info.recent_slots.insert(e.slot.clone());
        info.recent_values.insert(e.value.clone());
        *topic_counts.entry(&e.topic).or_insert(0) += 1;
    }
    // most frequent topic; BTreeMap order makes the lexicographically first win ties
    info.recent_topic = topic_counts
        .iter()
        .fold(None::<(&str, usize)>, |best, (&t, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((t, c)),
        })
        .map(|(t, _)| t.to_string());

    let earlier: &[usize] = match horizon {
        RepeatHorizon::AnyEarlier => &user_turns[..user_turns.len() - 1],
        RepeatHorizon::PreviousUserTurn => {
            let n = user_turns.len();
            &user_turns[n.saturating_sub(2)..n - 1]
        }
    };
    let seen: HashSet<(&str, &str)> =
        earlier.iter().flat_map(|&i| d.turns[i].events.iter().map(|e| (e.slot.as_str(), e.value.as_str()))).collect();
    info.repeat_info =
        recent.iter().filter(|e| seen.contains(&(e.slot.as_str(), e.value.as_str()))).map(|e| e.slot.clone()).collect();
    info
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Downstream {
    pub action: String,
    pub slots: BTreeSet<String>,
    pub values: BTreeSet<String>,
}

/// Labels from the acts of the turn after `turn_index`; `None` when that
/// turn is not a system turn with acts.
pub fn derive_downstream(d: &NormalizedDialogue, turn_index: usize) -> Option<Downstream> {
    let next = d.turns.get(turn_index + 1)?;
    if next.speaker != Speaker::System || next.acts.is_empty() {
        return None;
    }
    let names: BTreeSet<&str> = next.acts.iter().map(|a| a.act_name.as_str()).collect();
    let action = names.into_iter().collect::<Vec<_>>().join("+");
    let mut slots = BTreeSet::new();
    let mut values = BTreeSet::new();
    for (s, v) in next.acts.iter().flat_map(|a| &a.slot_values) {
        if s != NONE_PLACEHOLDER && !s.is_empty() {
            slots.insert(s.clone());
        }
        if !PLACEHOLDER_VALUES.contains(&v.as_str()) {
            values.insert(v.clone());
        }
    }
    Some(Downstream { action, slots, values })
}

/// Everything fitted on the training split before labels can be derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSetup {
    pub dataset: DatasetKind,
    pub config: LabelConfig,
    pub loc: LocBuckets,
    pub word_band: (u64, u64),
    pub mid_words: Vec<String>,
    #[serde(skip)]
    mid_set: HashSet<String>,
}

impl LabelSetup {
    pub fn fit(train: &[NormalizedDialogue], dataset: DatasetKind, config: &LabelConfig) -> Result<Self, LabelError> {
        let indices: Vec<usize> = train.iter().flat_map(|d| 0..d.turns.len().saturating_sub(1)).collect();
        let loc = LocBuckets::fit(&indices, config.buckets, config.bucket_mode)?;

        let (mut band, mut mid_words) = ((0, 0), Vec::new());
        if dataset == DatasetKind::ChitChat {
            let mut freq: HashMap<String, u64> = HashMap::new();
            let mut total = 0u64;
            for t in train.iter().flat_map(|d| &d.turns).flat_map(|t| &t.tokens) {
                *freq.entry(t.clone()).or_insert(0) += 1;
                total += 1;
            }
            band = word_band(config, total);
            mid_words = mid_frequency_words(&freq, band.0, band.1, config.word_set_size);
            if mid_words.is_empty() {
                return Err(LabelError::Config(format!(
                    "no training token has a frequency in [{}, {}]; the mid-frequency word set is empty",
                    band.0, band.1
                )));
            }
        }
        let mid_set = mid_words.iter().cloned().collect();
        Ok(LabelSetup { dataset, config: config.clone(), loc, word_band: band, mid_words, mid_set })
    }

    pub fn tasks(&self) -> Vec<ProbeTaskId> {
        let all = ProbeTaskId::for_dataset(self.dataset);
        match &self.config.tasks {
            Some(only) => all.into_iter().filter(|t| only.contains(t)).collect(),
            None => all,
        }
    }

    fn mid_set(&self) -> HashSet<String> {
        if self.mid_set.is_empty() {
            self.mid_words.iter().cloned().collect()
        } else {
            self.mid_set.clone()
        }
    }

    /// Raw labels for every context of one dialogue, ordered by turn index
    /// then task catalog order.
    pub fn derive_dialogue(&self, d: &NormalizedDialogue) -> Vec<RawRecord> {
        let wanted: BTreeSet<ProbeTaskId> = self.tasks().into_iter().collect();
        let mid = if wanted.contains(&ProbeTaskId::WordCont) { self.mid_set() } else { HashSet::new() };
        let mut out = Vec::new();
        for (ctx, target) in make_contexts(d, self.config.window) {
            let t = ctx.turn_index;
            let mut labels: Vec<(ProbeTaskId, RawLabel)> = Vec::new();
            labels.push((ProbeTaskId::UtteranceLoc, RawLabel::Class(self.loc.bucket(t).to_string())));
            match self.dataset {
                DatasetKind::ChitChat => {
                    let source = match self.config.word_source {
                        WordSource::Context => &ctx.tokens,
                        WordSource::Target => &target,
                    };
                    labels.push((ProbeTaskId::WordCont, RawLabel::set(derive_word_cont(source, &mid))));
                    if let Some(p) = &d.turns[t + 1].persona {
                        labels.push((ProbeTaskId::PersonalInfo, RawLabel::set(derive_personal_info(p, is_stopword))));
                    }
                }
                DatasetKind::GoalOriented => {
                    labels.extend(derive_goal_info(d, t, self.config.repeat_horizon).labels());
                    if let Some(ds) = derive_downstream(d, t) {
                        labels.push((ProbeTaskId::ActionSelect, RawLabel::Class(ds.action)));
                        labels.push((ProbeTaskId::EntitySlots, RawLabel::set(ds.slots)));
                        labels.push((ProbeTaskId::EntityValues, RawLabel::set(ds.values)));
                    }
                }
            }
            labels.retain(|(task, _)| wanted.contains(task));
            labels.sort_by_key(|(task, _)| *task);
            out.extend(labels.into_iter().map(|(task, label)| RawRecord {
                dialogue_id: d.id.clone(),
                turn_index: t,
                task,
                label,
            }));
        }
        out
    }
}
