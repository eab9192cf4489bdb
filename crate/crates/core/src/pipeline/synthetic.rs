use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueAct, InfoEvent, NormalizedDialogue, Speaker, Turn, NONE_PLACEHOLDER};
use crate::parallel::{map_indices, Execution};
use crate::probelab::{ProbeTaskId, RawLabel, RawRecord, NONE_LABEL};

use super::PipelineError;

/// Grammar and size of a template-generated goal-oriented corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub topics: usize,
    pub slots_per_topic: usize,
    pub values_per_slot: usize,
    pub dialogues: usize,
    /// Inclusive turn-count range; dialogues open with a user turn.
    pub min_turns: usize,
    pub max_turns: usize,
    /// Chance that a user turn restates an earlier slot/value of its topic.
    pub repeat_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            topics: 3,
            slots_per_topic: 3,
            values_per_slot: 4,
            dialogues: 500,
            min_turns: 8,
            max_turns: 16,
            repeat_prob: 0.2,
            seed: 0,
        }
    }
}

const TOPICS: [&str; 8] = ["hotel", "restaurant", "taxi", "train", "attraction", "hospital", "police", "bus"];
const SLOTS: [&str; 12] = [
    "area",
    "price",
    "day",
    "people",
    "time",
    "stars",
    "food",
    "stay",
    "parking",
    "internet",
    "destination",
    "departure",
];
const WORDS: [&str; 24] = [
    "north",
    "south",
    "east",
    "west",
    "centre",
    "cheap",
    "moderate",
    "expensive",
    "monday",
    "tuesday",
    "friday",
    "sunday",
    "two",
    "four",
    "six",
    "eight",
    "italian",
    "indian",
    "chinese",
    "free",
    "yes",
    "no",
    "cambridge",
    "ely",
];
const SWITCH_PROB: f64 = 0.3;

/// Generated dialogues plus the labels known from the generator's own state.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub dialogues: Vec<NormalizedDialogue>,
    pub truth: Vec<RawRecord>,
}

/// Tasks whose labels the generator emits.
pub fn emitted_tasks() -> Vec<ProbeTaskId> {
    use ProbeTaskId::*;
    vec![
        IsMultiTopic,
        NumAllTopics,
        RepeatInfo,
        NumRepeatInfo,
        AllTopics,
        RecentSlots,
        NumRecentInfo,
        RecentValues,
        AllSlots,
        AllValues,
        RecentTopic,
        NumAllInfo,
        ActionSelect,
        EntitySlots,
        EntityValues,
    ]
}

struct Grammar {
    topics: Vec<String>,
    slots: Vec<Vec<String>>,
    values: BTreeMap<String, Vec<String>>,
}

impl Grammar {
    fn new(spec: &SyntheticSpec) -> Self {
        let topics: Vec<String> = (0..spec.topics)
            .map(|t| if spec.topics <= TOPICS.len() { TOPICS[t].to_string() } else { format!("topic{t}") })
            .collect();
        // neighbouring topics overlap in all but one slot name
        let slot_name = |k: usize| {
            if spec.slots_per_topic <= SLOTS.len() {
                SLOTS[k % SLOTS.len()].to_string()
            } else {
                format!("slot{k}")
            }
        };
        let slots: Vec<Vec<String>> =
            (0..spec.topics).map(|t| (0..spec.slots_per_topic).map(|j| slot_name(t + j)).collect()).collect();
        let mut values = BTreeMap::new();
        for s in slots.iter().flatten() {
            if values.contains_key(s) {
                continue;
            }
            let k = values.len();
            let vs = (0..spec.values_per_slot)
                .map(|v| {
                    let i = 3 * k + v;
                    let w = WORDS[i % WORDS.len()];
                    if i < WORDS.len() {
                        w.to_string()
                    } else {
                        format!("{w}{}", i / WORDS.len())
                    }
                })
                .collect();
            values.insert(s.clone(), vs);
        }
        Grammar { topics, slots, values }
    }
}

/// Running facts about the user turns seen so far in one dialogue.
#[derive(Default)]
struct Ledger {
    events: Vec<InfoEvent>,
    pairs: BTreeSet<(String, String)>,
    topics: BTreeSet<String>,
    slots: BTreeSet<String>,
    values: BTreeSet<String>,
    fresh: usize,
}

struct UserTurn {
    topic: String,
    events: Vec<InfoEvent>,
    repeated: BTreeSet<String>,
}

fn set_label(items: BTreeSet<String>) -> RawLabel {
    if items.is_empty() {
        RawLabel::Set(BTreeSet::from([NONE_LABEL.to_string()]))
    } else {
        RawLabel::Set(items)
    }
}

fn count_label(n: usize) -> RawLabel {
    RawLabel::Count(n as u32)
}

/// The topic is named only when the user opens it; later turns leave it
/// implicit.
fn user_text(rng: &mut ChaCha8Rng, topic: Option<&str>, events: &[InfoEvent]) -> String {
    if events.is_empty() {
        return "that is all , thank you .".into();
    }
    let phrases: Vec<String> = events.iter().map(|e| format!("{} {}", e.slot, e.value)).collect();
    let phrases = phrases.join(" and ");
    match (topic, rng.gen_range(0..3)) {
        (Some(topic), 0) => format!("i need a {topic} with {phrases} ."),
        (Some(topic), 1) => format!("looking for a {topic} , {phrases} please ."),
        (Some(topic), _) => format!("can you find a {topic} with {phrases} ?"),
        (None, 0) => format!("i would like {phrases} ."),
        (None, 1) => format!("also , {phrases} please ."),
        (None, _) => format!("make it {phrases} , thanks ."),
    }
}

fn dialogue(spec: &SyntheticSpec, g: &Grammar, index: usize) -> (NormalizedDialogue, Vec<RawRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let id = format!("syn{:05}", index);
    let n_turns = rng.gen_range(spec.min_turns..=spec.max_turns);
    let mut topic = rng.gen_range(0..g.topics.len());
    let mut ledger = Ledger::default();
    let mut turns: Vec<Turn> = Vec::with_capacity(n_turns);
    let mut last_user: Option<UserTurn> = None;
    let mut truth = Vec::new();
    let mut announced = false;

    for t in 0..n_turns {
        if t % 2 == 0 {
            if t > 0 && g.topics.len() > 1 && rng.gen_bool(SWITCH_PROB) {
                let others: Vec<usize> = (0..g.topics.len()).filter(|&x| x != topic).collect();
                topic = *others.choose(&mut rng).expect("at least one other topic");
                announced = false;
            }
            let name = g.topics[topic].clone();
            let want = rng.gen_range(1..=2usize.min(spec.slots_per_topic));
            let mut events: Vec<InfoEvent> = Vec::new();
            let mut repeated = BTreeSet::new();
            let earlier: Vec<&InfoEvent> = ledger.events.iter().filter(|e| e.topic == name).collect();
            if !earlier.is_empty() && rng.gen_bool(spec.repeat_prob) {
                let e = (*earlier.choose(&mut rng).expect("non-empty")).clone();
                repeated.insert(e.slot.clone());
                events.push(e);
            }
            while events.len() < want {
                let used: BTreeSet<&str> = events.iter().map(|e| e.slot.as_str()).collect();
                let fresh: Vec<(&String, &String)> = g.slots[topic]
                    .iter()
                    .filter(|s| !used.contains(s.as_str()))
                    .flat_map(|s| g.values[s].iter().map(move |v| (s, v)))
                    .filter(|(s, v)| !ledger.pairs.contains(&((*s).clone(), (*v).clone())))
                    .collect();
                let Some(&(s, v)) = fresh.choose(&mut rng) else {
                    break;
                };
                events.push(InfoEvent::new(&name, s, v));
            }
            for e in &events {
                if !repeated.contains(&e.slot) {
                    ledger.fresh += 1;
                    ledger.topics.insert(e.topic.clone());
                }
                ledger.pairs.insert((e.slot.clone(), e.value.clone()));
                ledger.slots.insert(e.slot.clone());
                ledger.values.insert(e.value.clone());
            }
            ledger.events.extend(events.iter().cloned());
            let text = user_text(&mut rng, (!announced).then_some(name.as_str()), &events);
            announced |= !events.is_empty();
            turns.push(Turn::new(Speaker::User, text).with_events(events.clone()));
            last_user = Some(UserTurn { topic: name, events, repeated });
        } else {
            let u = last_user.as_ref().expect("system turns follow user turns");
            let mentioned: BTreeSet<&str> =
                ledger.events.iter().filter(|e| e.topic == u.topic).map(|e| e.slot.as_str()).collect();
            let t_idx = g.topics.iter().position(|x| *x == u.topic).expect("known topic");
            let open: Vec<&String> = g.slots[t_idx].iter().filter(|s| !mentioned.contains(s.as_str())).collect();
            let (act, text) = if u.events.is_empty() {
                (
                    DialogueAct::new("general-reqmore", &[(NONE_PLACEHOLDER, NONE_PLACEHOLDER)]),
                    "anything else ?".to_string(),
                )
            } else if t + 1 == n_turns {
                (
                    DialogueAct::new(&format!("{}-book", u.topic), &[(NONE_PLACEHOLDER, NONE_PLACEHOLDER)]),
                    format!("i have booked the {} .", u.topic),
                )
            } else if !open.is_empty() && rng.gen_bool(0.5) {
                let s = *open.choose(&mut rng).expect("non-empty");
                (DialogueAct::new(&format!("{}-request", u.topic), &[(s, "?")]), format!("what {s} would you like ?"))
            } else {
                let sv: Vec<(&str, &str)> = u.events.iter().map(|e| (e.slot.as_str(), e.value.as_str())).collect();
                let said: Vec<String> = sv.iter().map(|(s, v)| format!("{s} {v}")).collect();
                (
                    DialogueAct::new(&format!("{}-inform", u.topic), &sv),
                    format!("the {} with {} is available .", u.topic, said.join(" and ")),
                )
            };
            // the preceding user-turn context is labelled by this turn's act
            let slots = act.slot_values.iter().map(|(s, _)| s).filter(|s| *s != NONE_PLACEHOLDER).cloned().collect();
            let values = act
                .slot_values
                .iter()
                .map(|(_, v)| v)
                .filter(|v| *v != NONE_PLACEHOLDER && *v != "?")
                .cloned()
                .collect();
            let rec = |task, label| RawRecord { dialogue_id: id.clone(), turn_index: t - 1, task, label };
            truth.push(rec(ProbeTaskId::ActionSelect, RawLabel::Class(act.act_name.clone())));
            truth.push(rec(ProbeTaskId::EntitySlots, set_label(slots)));
            truth.push(rec(ProbeTaskId::EntityValues, set_label(values)));
            turns.push(Turn::new(Speaker::System, text).with_acts(vec![act]));
        }

        // labels for the context ending at this turn; the final turn has none
        if t + 1 == n_turns {
            break;
        }
        let u = last_user.as_ref().expect("dialogues open with a user turn");
        let rec = |task, label| RawRecord { dialogue_id: id.clone(), turn_index: t, task, label };
        use ProbeTaskId::*;
        let recent_topic = if u.events.is_empty() { NONE_LABEL.to_string() } else { u.topic.clone() };
        truth.extend([
            rec(IsMultiTopic, RawLabel::Class((ledger.topics.len() > 1).to_string())),
            rec(NumAllTopics, count_label(ledger.topics.len())),
            rec(RepeatInfo, set_label(u.repeated.clone())),
            rec(NumRepeatInfo, count_label(u.repeated.len())),
            rec(AllTopics, set_label(ledger.topics.clone())),
            rec(RecentSlots, set_label(u.events.iter().map(|e| e.slot.clone()).collect())),
            rec(NumRecentInfo, count_label(u.events.len())),
            rec(RecentValues, set_label(u.events.iter().map(|e| e.value.clone()).collect())),
            rec(AllSlots, set_label(ledger.slots.clone())),
            rec(AllValues, set_label(ledger.values.clone())),
            rec(RecentTopic, RawLabel::Class(recent_topic)),
            rec(NumAllInfo, count_label(ledger.fresh)),
        ]);
    }
    let domain_goals = ledger.events.iter().map(|e| e.topic.clone()).collect();
    (NormalizedDialogue { id, domain_goals, turns }, truth)
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(format!("synthetic corpus: {m}")));
        if self.topics == 0 {
            return bad("at least one topic is required");
        }
        if self.slots_per_topic == 0 || self.values_per_slot == 0 {
            return bad("slots per topic and values per slot must be positive");
        }
        if self.dialogues == 0 {
            return bad("dialogue count must be positive");
        }
        if self.min_turns < 2 || self.min_turns > self.max_turns {
            return bad("turn range must satisfy 2 <= min <= max");
        }
        if !(0.0..=1.0).contains(&self.repeat_prob) {
            return bad("repeat probability must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Template dialogues and their ground-truth labels; dialogue `i` depends
/// only on `(seed, i)`.
pub fn generate_synthetic(spec: &SyntheticSpec, exec: Execution) -> Result<SyntheticCorpus, PipelineError> {
    spec.validate()?;
    let g = Grammar::new(spec);
    let parts = map_indices(exec, spec.dialogues, |i| dialogue(spec, &g, i));
    let mut dialogues = Vec::with_capacity(parts.len());
    let mut truth = Vec::new();
    for (d, t) in parts {
        dialogues.push(d);
        truth.extend(t);
    }
    Ok(SyntheticCorpus { dialogues, truth })
}

/// Outcome of checking derived labels against emitted ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub compared: usize,
    pub matched: usize,
    /// The first few disagreements.
    pub mismatches: Vec<String>,
}

impl Agreement {
    pub fn is_exact(&self) -> bool {
        self.compared == self.matched
    }
}

/// Compares every emitted record with the derived record of the same key.
pub fn check_agreement(truth: &[RawRecord], derived: &[RawRecord]) -> Agreement {
    let index: BTreeMap<(&str, usize, ProbeTaskId), &RawLabel> =
        derived.iter().map(|r| ((r.dialogue_id.as_str(), r.turn_index, r.task), &r.label)).collect();
    let mut matched = 0;
    let mut mismatches = Vec::new();
    for r in truth {
        match index.get(&(r.dialogue_id.as_str(), r.turn_index, r.task)) {
            Some(&l) if *l == r.label => matched += 1,
            got => {
                if mismatches.len() < 20 {
                    mismatches.push(format!(
                        "{} turn {} {}: emitted {:?}, derived {:?}",
                        r.dialogue_id, r.turn_index, r.task, r.label, got
                    ));
                }
            }
        }
    }
    Agreement { compared: truth.len(), matched, mismatches }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probelab::{derive_raw, DatasetKind, LabelConfig, LabelSetup};

    fn derived(c: &SyntheticCorpus) -> Vec<RawRecord> {
        let setup = LabelSetup::fit(&c.dialogues, DatasetKind::GoalOriented, &LabelConfig::default()).unwrap();
        derive_raw(&setup, &c.dialogues, Execution::Parallel)
    }

    #[test]
    fn zero_topics_is_a_config_error() {
        let spec = SyntheticSpec { topics: 0, ..Default::default() };
        assert!(matches!(generate_synthetic(&spec, Execution::Sequential), Err(PipelineError::Config(_))));
    }

    #[test]
    fn dialogues_are_valid_and_labels_agree() {
        let spec = SyntheticSpec { dialogues: 200, ..Default::default() };
        let c = generate_synthetic(&spec, Execution::Parallel).unwrap();
        for d in &c.dialogues {
            d.validate().unwrap();
            assert_eq!(d.turns[0].speaker, Speaker::User);
        }
        let a = check_agreement(&c.truth, &derived(&c));
        assert!(a.is_exact(), "{:?}", a.mismatches);
        assert!(a.compared > 1000);
    }

    #[test]
    fn single_topic_is_never_multi_topic() {
        let c = generate_synthetic(
            &SyntheticSpec { topics: 1, dialogues: 50, ..Default::default() },
            Execution::Sequential,
        )
        .unwrap();
        let d = derived(&c);
        let multi = c.truth.iter().chain(&d).filter(|r| r.task == ProbeTaskId::IsMultiTopic);
        assert!(multi.clone().count() > 0);
        assert!(multi.into_iter().all(|r| r.label == RawLabel::Class("false".into())));
    }

    #[test]
    fn no_repeats_without_repeat_probability() {
        let c = generate_synthetic(
            &SyntheticSpec { repeat_prob: 0.0, dialogues: 80, ..Default::default() },
            Execution::Sequential,
        )
        .unwrap();
        let d = derived(&c);
        assert!(d.iter().filter(|r| r.task == ProbeTaskId::NumRepeatInfo).all(|r| r.label == RawLabel::Count(0)));
        let with = generate_synthetic(
            &SyntheticSpec { repeat_prob: 0.5, dialogues: 80, ..Default::default() },
            Execution::Sequential,
        )
        .unwrap();
        assert!(with.truth.iter().any(|r| r.task == ProbeTaskId::NumRepeatInfo && r.label != RawLabel::Count(0)));
    }

    #[test]
    fn dialogue_depends_only_on_seed_and_index() {
        let a =
            generate_synthetic(&SyntheticSpec { dialogues: 10, ..Default::default() }, Execution::Sequential).unwrap();
        let b =
            generate_synthetic(&SyntheticSpec { dialogues: 30, ..Default::default() }, Execution::Parallel).unwrap();
        assert_eq!(a.dialogues[..], b.dialogues[..10]);
        let c =
            generate_synthetic(&SyntheticSpec { dialogues: 10, seed: 1, ..Default::default() }, Execution::Sequential)
                .unwrap();
        assert_ne!(a.dialogues, c.dialogues);
    }

    #[test]
    fn large_grammar_names_stay_distinct() {
        let spec =
            SyntheticSpec { topics: 10, slots_per_topic: 14, values_per_slot: 30, dialogues: 20, ..Default::default() };
        let g = Grammar::new(&spec);
        assert_eq!(g.topics.iter().collect::<BTreeSet<_>>().len(), 10);
        for vs in g.values.values() {
            assert_eq!(vs.iter().collect::<BTreeSet<_>>().len(), 30);
        }
        let c = generate_synthetic(&spec, Execution::Sequential).unwrap();
        assert!(check_agreement(&c.truth, &derived(&c)).is_exact());
    }
}
