use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use serde_json::value::RawValue;
use serde_json::Value;

use super::{CorpusError, DialogueAct, InfoEvent, NormalizedDialogue, ParseOutput, Speaker, Turn, NONE_PLACEHOLDER};

/// (topic, slot) → value.
pub type BeliefState = BTreeMap<(String, String), String>;

const EMPTY_VALUES: [&str; 3] = ["", "not mentioned", "none"];

#[derive(Deserialize)]
struct RawDialogue {
    #[serde(default)]
    goal: Value,
    log: Vec<RawTurn>,
}

#[derive(Deserialize)]
struct RawTurn {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    metadata: Value,
    #[serde(default)]
    dialog_act: Value,
}

/// Reads the `semi` and `book` slot maps of a turn's metadata block.
pub fn belief_state(metadata: &Value) -> BeliefState {
    let mut out = BeliefState::new();
    let Some(domains) = metadata.as_object() else {
        return out;
    };
    for (topic, block) in domains {
        for part in ["semi", "book"] {
            let Some(slots) = block.get(part).and_then(Value::as_object) else {
                continue;
            };
            for (slot, v) in slots {
                let Some(v) = v.as_str() else { continue };
                let v = v.trim().to_lowercase();
                if EMPTY_VALUES.contains(&v.as_str()) {
                    continue;
                }
                out.insert((topic.to_lowercase(), slot.to_lowercase()), v);
            }
        }
    }
    out
}

fn acts_of(raw: &Value) -> Vec<DialogueAct> {
    let Some(map) = raw.as_object() else {
        return Vec::new();
    };
    let mut acts: Vec<DialogueAct> = map
        .iter()
        .map(|(name, pairs)| {
            let slot_values = pairs
                .as_array()
                .map(|ps| {
                    ps.iter()
                        .filter_map(|p| {
                            let p = p.as_array()?;
                            let field = |i: usize| {
                                p.get(i)
                                    .and_then(Value::as_str)
                                    .map(|s| s.trim().to_lowercase())
                                    .filter(|s| !s.is_empty())
                                    .unwrap_or_else(|| NONE_PLACEHOLDER.to_string())
                            };
                            Some((field(0), field(1)))
                        })
                        .collect()
                })
                .unwrap_or_default();
            DialogueAct { act_name: name.to_lowercase(), slot_values }
        })
        .collect();
    acts.sort();
    acts
}

fn goals_of(goal: &Value) -> BTreeSet<String> {
    let Some(map) = goal.as_object() else {
        return BTreeSet::new();
    };
    map.iter()
        .filter(|(k, v)| !matches!(k.as_str(), "message" | "topic") && v.as_object().is_some_and(|o| !o.is_empty()))
        .map(|(k, _)| k.to_lowercase())
        .collect()
}

fn delta(prev: &BeliefState, cur: &BeliefState) -> Vec<InfoEvent> {
    cur.iter()
        .filter(|(k, v)| prev.get(*k) != Some(*v))
        .map(|((topic, slot), value)| InfoEvent { topic: topic.clone(), slot: slot.clone(), value: value.clone() })
        .collect()
}

fn byte_offset(src: &str, line: usize, column: usize) -> usize {
    let line_start: usize = src.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(src.len())
}

/// Parses the published MultiWoZ `data.json` layout: a mapping from dialogue
/// id to `{goal, log}`, where even log entries are user turns and odd ones
/// system turns. User-turn events are belief-state deltas; a user turn with
/// empty metadata takes the belief state recorded on the following system turn.
pub fn parse_multiwoz(raw: &[u8]) -> Result<ParseOutput, CorpusError> {
    let src = std::str::from_utf8(raw).map_err(|e| CorpusError::Parse {
        dialogue_id: None,
        offset: e.valid_up_to(),
        message: "input is not valid UTF-8".into(),
    })?;
    let top: BTreeMap<String, &RawValue> = serde_json::from_str(src).map_err(|e| CorpusError::Parse {
        dialogue_id: None,
        offset: byte_offset(src, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let mut out = ParseOutput::default();
    for (id, body) in top {
        let start = body.get().as_ptr() as usize - src.as_ptr() as usize;
        let dialogue: RawDialogue = serde_json::from_str(body.get()).map_err(|e| CorpusError::Parse {
            dialogue_id: Some(id.clone()),
            offset: start + byte_offset(body.get(), e.line(), e.column()),
            message: e.to_string(),
        })?;
        out.dialogues.push(convert(&id, dialogue, &mut out.warnings));
    }
    Ok(out)
}

fn convert(id: &str, raw: RawDialogue, warnings: &mut Vec<String>) -> NormalizedDialogue {
    let mut turns: Vec<Turn> = Vec::new();
    let mut prev_belief = BeliefState::new();
    for (i, rt) in raw.log.iter().enumerate() {
        let speaker = if i % 2 == 0 { Speaker::User } else { Speaker::System };
        let Some(text) = rt.text.as_deref() else {
            warnings.push(format!("dialogue {id}: turn {i} has no text and was skipped"));
            continue;
        };
        let mut turn = Turn::new(speaker, text);
        match speaker {
            Speaker::User => {
                let mut belief = belief_state(&rt.metadata);
                if belief.is_empty() {
                    if let Some(next) = raw.log.get(i + 1) {
                        belief = belief_state(&next.metadata);
                    }
                }
                turn.events = delta(&prev_belief, &belief);
                prev_belief = belief;
            }
            Speaker::System => turn.acts = acts_of(&rt.dialog_act),
        }
        if turns.is_empty() && speaker == Speaker::System {
            warnings.push(format!("dialogue {id}: leading system turn {i} dropped"));
            continue;
        }
        match turns.last_mut() {
            Some(last) if last.speaker == speaker => {
                last.text = format!("{} {}", last.text, turn.text);
                last.tokens.extend(turn.tokens);
                for e in turn.events {
                    last.events.retain(|x| (&x.topic, &x.slot) != (&e.topic, &e.slot));
                    last.events.push(e);
                }
                last.acts.extend(turn.acts);
            }
            _ => turns.push(turn),
        }
    }
    NormalizedDialogue { id: id.to_string(), domain_goals: goals_of(&raw.goal), turns }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn meta(price: &str) -> Value {
        json!({"hotel": {"semi": {"pricerange": price, "area": "not mentioned"}, "book": {"booked": [], "people": ""}},
               "taxi": {"semi": {"leaveAt": ""}, "book": {"booked": []}}})
    }

    fn fixture() -> String {
        json!({
            "PMUL0001.json": {
                "goal": {"hotel": {"info": {"pricerange": "moderate"}}, "taxi": {}, "message": ["x"], "topic": {}},
                "log": [
                    {"text": "I want a cheap hotel.", "metadata": {}, "dialog_act": {}},
                    {"text": "Okay.", "metadata": meta("cheap"), "dialog_act": {"Hotel-Request": [["Area", "?"]]}},
                    {"text": "Actually make it moderate.", "metadata": {}, "dialog_act": {}},
                    {"text": "Sure.", "metadata": meta("moderate"),
                     "dialog_act": {"Hotel-Recommend": [["Price", "moderate"], ["Type", "guesthouse"]], "general-reqmore": [["none", "none"]]}}
                ]
            }
        })
        .to_string()
    }

    #[test]
    fn empty_mapping() {
        assert!(parse_multiwoz(b"{}").unwrap().dialogues.is_empty());
    }

    #[test]
    fn changed_value_is_the_only_event() {
        let out = parse_multiwoz(fixture().as_bytes()).unwrap();
        let d = &out.dialogues[0];
        d.validate().unwrap();
        assert_eq!(d.turns.len(), 4);
        assert_eq!(d.turns[0].events, [InfoEvent::new("hotel", "pricerange", "cheap")]);
        assert_eq!(d.turns[2].events, [InfoEvent::new("hotel", "pricerange", "moderate")]);
        assert_eq!(d.domain_goals, BTreeSet::from(["hotel".to_string()]));
        let names: Vec<&str> = d.turns[3].acts.iter().map(|a| a.act_name.as_str()).collect();
        assert_eq!(names, ["general-reqmore", "hotel-recommend"]);
        assert_eq!(d.turns[3].acts[1].slot_values[1], ("type".into(), "guesthouse".into()));
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn replayed_events_reconstruct_final_belief() {
        let out = parse_multiwoz(fixture().as_bytes()).unwrap();
        let mut state = BeliefState::new();
        for t in &out.dialogues[0].turns {
            for e in &t.events {
                state.insert((e.topic.clone(), e.slot.clone()), e.value.clone());
            }
        }
        assert_eq!(state, belief_state(&meta("moderate")));
    }

    #[test]
    fn textless_turn_is_skipped_with_warning() {
        let src = json!({"d": {"log": [
            {"text": "hi", "metadata": {}},
            {"metadata": {}},
            {"text": "there", "metadata": {}},
            {"text": "ok", "metadata": {}}
        ]}})
        .to_string();
        let out = parse_multiwoz(src.as_bytes()).unwrap();
        assert_eq!(out.warnings.len(), 1);
        let d = &out.dialogues[0];
        d.validate().unwrap();
        assert_eq!(d.turns.len(), 2);
        assert_eq!(d.turns[0].tokens, ["hi", "there"]);
    }

    #[test]
    fn malformed_dialogue_reports_id_and_offset() {
        let src = r#"{"a": {"log": []}, "b": {"log": 5}}"#;
        match parse_multiwoz(src.as_bytes()).unwrap_err() {
            CorpusError::Parse { dialogue_id, offset, .. } => {
                assert_eq!(dialogue_id.as_deref(), Some("b"));
                assert!(offset >= src.find(r#"{"log": 5"#).unwrap() && offset <= src.len());
            }
            e => panic!("{e}"),
        }
        assert!(matches!(parse_multiwoz(b"[1, 2]"), Err(CorpusError::Parse { dialogue_id: None, .. })));
        assert!(matches!(parse_multiwoz(b"{\"a\": "), Err(CorpusError::Parse { .. })));
    }
}
