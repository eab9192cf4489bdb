use std::collections::BTreeSet;

use super::{CorpusError, NormalizedDialogue, ParseOutput, Speaker, Turn};

const SELF_MARKER: &str = "your persona:";
const PARTNER_MARKER: &str = "partner's persona:";
const SILENCE: &str = "__SILENCE__";

#[derive(Default)]
struct Pending {
    self_persona: Vec<String>,
    partner_persona: Vec<String>,
    exchanges: Vec<(String, String)>,
}

/// Parses the numbered-line PersonaChat format. A line numbered 1 starts a
/// new dialogue. In an exchange line the first tab-separated field is the
/// partner's utterance (a user turn) and the second is the persona owner's
/// reply (a system turn); candidate lists after them are ignored.
pub fn parse_personachat(raw: &[u8]) -> Result<ParseOutput, CorpusError> {
    let text = String::from_utf8_lossy(raw);
    let mut out = ParseOutput::default();
    let mut pending: Option<Pending> = None;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (num, rest) = line.split_once(' ').unwrap_or((line, ""));
        let num: usize = num.parse().map_err(|_| CorpusError::Format {
            line: lineno,
            message: "line has neither a persona marker nor an exchange number".into(),
        })?;
        if num == 1 {
            if let Some(p) = pending.take() {
                finish(p, &mut out);
            }
        }
        let p = pending.get_or_insert_with(Pending::default);
        if let Some(s) = rest.strip_prefix(SELF_MARKER) {
            p.self_persona.push(s.trim().to_string());
        } else if let Some(s) = rest.strip_prefix(PARTNER_MARKER) {
            p.partner_persona.push(s.trim().to_string());
        } else {
            let mut fields = rest.split('\t');
            let partner = fields.next().unwrap_or("").trim().to_string();
            let own = fields.next().map(|s| s.trim().to_string()).ok_or_else(|| CorpusError::Format {
                line: lineno,
                message: "exchange line needs a partner utterance and a reply separated by a tab".into(),
            })?;
            p.exchanges.push((partner, own));
        }
    }
    if let Some(p) = pending.take() {
        finish(p, &mut out);
    }
    Ok(out)
}

fn finish(p: Pending, out: &mut ParseOutput) {
    let id = format!("personachat-{:06}", out.dialogues.len() + out.warnings.len());
    let persona_for = |s: Speaker| {
        let lines = if s == Speaker::System { &p.self_persona } else { &p.partner_persona };
        (!lines.is_empty()).then(|| lines.clone())
    };
    let mut turns = Vec::new();
    for (partner, own) in &p.exchanges {
        for (speaker, text) in [(Speaker::User, partner), (Speaker::System, own)] {
            if text.is_empty() || text == SILENCE {
                continue;
            }
            let mut t = Turn::new(speaker, text.as_str());
            t.persona = persona_for(speaker);
            match turns.last_mut() {
                Some(Turn { speaker: last, text: lt, tokens, .. }) if *last == speaker => {
                    *lt = format!("{lt} {}", t.text);
                    tokens.extend(t.tokens);
                }
                _ => turns.push(t),
            }
        }
    }
    if turns.is_empty() {
        out.warnings.push(format!("{id}: no exchanges, dialogue dropped"));
        return;
    }
    out.dialogues.push(NormalizedDialogue { id, domain_goals: BTreeSet::new(), turns });
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "1 your persona: i have a dog.\n\
2 your persona: i love music.\n\
3 hi , how are you ?\ti am fine . do you like dogs ?\t\tyes|no\n\
4 i prefer cats .\tmy dog likes music .\n";

    #[test]
    fn fixture_yields_four_turns_with_owner_persona() {
        let out = parse_personachat(FIXTURE.as_bytes()).unwrap();
        assert_eq!(out.dialogues.len(), 1);
        let d = &out.dialogues[0];
        d.validate().unwrap();
        assert_eq!(d.turns.len(), 4);
        assert_eq!(d.turns[0].speaker, Speaker::User);
        for t in &d.turns {
            match t.speaker {
                Speaker::System => assert_eq!(t.persona.as_ref().unwrap().len(), 2),
                Speaker::User => assert!(t.persona.is_none()),
            }
            assert!(t.events.is_empty() && t.acts.is_empty());
        }
        assert_eq!(d.turns[1].persona.as_ref().unwrap()[0], "i have a dog.");
    }

    #[test]
    fn numbering_restart_splits_dialogues() {
        let two = format!("{FIXTURE}{FIXTURE}");
        let out = parse_personachat(two.as_bytes()).unwrap();
        assert_eq!(out.dialogues.len(), 2);
        assert_ne!(out.dialogues[0].id, out.dialogues[1].id);
    }

    #[test]
    fn persona_only_dialogue_is_dropped() {
        let out = parse_personachat(b"1 your persona: i swim.\n2 your persona: i run.\n").unwrap();
        assert!(out.dialogues.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn silence_lets_the_owner_open() {
        let out = parse_personachat(b"1 your persona: x.\n2 __SILENCE__\thello there\n3 hey\tbye\n").unwrap();
        let d = &out.dialogues[0];
        d.validate().unwrap();
        assert_eq!(d.turns[0].speaker, Speaker::System);
        assert_eq!(d.turns.len(), 3);
    }

    #[test]
    fn partner_persona_goes_to_user_turns() {
        let out = parse_personachat(b"1 partner's persona: i am tall.\n2 hi\thello\n").unwrap();
        assert_eq!(out.dialogues[0].turns[0].persona.as_deref(), Some(&["i am tall.".to_string()][..]));
    }

    #[test]
    fn unnumbered_line_is_a_format_error() {
        let err = parse_personachat(b"1 your persona: x.\nhello\tthere\n").unwrap_err();
        assert!(matches!(err, CorpusError::Format { line: 2, .. }));
    }
}
