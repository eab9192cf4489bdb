use serde::{Deserialize, Serialize};

use super::NormalizedDialogue;

/// Truncated conversation history ending at `turn_index`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub dialogue_id: String,
    pub turn_index: usize,
    /// The last `W` tokens of turns `0..=turn_index`.
    pub tokens: Vec<String>,
    /// Per-turn token counts inside the window, oldest first, empty turns
    /// omitted; sums to `tokens.len()`.
    pub segments: Vec<usize>,
}

/// One `(context, next-turn tokens)` pair per non-final turn.
pub fn make_contexts(dialogue: &NormalizedDialogue, window: usize) -> Vec<(Context, Vec<String>)> {
    let n = dialogue.turns.len();
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    let mut history: Vec<String> = Vec::new();
    let mut lengths: Vec<usize> = Vec::new();
    for t in 0..n.saturating_sub(1) {
        let toks = &dialogue.turns[t].tokens;
        history.extend(toks.iter().cloned());
        lengths.push(toks.len());

        let keep = history.len().min(window);
        let tokens = history[history.len() - keep..].to_vec();
        let mut segments = Vec::new();
        let mut remaining = keep;
        for &len in lengths.iter().rev() {
            if remaining == 0 {
                break;
            }
            let take = len.min(remaining);
            if take > 0 {
                segments.push(take);
            }
            remaining -= take;
        }
        segments.reverse();

        let context = Context { dialogue_id: dialogue.id.clone(), turn_index: t, tokens, segments };
        out.push((context, dialogue.turns[t + 1].tokens.clone()));
    }
    out
}
