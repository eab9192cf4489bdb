/// Characters emitted as standalone tokens. The apostrophe is handled
/// separately: it opens a new token so clitics stay whole (`'m`, `'s`).
pub const SPLIT_PUNCTUATION: [char; 6] = ['.', ',', '!', '?', ';', '"'];

/// Lowercases, splits on whitespace, and separates punctuation.
///
/// `:` and `-` are ordinary characters, so times and reference numbers such
/// as `18:15` survive as single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if SPLIT_PUNCTUATION.contains(&ch) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else if ch == '\'' {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                cur.push(ch);
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}
