//! Fallback token counter.
//!
//! Used only when a backend response carries no usage block. The rule is a
//! whitespace-and-punctuation segmentation: every maximal run of word
//! characters (Unicode alphanumerics and `_`) is one token, and every other
//! non-whitespace character is a token of its own. Whitespace is never counted.
//!
//! Concatenation can merge at most one pair of word runs at the seam, so
//! `count(a + b) >= count(a) + count(b) - 1`, which gives the monotonicity
//! bound `count(a + b) >= max(count(a), count(b))`.

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Number of tokens in `text` under the fallback rule.
pub fn count_tokens(text: &str) -> u64 {
    token_spans(text).count() as u64
}

/// Byte spans `(start, end)` of each token, in order.
pub fn token_spans(text: &str) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut chars = text.char_indices().peekable();
    std::iter::from_fn(move || loop {
        let (start, c) = chars.next()?;
        if c.is_whitespace() {
            continue;
        }
        let mut end = start + c.len_utf8();
        if is_word_char(c) {
            while let Some(&(i, next)) = chars.peek() {
                if !is_word_char(next) {
                    break;
                }
                end = i + next.len_utf8();
                chars.next();
            }
        }
        return Some((start, end));
    })
}

/// Longest prefix of `text` holding at most `max_tokens` tokens.
pub fn truncate_to_tokens(text: &str, max_tokens: u64) -> &str {
    if max_tokens == 0 {
        return "";
    }
    match token_spans(text).nth(max_tokens as usize - 1) {
        Some((_, end)) => &text[..end],
        None => text,
    }
}
