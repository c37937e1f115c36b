pub const MAX_SUMMARY_CHARS: usize = 400;

/// The first two sentences of an explanation, capped at
/// [`MAX_SUMMARY_CHARS`] characters (ending in `…` when cut).
pub fn derive_short_summary(explanation: &str) -> String {
    let text = explanation.trim();
    let mut sentences = 0;
    let mut end = text.len();
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let boundary = match iter.peek() {
            Some((_, next)) => next.is_whitespace(),
            None => true,
        };
        if boundary {
            sentences += 1;
            if sentences == 2 {
                end = i + c.len_utf8();
                break;
            }
        }
    }
    let summary = text[..end].trim_end();
    if summary.chars().count() <= MAX_SUMMARY_CHARS {
        return summary.to_string();
    }
    let mut cut: String = summary.chars().take(MAX_SUMMARY_CHARS - 1).collect();
    cut.push('…');
    cut
}
