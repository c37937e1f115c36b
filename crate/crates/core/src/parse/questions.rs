use super::ParseError;

pub const MAX_QUESTIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedQuestions {
    pub questions: Vec<String>,
    pub warnings: Vec<String>,
}

/// Splits a comma-separated list of questions.
///
/// Boundaries are `?` followed by optional whitespace or a closing quote and
/// a comma, so commas
/// inside a question survive. Newline-separated output wins when it yields
/// at least two lines ending in `?`.
pub fn parse_questions(raw: &str) -> Result<ParsedQuestions, ParseError> {
    let mut warnings = Vec::new();

    let lines: Vec<String> = raw.lines().map(clean).filter(|l| !l.is_empty()).collect();
    let line_questions = lines.iter().filter(|l| l.ends_with('?')).count();

    let mut questions: Vec<String> = if line_questions >= 2 {
        lines
            .into_iter()
            .filter(|l| {
                let keep = l.ends_with('?');
                if !keep {
                    warnings.push(format!("dropped non-question line '{l}'"));
                }
                keep
            })
            .collect()
    } else {
        split_on_question_commas(raw)
            .into_iter()
            .map(clean)
            .filter(|s| !s.is_empty())
            .filter(|s| {
                let keep = s.ends_with('?');
                if !keep {
                    warnings.push(format!("dropped non-question segment '{s}'"));
                }
                keep
            })
            .collect()
    };

    if questions.is_empty() {
        return Err(ParseError::MalformedResponse(
            "no questions found in response".into(),
        ));
    }
    if questions.len() > MAX_QUESTIONS {
        warnings.push(format!(
            "received {} questions, keeping the first {MAX_QUESTIONS}",
            questions.len()
        ));
        questions.truncate(MAX_QUESTIONS);
    }
    Ok(ParsedQuestions {
        questions,
        warnings,
    })
}

fn split_on_question_commas(raw: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut seg_start = 0;
    let mut iter = raw.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if c != '?' {
            continue;
        }
        let mut j = i + 1;
        let mut look = raw[j..].char_indices();
        let boundary = loop {
            match look.next() {
                Some((_, w)) if w.is_whitespace() || matches!(w, '"' | '\u{201D}') => continue,
                Some((k, ',')) => break Some(j + k + 1),
                _ => break None,
            }
        };
        if let Some(next) = boundary {
            out.push(&raw[seg_start..=i]);
            seg_start = next;
            j = next;
            while iter.peek().is_some_and(|(k, _)| *k < j) {
                iter.next();
            }
        }
    }
    out.push(&raw[seg_start..]);
    out
}

fn clean(segment: &str) -> String {
    let mut s = segment.trim();
    s = s.trim_end_matches(',').trim();
    s = s
        .strip_prefix(['-', '*', '\u{2022}'])
        .map(str::trim_start)
        .unwrap_or(s);
    // Leading numbering such as "1." or "2)".
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(r) = rest.strip_prefix(['.', ')']) {
            s = r.trim_start();
        }
    }
    let s = s.trim_matches(['"', '\u{201C}', '\u{201D}']).trim();
    s.to_string()
}
