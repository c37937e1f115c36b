use crate::model::{EventId, EventSpan, RelationshipText};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedMarkup {
    pub text: RelationshipText,
    pub warnings: Vec<String>,
}

/// Extracts `=display@Event Name=` references from relationship prose.
///
/// Each marker becomes a span over its display text in `plain_text`; the
/// name is matched case-insensitively (after trimming) against
/// `known_events`. An `=` that does not open a well-formed marker is kept as
/// literal text and reported as a warning.
pub fn parse_relationship_markup(raw: &str, known_events: &[(EventId, String)]) -> ParsedMarkup {
    let chars: Vec<char> = raw.chars().collect();
    let mut plain = String::with_capacity(raw.len());
    let mut plain_len = 0usize;
    let mut spans = Vec::new();
    let mut warnings = Vec::new();

    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '=' {
            if let Some(span) = marker_at(&chars, i) {
                let display: String = chars[i + 1..span.at].iter().collect();
                let name: String = chars[span.at + 1..span.close].iter().collect();
                let start = plain_len;
                plain_len += span.at - (i + 1);
                plain.push_str(&display);
                let event = resolve(&name, known_events);
                spans.push(EventSpan {
                    start,
                    end: plain_len,
                    display_text: display,
                    event_name: name,
                    event,
                });
                i = span.close + 1;
                continue;
            }
            warnings.push(format!("unmatched '=' at character {i} kept as text"));
        }
        plain.push(c);
        plain_len += 1;
        i += 1;
    }

    ParsedMarkup {
        text: RelationshipText {
            plain_text: plain,
            spans,
        },
        warnings,
    }
}

struct Marker {
    at: usize,
    close: usize,
}

fn marker_at(chars: &[char], open: usize) -> Option<Marker> {
    let close = open + 1 + chars[open + 1..].iter().position(|&c| c == '=')?;
    let at = open + 1 + chars[open + 1..close].iter().position(|&c| c == '@')?;
    let display_empty = at == open + 1;
    let name_blank = chars[at + 1..close].iter().all(|c| c.is_whitespace());
    if display_empty || name_blank {
        return None;
    }
    Some(Marker { at, close })
}

fn resolve(name: &str, known: &[(EventId, String)]) -> Option<EventId> {
    let wanted = name.trim().to_lowercase();
    known
        .iter()
        .find(|(_, n)| n.trim().to_lowercase() == wanted)
        .map(|(id, _)| id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn passthrough_without_markers() {
        let p = parse_relationship_markup("Plain prose only.", &[]);
        assert_eq!(p.text.plain_text, "Plain prose only.");
        assert!(p.text.spans.is_empty());
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn resolved_span() {
        let id = EventId::from("cortes");
        let known = vec![(
            id.clone(),
            "Hernán Cortés conquers the Aztec Empire".to_string(),
        )];
        let p = parse_relationship_markup(
            "The =conquest@Hernán Cortés conquers the Aztec Empire= reshaped Mexico.",
            &known,
        );
        assert_eq!(p.text.plain_text, "The conquest reshaped Mexico.");
        assert_eq!(p.text.spans.len(), 1);
        let s = &p.text.spans[0];
        assert_eq!((s.start, s.end), (4, 12));
        assert_eq!(s.display_text, "conquest");
        assert_eq!(s.event, Some(id));
    }

    #[test]
    fn case_insensitive_match() {
        let id = EventId::from("x");
        let known = vec![(id.clone(), "Founding of Jamestown".to_string())];
        let p = parse_relationship_markup("=it@ founding of JAMESTOWN =", &known);
        assert_eq!(p.text.spans[0].event, Some(id));
    }

    #[test]
    fn unresolved_span() {
        let p = parse_relationship_markup("=a@Unknown Event=", &[]);
        assert_eq!(p.text.plain_text, "a");
        assert_eq!(p.text.spans.len(), 1);
        assert_eq!(p.text.spans[0].display_text, "a");
        assert_eq!(p.text.spans[0].event, None);
    }

    #[test]
    fn lone_marker_is_literal() {
        let p = parse_relationship_markup("only one = marker", &[]);
        assert_eq!(p.text.plain_text, "only one = marker");
        assert!(p.text.spans.is_empty());
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn literal_then_marker() {
        let p = parse_relationship_markup("a = b =x@Y= c", &[]);
        assert_eq!(p.text.plain_text, "a = b x c");
        assert_eq!(p.text.spans.len(), 1);
        assert_eq!(p.text.to_markup(), "a = b =x@Y= c");
    }

    #[test]
    fn multibyte_offsets_are_chars() {
        let p = parse_relationship_markup("Ñ =é@E= ü", &[]);
        assert_eq!(p.text.plain_text, "Ñ é ü");
        assert_eq!((p.text.spans[0].start, p.text.spans[0].end), (2, 3));
    }

    proptest! {
        #[test]
        fn round_trip(
            parts in proptest::collection::vec(("[^=]{0,12}", "[^=@]{1,8}", "[^=]{0,6}[^=\\s][^=]{0,6}"), 0..6),
            tail in "[^=]{0,12}",
        ) {
            let mut raw = String::new();
            for (text, display, name) in &parts {
                raw.push_str(text);
                raw.push('=');
                raw.push_str(display);
                raw.push('@');
                raw.push_str(name);
                raw.push('=');
            }
            raw.push_str(&tail);
            let p = parse_relationship_markup(&raw, &[]);
            prop_assert_eq!(p.text.spans.len(), parts.len());
            prop_assert!(p.warnings.is_empty());
            prop_assert_eq!(p.text.to_markup(), raw);
        }

        #[test]
        fn any_input_round_trips(s in "\\PC{0,120}") {
            let p = parse_relationship_markup(&s, &[]);
            prop_assert_eq!(p.text.to_markup(), s);
            let mut prev = 0;
            for span in &p.text.spans {
                prop_assert!(span.start >= prev && span.end > span.start);
                prev = span.end;
            }
        }
    }
}
