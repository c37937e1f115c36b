//! Deterministic inputs for the benchmarks in `benches/`.

use gentl_core::model::{EventDraft, EventId, EventType, NodePlacement, Year};
use gentl_core::parse::serialize_events;

/// `n` drafts spread over roughly two millennia, in scrambled year order.
pub fn drafts(n: usize) -> Vec<EventDraft> {
    (0..n)
        .map(|i| EventDraft {
            name: format!("Event number {i}"),
            year: Year::new(((i * 7919) % 2000) as i64).expect("year in range"),
            event_type: EventType::ALL[i % EventType::ALL.len()],
        })
        .collect()
}

/// A model-style events payload with `n` entries.
pub fn events_payload(n: usize) -> String {
    serialize_events(&drafts(n))
}

/// Unpinned placements along one row, dense enough to need several lanes.
pub fn placements(n: usize) -> Vec<NodePlacement> {
    (0..n)
        .map(|i| NodePlacement {
            event_id: EventId::from(format!("n{i}")),
            x: ((i * 7919) % (n * 40)) as f64,
            y: 0.0,
            pinned: false,
        })
        .collect()
}

/// Relationship prose with `n` markers, half of which name `known` events.
pub fn markup(n: usize) -> (String, Vec<(EventId, String)>) {
    let mut text = String::new();
    let mut known = Vec::new();
    for i in 0..n {
        text.push_str("In the years that followed, ");
        text.push_str(&format!(
            "=this change@Event number {i}= shaped what came next. "
        ));
        if i % 2 == 0 {
            known.push((EventId::from(format!("e{i}")), format!("Event number {i}")));
        }
    }
    (text, known)
}
