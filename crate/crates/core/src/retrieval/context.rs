//! Renders final evidence lists into the text handed to the answer model.

use super::{Evidence, ItemKind, RankedItem};

/// Three sections in fixed order, headers always present:
///
/// ```text
/// EPISODES:
/// - [2023-06-17T09:00:00Z] Dave: I just got back from Detroit.
///
/// ENTITIES:
/// - Detroit: city in Michigan
/// - [category, layer 1] Geographical Locations: ...
///
/// FACTS:
/// - Dave attended a conference in Detroit. (2023-06-17 - now)
/// ```
pub fn assemble_context(evidence: &Evidence) -> String {
    let mut out = String::new();
    section(&mut out, "EPISODES:", &evidence.episodes, |it| match &it.timestamp {
        Some(t) => format!("[{}] {}", t.to_rfc3339(), it.display_text),
        None => it.display_text.clone(),
    });
    out.push('\n');
    section(&mut out, "ENTITIES:", &evidence.entities, |it| match (it.kind, it.layer) {
        (ItemKind::Category, Some(l)) => format!("[category, layer {l}] {}", it.display_text),
        _ => it.display_text.clone(),
    });
    out.push('\n');
    section(&mut out, "FACTS:", &evidence.edges, |it| it.display_text.clone());
    out
}

fn section(out: &mut String, header: &str, items: &[RankedItem], line: impl Fn(&RankedItem) -> String) {
    out.push_str(header);
    out.push('\n');
    for it in items {
        out.push_str("- ");
        // continuation lines are indented so every item starts with "- "
        out.push_str(&line(it).replace('\n', "\n  "));
        out.push('\n');
    }
}
