//! Prompt templates, shipped as text assets under `prompts/`.
//!
//! Templates use `{name}` placeholders with `{{` and `}}` as literal braces.

pub const CATEGORIZE_SYSTEM: &str = include_str!("../../prompts/categorize_system.txt");
pub const CATEGORIZE_GUIDANCE: &str = include_str!("../../prompts/categorize_guidance.txt");
pub const CATEGORIZE_USER: &str = include_str!("../../prompts/categorize_user.txt");
pub const NODE_SELECTION: &str = include_str!("../../prompts/node_selection.txt");
pub const SELECTION_FORMAT: &str = include_str!("../../prompts/selection_format.txt");
pub const EXTRACT_NAMES: &str = include_str!("../../prompts/extract_names.txt");
pub const REFLECT_NAMES: &str = include_str!("../../prompts/reflect_names.txt");
pub const RESOLVE_ENTITY: &str = include_str!("../../prompts/resolve_entity.txt");
pub const ENTITY_ATTRIBUTES: &str = include_str!("../../prompts/entity_attributes.txt");
pub const EXTRACT_EDGES: &str = include_str!("../../prompts/extract_edges.txt");
pub const REFLECT_EDGES: &str = include_str!("../../prompts/reflect_edges.txt");
pub const RESOLVE_EDGE: &str = include_str!("../../prompts/resolve_edge.txt");
pub const ANSWER: &str = include_str!("../../prompts/answer.txt");
pub const JUDGE: &str = include_str!("../../prompts/judge.txt");
pub const REPAIR: &str = include_str!("../../prompts/repair.txt");

/// Fills `{key}` placeholders. Unknown placeholders are left as written.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") {
            out.push('{');
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push('}');
            rest = &tail[2..];
        } else if tail.starts_with('{') {
            match tail.find('}') {
                Some(end) => {
                    let key = &tail[1..end];
                    match vars.iter().find(|(k, _)| *k == key) {
                        Some((_, v)) => out.push_str(v),
                        None => out.push_str(&tail[..=end]),
                    }
                    rest = &tail[end + 1..];
                }
                None => {
                    out.push_str(tail);
                    rest = "";
                }
            }
        } else {
            out.push('}');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

/// Placeholder names appearing in `template`.
pub fn placeholders(template: &str) -> Vec<String> {
    let stripped = template.replace("{{", "").replace("}}", "");
    let mut out = Vec::new();
    let mut rest = stripped.as_str();
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else { break };
        out.push(rest[start + 1..start + len].to_string());
        rest = &rest[start + len + 1..];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_and_unescapes() {
        assert_eq!(render("a {x} {{y}} {z}", &[("x", "1")]), "a 1 {y} {z}");
        assert_eq!(render("{prev_layer}", &[("prev_layer", "2")]), "2");
    }

    #[test]
    fn templates_use_the_expected_placeholders() {
        assert!(CATEGORIZE_SYSTEM.contains("\"Speaker\""));
        assert!(CATEGORIZE_USER.contains("<EXISTING CATEGORIES>"));
        assert_eq!(placeholders(NODE_SELECTION), vec!["query", "nodes_info"]);
        assert_eq!(placeholders(CATEGORIZE_USER), vec!["nodes", "existing", "guidance"]);
        assert_eq!(
            placeholders(CATEGORIZE_GUIDANCE),
            vec!["layer", "prev_layer", "prev_layer", "prev_example"]
        );
        assert!(placeholders(CATEGORIZE_SYSTEM).is_empty());
    }

    #[test]
    fn rendered_system_prompt_shows_single_braces() {
        let s = render(CATEGORIZE_SYSTEM, &[]);
        assert!(s.contains("{\"category\": \"Pets\", \"indexes\": [0, 3], \"tag\": [\"domestic animal\"]}"));
    }
}
