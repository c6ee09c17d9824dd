/// Splits `text` into lowercase terms.
///
/// A term is a maximal run of characters for which `char::is_alphanumeric`
/// holds (Unicode `Alphabetic` or `Numeric`); everything else is a boundary.
/// Terms are lowercased with full Unicode case mapping. There is no stemming
/// and no stop-word list. Index and query paths both go through here.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}
