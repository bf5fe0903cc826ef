//! Small text helpers shared by the mock backends, the answer matcher and
//! the metrics.

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase()).collect()
}

/// Whitespace token count, the unit the mock backends bill in.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Lowercase with runs of whitespace collapsed to one space.
pub fn normalize_ws_lower(text: &str) -> String {
    text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Parses a `key: value` line. Keys are short labels (at most four words of
/// alphanumerics, `_` or `-`); anything else is treated as prose.
pub fn parse_kv_line(line: &str) -> Option<(String, String)> {
    let (key, value) = line.split_once(':')?;
    let key = key.trim();
    let value = value.trim();
    if key.is_empty() || value.is_empty() || key.len() > 48 {
        return None;
    }
    if key.split_whitespace().count() > 4 {
        return None;
    }
    let ok = key.chars().all(|c| c.is_alphanumeric() || c == ' ' || c == '_' || c == '-');
    ok.then(|| (key.to_lowercase(), value.to_string()))
}
