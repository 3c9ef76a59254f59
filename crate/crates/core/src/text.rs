//! Text normalization shared by graph construction, retrieval and analytics.

/// Canonical text form used for node identity and deduplication.
///
/// Lowercases, strips leading/trailing whitespace, collapses internal
/// whitespace runs to a single space and drops non-whitespace control
/// characters. May return an empty string; callers decide what that means.
pub fn normalize_text(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .filter(|c| !c.is_control() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_and_collapses_whitespace() {
        assert_eq!(normalize_text("  A Black   Suit "), "a black suit");
    }

    #[test]
    fn empty_stays_empty() {
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("   \t\n"), "");
    }

    #[test]
    fn tabs_and_newlines_collapse_to_spaces() {
        assert_eq!(normalize_text("Tab\tand\nnewline"), "tab and newline");
    }

    #[test]
    fn drops_non_whitespace_control_characters() {
        assert_eq!(normalize_text("be\u{7}ep\u{0}"), "beep");
    }
}
