//! Text normalization and token-set similarity shared by keyword matching,
//! duplicate detection and analytics.

use std::collections::BTreeSet;

/// Lowercases, replaces punctuation with spaces and collapses whitespace.
///
/// Letters and digits of any script survive, so Japanese text keeps its
/// kana and kanji while losing `。`/`、`.
///
/// ```
/// use lbt_core::text::normalize_text;
///
/// assert_eq!(normalize_text("I see. Which word?"), "i see which word");
/// assert_eq!(normalize_text("  OVERTHROW!! "), "overthrow");
/// assert_eq!(normalize_text(""), "");
/// ```
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

/// Distinct normalized whitespace tokens.
pub fn token_set(s: &str) -> BTreeSet<String> {
    normalize_text(s)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Jaccard similarity `|A ∩ B| / |A ∪ B|`. Two empty sets compare as 0.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Case-insensitive substring test on the normalized forms. Inflections are
/// not recognized: "overthrew" does not contain "overthrow".
pub fn contains_phrase(haystack: &str, needle: &str) -> bool {
    let needle = normalize_text(needle);
    !needle.is_empty() && normalize_text(haystack).contains(&needle)
}
