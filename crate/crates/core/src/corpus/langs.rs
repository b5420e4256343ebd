use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Reserved code for undetermined language.
pub const UNDETERMINED: &str = "und";

const AFRICAN_LANGUAGES: &str = include_str!("../../data/african_languages.txt");

/// Shape check only: three lowercase ASCII letters.
pub fn is_valid_language(code: &str) -> bool {
    code.len() == 3 && code.bytes().all(|b| b.is_ascii_lowercase())
}

/// Parse a one-code-per-line list (comments with `#`, commas also accepted).
pub fn parse_language_set(text: &str, context: &str) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for code in line.split([',', ' ', '\t']).map(str::trim).filter(|s| !s.is_empty()) {
            if !is_valid_language(code) {
                return Err(Error::parse(context, format!("`{code}` is not an ISO-639-3 code")));
            }
            out.insert(code.to_string());
        }
    }
    Ok(out)
}

/// The shipped static allowlist of African ISO-639-3 codes.
pub fn african_allowlist() -> BTreeSet<String> {
    parse_language_set(AFRICAN_LANGUAGES, "african_languages.txt").expect("bundled list is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        assert!(is_valid_language("yor"));
        assert!(is_valid_language(UNDETERMINED));
        assert!(!is_valid_language("en"));
        assert!(!is_valid_language("YOR"));
        let set = african_allowlist();
        assert!(set.contains("zul") && set.contains("xho"));
        assert!(!set.contains("eng"));
        assert!(parse_language_set("yor, kin\n# x\nEN", "t").is_err());
    }
}
