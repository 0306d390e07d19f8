//! Text helpers shared by the metrics and the offline embedder.

use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

/// Token pattern: maximal runs of Unicode letters and digits. Everything else
/// (whitespace, punctuation, symbols) is a boundary and is discarded.
pub const TOKEN_PATTERN: &str = r"[\p{L}\p{N}]+";

fn token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(TOKEN_PATTERN).expect("token pattern"))
}

/// Lower-cases `text` and splits it into [`TOKEN_PATTERN`] tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    token_regex()
        .find_iter(&lowered)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Hex-encoded SHA-256 of the UTF-8 bytes of `text`.
pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Case-fold plus trim, used wherever tool names are compared.
pub fn fold_name(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Number of Unicode scalar values, the unit for every character budget.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_on_punctuation_and_case_folds() {
        assert_eq!(
            tokenize("The cat, sat-on THE mat!"),
            vec!["the", "cat", "sat", "on", "the", "mat"]
        );
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
