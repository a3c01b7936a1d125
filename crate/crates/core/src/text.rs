//! Text normalization shared by the corpus loaders, pair generation, and the
//! encoder. Stored form is trim + NFC; matching additionally case-folds.

use unicode_normalization::UnicodeNormalization;

/// Canonical stored form of a text field: trimmed and Unicode NFC.
pub fn normalize(s: &str) -> String {
    s.trim().nfc().collect()
}

/// Canonical matching key: [`normalize`] plus case folding. Two titles are
/// "the same" exactly when their match keys are byte-equal.
pub fn match_key(s: &str) -> String {
    normalize(s).to_lowercase()
}
