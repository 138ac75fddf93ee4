//! Shared text segmentation helpers.
//!
//! Token mode throughout the crate means Unicode-whitespace splitting with
//! empty tokens dropped, so runs of spaces, tabs, and newlines are equivalent
//! separators. Char mode means Unicode scalar values, not bytes.

/// Splits on Unicode whitespace, dropping empty segments.
pub fn whitespace_tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Canonical single-space form of `text` under token segmentation.
pub fn normalize_whitespace(text: &str) -> String {
    whitespace_tokens(text).join(" ")
}

/// Newline-normalizes (`\r\n` and bare `\r` become `\n`) for stable hashing
/// across platforms that rewrite line endings.
pub fn normalize_newlines(text: &str) -> String {
    if !text.contains('\r') {
        return text.to_string();
    }
    text.replace("\r\n", "\n").replace('\r', "\n")
}
