//! Tokenization, vocabularies, encoded id streams, mini-batching and cloze
//! instances.

mod batch;
mod cloze;
mod encoded;
pub(crate) use encoded::Reader;
mod vocab;
pub mod synthetic;

use std::sync::LazyLock;

use regex::Regex;

pub use batch::{batchify, Batches, Window};
pub use cloze::{load_cloze, parse_cloze, Category, ClozeInstance, CANDIDATES};
pub use encoded::{encode, EncodedCorpus, Split};
pub use vocab::Vocabulary;

pub const UNK: &str = "<unk>";
pub const NUM: &str = "<num>";
/// A line (or token) holding only this marker separates two articles.
pub const DOC_SEPARATOR: &str = "<doc>";
pub const BLANK: &str = "_____";

static NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[+-]?(?:\d{1,3}(?:,\d{3})+|\d+)?(?:\.\d+)?$").expect("valid pattern")
});

/// True for an optionally signed integer or decimal, with optional
/// thousands grouping: `1984`, `-3.5`, `12,500`, `.25`.
pub fn is_number(token: &str) -> bool {
    token.bytes().any(|b| b.is_ascii_digit()) && NUMBER.is_match(token)
}

/// Splits on whitespace and replaces numeric tokens with [`NUM`].
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if is_number(t) { NUM.to_string() } else { t.to_string() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_become_the_number_symbol() {
        assert_eq!(tokenize("born in 1984 ."), ["born", "in", NUM, "."]);
        assert_eq!(tokenize("a 12,500 b -3.5 c"), ["a", NUM, "b", NUM, "c"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize(" \n\t ").is_empty());
    }

    #[test]
    fn number_pattern_edges() {
        for yes in ["0", "+7", "1,000,000", "3.14", ".5", "-0.25"] {
            assert!(is_number(yes), "{yes}");
        }
        for no in ["1.2.3", "12,50", "1,0000", "abc", "B52", "1984s", "-", ".", "1,", "+"] {
            assert!(!is_number(no), "{no}");
        }
    }
}
