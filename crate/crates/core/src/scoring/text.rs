//! Tokenization shared by the n-gram metrics.
//!
//! Text is lowercased and reduced to maximal runs of alphanumeric characters;
//! punctuation and whitespace separate tokens and are otherwise dropped.

use std::collections::HashMap;

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Splits prose into sentences at `.`, `!` or `?` followed by whitespace, and at line breaks.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut after_terminal = false;
    for (idx, c) in text.char_indices() {
        if c == '\n' || (after_terminal && c.is_whitespace()) {
            out.push(text[start..idx].trim());
            start = idx;
        }
        after_terminal = matches!(c, '.' | '!' | '?');
    }
    out.push(text[start..].trim());
    out.retain(|s| !s.is_empty());
    out
}

pub type NgramCounts<'a> = HashMap<&'a [String], usize>;

pub fn ngram_counts(tokens: &[String], n: usize) -> NgramCounts<'_> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_and_splits() {
        assert_eq!(tokenize("The CAT, sat-down."), vec!["the", "cat", "sat", "down"]);
        assert!(tokenize(" ... ").is_empty());
        assert_eq!(
            split_sentences("One two. Three!\nFour? five"),
            vec!["One two.", "Three!", "Four?", "five"]
        );
        assert_eq!(split_sentences("3.5 mg given."), vec!["3.5 mg given."]);
    }

    #[test]
    fn counts_ngrams() {
        let toks = tokenize("a b a b");
        let bi = ngram_counts(&toks, 2);
        assert_eq!(bi.len(), 2);
        assert_eq!(bi[&toks[0..2]], 2);
        assert!(ngram_counts(&toks, 5).is_empty());
    }
}
