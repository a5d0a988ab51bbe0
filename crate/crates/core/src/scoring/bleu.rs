//! Corpus BLEU-4 with a brevity penalty.
//!
//! Unigram precision is unsmoothed; orders 2–4 use add-one smoothing
//! `(matches + 1) / (total + 1)`. Zero unigram matches or an empty candidate
//! side score 0.

use std::collections::HashMap;

use super::text::{ngram_counts, tokenize};
use super::{Result, ScoringError};

pub const MAX_ORDER: usize = 4;

pub fn bleu(candidates: &[&str], references: &[&str]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(ScoringError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(ScoringError::EmptyCorpus);
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, reference) in candidates.iter().zip(references) {
        let c = tokenize(cand);
        let r = tokenize(reference);
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let cc = ngram_counts(&c, n);
            let rc: HashMap<_, _> = ngram_counts(&r, n);
            totals[n - 1] += cc.values().sum::<usize>();
            matches[n - 1] += cc
                .iter()
                .map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    if cand_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let log_precision: f64 = (0..MAX_ORDER)
        .map(|i| {
            let p = if i == 0 {
                matches[0] as f64 / totals[0] as f64
            } else {
                (matches[i] as f64 + 1.0) / (totals[i] as f64 + 1.0)
            };
            p.ln()
        })
        .sum::<f64>()
        / MAX_ORDER as f64;
    let brevity = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok((brevity * log_precision.exp()).clamp(0.0, 1.0))
}

/// BLEU of a single candidate/reference pair.
pub fn sentence_bleu(candidate: &str, reference: &str) -> f64 {
    bleu(&[candidate], &[reference]).expect("one pair is a non-empty corpus")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_disjoint() {
        assert_eq!(bleu(&["a b c", "d e"], &["a b c", "d e"]).unwrap(), 1.0);
        assert_eq!(sentence_bleu("x y z", "a b c"), 0.0);
        assert_eq!(sentence_bleu("", "a b c"), 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(bleu(&[], &[]), Err(ScoringError::EmptyCorpus)));
        assert!(matches!(
            bleu(&["a"], &[]),
            Err(ScoringError::LengthMismatch { .. })
        ));
    }
}
