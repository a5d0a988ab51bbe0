//! Summary-level ROUGE-L (ROUGE-Lsum) F-measure.
//!
//! Both texts are split into sentences. For every reference sentence the union
//! of its tokens matched by an LCS against each candidate sentence is taken;
//! hits are then clipped by the remaining token budget on both sides so no
//! token is counted twice.

use std::collections::{BTreeSet, HashMap};

use super::text::{split_sentences, tokenize};

fn lcs_table(a: &[String], b: &[String]) -> Vec<Vec<usize>> {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t
}

/// Indices into `reference` of one LCS with `candidate`, backtracking from the end
/// and preferring to drop a reference token when both moves keep the length.
fn lcs_indices(reference: &[String], candidate: &[String]) -> Vec<usize> {
    let t = lcs_table(reference, candidate);
    let (mut i, mut j) = (reference.len(), candidate.len());
    let mut out = Vec::new();
    while i > 0 && j > 0 {
        if reference[i - 1] == candidate[j - 1] {
            out.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i - 1][j] > t[i][j - 1] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out.reverse();
    out
}

pub fn rouge_lsum(candidate: &str, reference: &str) -> f64 {
    let cand: Vec<Vec<String>> = split_sentences(candidate)
        .into_iter()
        .map(tokenize)
        .filter(|t| !t.is_empty())
        .collect();
    let refs: Vec<Vec<String>> = split_sentences(reference)
        .into_iter()
        .map(tokenize)
        .filter(|t| !t.is_empty())
        .collect();
    let cand_total: usize = cand.iter().map(Vec::len).sum();
    let ref_total: usize = refs.iter().map(Vec::len).sum();
    if cand_total == 0 || ref_total == 0 {
        return 0.0;
    }

    let mut cand_budget: HashMap<&str, usize> = HashMap::new();
    for t in cand.iter().flatten() {
        *cand_budget.entry(t.as_str()).or_default() += 1;
    }
    let mut ref_budget: HashMap<&str, usize> = HashMap::new();
    for t in refs.iter().flatten() {
        *ref_budget.entry(t.as_str()).or_default() += 1;
    }

    let mut hits = 0usize;
    for r in &refs {
        let union: BTreeSet<usize> = cand.iter().flat_map(|c| lcs_indices(r, c)).collect();
        for idx in union {
            let tok = r[idx].as_str();
            let (Some(cb), Some(rb)) = (cand_budget.get(tok).copied(), ref_budget.get(tok).copied()) else {
                continue;
            };
            if cb > 0 && rb > 0 {
                hits += 1;
                cand_budget.insert(tok, cb - 1);
                ref_budget.insert(tok, rb - 1);
            }
        }
    }
    let precision = hits as f64 / cand_total as f64;
    let recall = hits as f64 / ref_total as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}
