//! SARI against a single reference.
//!
//! For n = 1..4 the add-F1, keep-F1 and deletion precision are computed from
//! n-gram counts of source, candidate and reference, averaged over n, and the
//! three averages are averaged. Empty denominators default to 1 (so an empty
//! add set with nothing to add scores a perfect add component), and an F1 with
//! P + R = 0 is 0.

use std::collections::{HashMap, HashSet};

use super::text::{ngram_counts, tokenize};

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// (keep F1, deletion precision, add F1) for one n-gram order.
pub fn sari_ngram(
    source: &HashMap<&[String], usize>,
    candidate: &HashMap<&[String], usize>,
    reference: &HashMap<&[String], usize>,
) -> (f64, f64, f64) {
    let get = |m: &HashMap<&[String], usize>, g: &[String]| m.get(g).copied().unwrap_or(0);

    // keep: grams present in both source and candidate
    let keep: HashMap<&[String], usize> = source
        .iter()
        .filter_map(|(g, &s)| {
            let k = s.min(get(candidate, g));
            (k > 0).then_some((*g, k))
        })
        .collect();
    let keep_all: HashMap<&[String], usize> = source
        .iter()
        .filter_map(|(g, &s)| {
            let k = s.min(get(reference, g));
            (k > 0).then_some((*g, k))
        })
        .collect();
    let mut keep_p_sum = 0.0;
    let mut keep_good_total = 0usize;
    for (g, &k) in &keep {
        let good = k.min(get(reference, g));
        keep_p_sum += good as f64 / k as f64;
        keep_good_total += good;
    }
    let keep_p = if keep.is_empty() { 1.0 } else { keep_p_sum / keep.len() as f64 };
    let keep_r = if keep_all.is_empty() {
        1.0
    } else {
        keep_good_total as f64 / keep_all.values().sum::<usize>() as f64
    };
    let keep_score = f1(keep_p, keep_r);

    // deletion: grams of the source the candidate dropped
    let deleted: HashMap<&[String], usize> = source
        .iter()
        .filter_map(|(g, &s)| {
            let d = s.saturating_sub(get(candidate, g));
            (d > 0).then_some((*g, d))
        })
        .collect();
    let del_p = if deleted.is_empty() {
        1.0
    } else {
        deleted
            .iter()
            .map(|(g, &d)| d.saturating_sub(get(reference, g)) as f64 / d as f64)
            .sum::<f64>()
            / deleted.len() as f64
    };

    // addition: gram types new in the candidate
    let src: HashSet<&[String]> = source.keys().copied().collect();
    let refs: HashSet<&[String]> = reference.keys().copied().collect();
    let added: HashSet<&[String]> = candidate.keys().copied().filter(|g| !src.contains(g)).collect();
    let add_all: HashSet<&[String]> = refs.difference(&src).copied().collect();
    let add_good = added.intersection(&refs).count();
    let add_p = if added.is_empty() { 1.0 } else { add_good as f64 / added.len() as f64 };
    let add_r = if add_all.is_empty() { 1.0 } else { add_good as f64 / add_all.len() as f64 };

    (keep_score, del_p, f1(add_p, add_r))
}

pub fn sari(source: &str, candidate: &str, reference: &str) -> f64 {
    let s = tokenize(source);
    let c = tokenize(candidate);
    let r = tokenize(reference);
    let (mut keep, mut del, mut add) = (0.0, 0.0, 0.0);
    for n in 1..=4 {
        let (k, d, a) = sari_ngram(&ngram_counts(&s, n), &ngram_counts(&c, n), &ngram_counts(&r, n));
        keep += k;
        del += d;
        add += a;
    }
    ((keep + del + add) / 12.0).clamp(0.0, 1.0)
}
