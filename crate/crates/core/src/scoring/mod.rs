//! Evaluation protocol: citation factuality, relevance metrics, the stage-2
//! composite reward, and the combined overall score.
//!
//! Factuality matches the sentences cited in each answer against the gold
//! evidence. Corpus scores are micro-averages over pooled TP/FP/FN counts.
//! Relevance is the mean of six metrics; BLEU, ROUGE-Lsum and SARI are native,
//! while BERTScore, AlignScore and MEDCON come from a [`SemanticScorer`] plugin
//! and are reported as missing when none is configured.

mod bleu;
mod plugin;
mod rouge;
mod sari;
pub mod text;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{parse_answer_text, EvidenceSet, StructuredAnswer};
use crate::corpus::{gold_evidence, CaseSet, CorpusError, EvidenceMode, Submission};

pub use bleu::{bleu, sentence_bleu};
pub use plugin::{parse_reply, FnScorer, HttpScorer, SemanticScorer, SubprocessScorer};
pub use rouge::rouge_lsum;
pub use sari::{sari, sari_ngram};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("submission case `{0}` is not in the gold set")]
    UnknownCase(String),
    #[error("gold case `{0}` lacks relevance labels")]
    UnlabeledGold(String),
    #[error("submission and gold set share no case ids")]
    CaseMismatch,
    #[error("no reference answer for case `{0}`")]
    MissingReference(String),
    #[error("semantic scorer protocol error: {0}")]
    PluginProtocol(String),
    #[error("no active metrics in the metric set")]
    NoActiveMetrics,
    #[error("official mode requires all six metrics; missing: {0:?}")]
    IncompleteMetrics(Vec<String>),
}

pub type Result<T> = std::result::Result<T, ScoringError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Pooled true-positive / false-positive / false-negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    /// `tp = |pred ∩ relevant|`, `fp = |pred \ relevant|`, `fn = |obligated \ pred|`.
    pub fn from_sets(pred: &BTreeSet<u32>, relevant: &BTreeSet<u32>, obligated: &BTreeSet<u32>) -> Self {
        Self {
            tp: pred.intersection(relevant).count(),
            fp: pred.difference(relevant).count(),
            fn_: obligated.difference(pred).count(),
        }
    }

    /// Precision, recall and F1 with the empty-set conventions: nothing
    /// predicted and nothing expected is perfect; an empty denominator
    /// otherwise gives 0; F1 is 0 when P + R = 0.
    pub fn prf(&self) -> Prf {
        if self.tp + self.fp + self.fn_ == 0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, rhs: Counts) -> Counts {
        Counts {
            tp: self.tp + rhs.tp,
            fp: self.fp + rhs.fp,
            fn_: self.fn_ + rhs.fn_,
        }
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

/// Pairwise summation in slice order; reproducible regardless of threading.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| pairwise_sum(xs) / xs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelevanceMetric {
    #[serde(rename = "BLEU")]
    Bleu,
    #[serde(rename = "ROUGE-Lsum")]
    RougeLsum,
    #[serde(rename = "SARI")]
    Sari,
    #[serde(rename = "BERTScore")]
    BertScore,
    #[serde(rename = "AlignScore")]
    AlignScore,
    #[serde(rename = "MEDCON")]
    Medcon,
}

impl RelevanceMetric {
    pub const ALL: [RelevanceMetric; 6] = [
        RelevanceMetric::Bleu,
        RelevanceMetric::RougeLsum,
        RelevanceMetric::Sari,
        RelevanceMetric::BertScore,
        RelevanceMetric::AlignScore,
        RelevanceMetric::Medcon,
    ];
    pub const NATIVE: [RelevanceMetric; 3] =
        [RelevanceMetric::Bleu, RelevanceMetric::RougeLsum, RelevanceMetric::Sari];
    pub const SEMANTIC: [RelevanceMetric; 3] = [
        RelevanceMetric::BertScore,
        RelevanceMetric::AlignScore,
        RelevanceMetric::Medcon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelevanceMetric::Bleu => "BLEU",
            RelevanceMetric::RougeLsum => "ROUGE-Lsum",
            RelevanceMetric::Sari => "SARI",
            RelevanceMetric::BertScore => "BERTScore",
            RelevanceMetric::AlignScore => "AlignScore",
            RelevanceMetric::Medcon => "MEDCON",
        }
    }

    pub fn is_native(self) -> bool {
        Self::NATIVE.contains(&self)
    }
}

impl fmt::Display for RelevanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Recall denominator for lenient factuality.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LenientRecallDenominator {
    Essential,
    #[default]
    EssentialPlusSupplementary,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuAggregation {
    #[default]
    Corpus,
    PerCaseMean,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub lenient_recall_denominator: LenientRecallDenominator,
    pub bleu_aggregation: BleuAggregation,
    /// Requires all six relevance metrics.
    pub official: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFactuality {
    pub strict: Prf,
    pub lenient: Prf,
    pub strict_counts: Counts,
    pub lenient_counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactualityReport {
    pub per_case: BTreeMap<String, CaseFactuality>,
    pub strict: Prf,
    pub lenient: Prf,
    /// Corpus strict F1 on the 0–100 scale.
    pub avg_fact: f64,
}

fn predicted_citations(answer: &str) -> BTreeSet<u32> {
    parse_answer_text(answer, &BTreeSet::new()).cited_ids()
}

fn check_submission_cases(submission: &Submission, gold: &CaseSet) -> Result<()> {
    if let Some(unknown) = submission.entries.iter().find(|e| gold.get(&e.case_id).is_none()) {
        return Err(ScoringError::UnknownCase(unknown.case_id.clone()));
    }
    if gold.is_empty() {
        return Err(ScoringError::EmptyCorpus);
    }
    if submission.entries.is_empty() {
        return Err(ScoringError::CaseMismatch);
    }
    Ok(())
}

/// Citation precision/recall/F1 per case and micro-averaged over the corpus.
///
/// Gold cases without a submission entry count as empty predictions.
pub fn factuality(submission: &Submission, gold: &CaseSet, config: &ScoringConfig) -> Result<FactualityReport> {
    check_submission_cases(submission, gold)?;
    let mut per_case = BTreeMap::new();
    let mut strict_total = Counts::default();
    let mut lenient_total = Counts::default();
    for case in gold.iter() {
        let essential = gold_evidence(case, EvidenceMode::Strict).map_err(|e| match e {
            CorpusError::MissingGoldLabels(id) => ScoringError::UnlabeledGold(id),
            other => ScoringError::UnlabeledGold(other.to_string()),
        })?;
        let lenient = gold_evidence(case, EvidenceMode::Lenient).map_err(|_| ScoringError::UnlabeledGold(case.case_id.clone()))?;
        let pred = submission
            .get(&case.case_id)
            .map(predicted_citations)
            .unwrap_or_default();
        let strict_counts = Counts::from_sets(&pred, &essential, &essential);
        let obligated = match config.lenient_recall_denominator {
            LenientRecallDenominator::Essential => &essential,
            LenientRecallDenominator::EssentialPlusSupplementary => &lenient,
        };
        let lenient_counts = Counts::from_sets(&pred, &lenient, obligated);
        strict_total = strict_total + strict_counts;
        lenient_total = lenient_total + lenient_counts;
        per_case.insert(
            case.case_id.clone(),
            CaseFactuality {
                strict: strict_counts.prf(),
                lenient: lenient_counts.prf(),
                strict_counts,
                lenient_counts,
            },
        );
    }
    let strict = strict_total.prf();
    Ok(FactualityReport {
        per_case,
        strict,
        lenient: lenient_total.prf(),
        avg_fact: strict.f1 * 100.0,
    })
}

/// Corpus means of the semantic metrics; metrics the scorer cannot provide are missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticScores {
    pub scores: BTreeMap<RelevanceMetric, f64>,
    pub per_case: Vec<BTreeMap<RelevanceMetric, f64>>,
    pub missing: BTreeSet<RelevanceMetric>,
}

pub fn semantic_scores(
    candidates: &[&str],
    references: &[&str],
    plugin: Option<&dyn SemanticScorer>,
) -> Result<SemanticScores> {
    if candidates.len() != references.len() {
        return Err(ScoringError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    let Some(plugin) = plugin else {
        return Ok(SemanticScores {
            missing: RelevanceMetric::SEMANTIC.into_iter().collect(),
            per_case: vec![BTreeMap::new(); candidates.len()],
            ..Default::default()
        });
    };
    let mut per_case = vec![BTreeMap::new(); candidates.len()];
    let mut scores = BTreeMap::new();
    for metric in RelevanceMetric::SEMANTIC {
        let values = candidates
            .iter()
            .zip(references)
            .map(|(c, r)| plugin.score(metric, c, r))
            .collect::<Result<Vec<_>>>()?;
        for (slot, v) in per_case.iter_mut().zip(&values) {
            slot.insert(metric, *v);
        }
        scores.insert(metric, mean(&values).ok_or(ScoringError::EmptyCorpus)?);
    }
    Ok(SemanticScores {
        scores,
        per_case,
        missing: BTreeSet::new(),
    })
}

/// Which relevance metrics feed the composite reward.
#[derive(Clone, Default)]
pub struct MetricSet {
    pub native: Vec<RelevanceMetric>,
    pub semantic: Option<Arc<dyn SemanticScorer>>,
    pub official: bool,
}

impl fmt::Debug for MetricSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricSet")
            .field("native", &self.native)
            .field("semantic", &self.semantic.is_some())
            .field("official", &self.official)
            .finish()
    }
}

impl MetricSet {
    /// BLEU, ROUGE-Lsum and SARI; no plugin.
    pub fn native() -> Self {
        Self {
            native: RelevanceMetric::NATIVE.to_vec(),
            semantic: None,
            official: false,
        }
    }

    pub fn with_semantic(mut self, scorer: Arc<dyn SemanticScorer>) -> Self {
        self.semantic = Some(scorer);
        self
    }

    pub fn active(&self) -> Vec<RelevanceMetric> {
        let mut out: Vec<_> = self.native.iter().copied().filter(|m| m.is_native()).collect();
        if self.semantic.is_some() {
            out.extend(RelevanceMetric::SEMANTIC);
        }
        out
    }

    /// Per-pair values of every active metric, each in [0, 1].
    pub fn evaluate(&self, source: &str, candidate: &str, reference: &str) -> Result<Vec<(RelevanceMetric, f64)>> {
        let active = self.active();
        if self.official && active.len() < RelevanceMetric::ALL.len() {
            let missing = RelevanceMetric::ALL
                .iter()
                .filter(|m| !active.contains(m))
                .map(|m| m.name().to_string())
                .collect();
            return Err(ScoringError::IncompleteMetrics(missing));
        }
        active
            .into_iter()
            .map(|m| {
                let v = match m {
                    RelevanceMetric::Bleu => sentence_bleu(candidate, reference),
                    RelevanceMetric::RougeLsum => rouge_lsum(candidate, reference),
                    RelevanceMetric::Sari => sari(source, candidate, reference),
                    semantic => self
                        .semantic
                        .as_ref()
                        .expect("semantic metrics are active only with a scorer")
                        .score(semantic, candidate, reference)?,
                };
                Ok((m, v))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeReward {
    pub length_indicator: u8,
    pub format_indicator: u8,
    pub metric_mean: f64,
    pub total: f64,
}

impl CompositeReward {
    /// `total = 1[length ok] + 1[format ok] + mean(metric values)`.
    pub fn from_parts(length_ok: bool, format_ok: bool, metric_values: &[f64]) -> Result<Self> {
        let metric_mean = mean(metric_values).ok_or(ScoringError::NoActiveMetrics)?;
        let length_indicator = u8::from(length_ok);
        let format_indicator = u8::from(format_ok);
        Ok(Self {
            length_indicator,
            format_indicator,
            metric_mean,
            total: f64::from(length_indicator) + f64::from(format_indicator) + metric_mean,
        })
    }

    /// Total rescaled to [0, 1].
    pub fn normalized(&self) -> f64 {
        self.total / 3.0
    }
}

/// Citation-stripped text of a rendered answer or reference.
pub fn strip_citations(text: &str) -> String {
    parse_answer_text(text, &BTreeSet::new()).plain_text()
}

pub fn composite_reward(
    answer: &StructuredAnswer,
    reference: &str,
    evidence: &EvidenceSet,
    metrics: &MetricSet,
) -> Result<CompositeReward> {
    let values = metrics.evaluate(&evidence.text(), &answer.plain_text(), &strip_citations(reference))?;
    let values: Vec<f64> = values.into_iter().map(|(_, v)| v).collect();
    CompositeReward::from_parts(answer.length_valid, answer.format_valid, &values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    /// Corpus scores on the 0–100 scale.
    pub per_metric: BTreeMap<RelevanceMetric, f64>,
    pub per_case: BTreeMap<String, BTreeMap<RelevanceMetric, f64>>,
    pub avg_relev: f64,
    pub missing: BTreeSet<RelevanceMetric>,
    pub partial: bool,
}

/// Relevance of every gold case's answer against its reference. The SARI
/// source is the case's note excerpt.
pub fn relevance(
    submission: &Submission,
    gold: &CaseSet,
    references: &BTreeMap<String, String>,
    config: &ScoringConfig,
    plugin: Option<&dyn SemanticScorer>,
) -> Result<RelevanceReport> {
    check_submission_cases(submission, gold)?;
    let mut candidates = Vec::with_capacity(gold.len());
    let mut refs = Vec::with_capacity(gold.len());
    let mut sources = Vec::with_capacity(gold.len());
    for case in gold.iter() {
        let reference = references
            .get(&case.case_id)
            .ok_or_else(|| ScoringError::MissingReference(case.case_id.clone()))?;
        candidates.push(submission.get(&case.case_id).map(strip_citations).unwrap_or_default());
        refs.push(strip_citations(reference));
        sources.push(case.note_text());
    }
    let cand: Vec<&str> = candidates.iter().map(String::as_str).collect();
    let refr: Vec<&str> = refs.iter().map(String::as_str).collect();

    let semantic = semantic_scores(&cand, &refr, plugin)?;
    if config.official && !semantic.missing.is_empty() {
        return Err(ScoringError::IncompleteMetrics(
            semantic.missing.iter().map(|m| m.name().to_string()).collect(),
        ));
    }

    let mut per_case: BTreeMap<String, BTreeMap<RelevanceMetric, f64>> = BTreeMap::new();
    let mut bleu_each = Vec::new();
    let mut rouge_each = Vec::new();
    let mut sari_each = Vec::new();
    for (idx, case) in gold.iter().enumerate() {
        let b = sentence_bleu(cand[idx], refr[idx]);
        let r = rouge_lsum(cand[idx], refr[idx]);
        let s = sari(&sources[idx], cand[idx], refr[idx]);
        bleu_each.push(b);
        rouge_each.push(r);
        sari_each.push(s);
        let mut row = BTreeMap::from([
            (RelevanceMetric::Bleu, b),
            (RelevanceMetric::RougeLsum, r),
            (RelevanceMetric::Sari, s),
        ]);
        row.extend(semantic.per_case[idx].iter().map(|(k, v)| (*k, *v)));
        per_case.insert(case.case_id.clone(), row);
    }
    let bleu_score = match config.bleu_aggregation {
        BleuAggregation::Corpus => bleu(&cand, &refr)?,
        BleuAggregation::PerCaseMean => mean(&bleu_each).ok_or(ScoringError::EmptyCorpus)?,
    };
    let mut per_metric = BTreeMap::from([
        (RelevanceMetric::Bleu, bleu_score * 100.0),
        (RelevanceMetric::RougeLsum, mean(&rouge_each).ok_or(ScoringError::EmptyCorpus)? * 100.0),
        (RelevanceMetric::Sari, mean(&sari_each).ok_or(ScoringError::EmptyCorpus)? * 100.0),
    ]);
    per_metric.extend(semantic.scores.iter().map(|(k, v)| (*k, v * 100.0)));
    let values: Vec<f64> = RelevanceMetric::ALL
        .iter()
        .filter_map(|m| per_metric.get(m).copied())
        .collect();
    Ok(RelevanceReport {
        avg_relev: mean(&values).ok_or(ScoringError::NoActiveMetrics)?,
        per_metric,
        per_case,
        partial: !semantic.missing.is_empty(),
        missing: semantic.missing,
    })
}

/// Combined score: the mean of the factuality and relevance averages.
pub fn overall_score(avg_fact: f64, avg_relev: f64) -> f64 {
    (avg_fact + avg_relev) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub table: TableRow,
    pub factuality: FactualityReport,
    pub relevance: RelevanceReport,
    pub overall: f64,
}

/// One results-table row, every value on the 0–100 scale. Semantic columns
/// are `null` when no scorer was available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    #[serde(rename = "P_S")]
    pub strict_precision: f64,
    #[serde(rename = "R_S")]
    pub strict_recall: f64,
    #[serde(rename = "F1_S")]
    pub strict_f1: f64,
    #[serde(rename = "P_L")]
    pub lenient_precision: f64,
    #[serde(rename = "R_L")]
    pub lenient_recall: f64,
    #[serde(rename = "F1_L")]
    pub lenient_f1: f64,
    #[serde(rename = "AVG_fact")]
    pub avg_fact: f64,
    #[serde(rename = "BLEU")]
    pub bleu: f64,
    #[serde(rename = "ROUGE-Lsum")]
    pub rouge_lsum: f64,
    #[serde(rename = "SARI")]
    pub sari: f64,
    #[serde(rename = "BERTScore")]
    pub bert_score: Option<f64>,
    #[serde(rename = "AlignScore")]
    pub align_score: Option<f64>,
    #[serde(rename = "MEDCON")]
    pub medcon: Option<f64>,
    #[serde(rename = "AVG_relev")]
    pub avg_relev: f64,
    #[serde(rename = "Overall")]
    pub overall: f64,
    pub partial: bool,
}

pub fn full_report(
    submission: &Submission,
    gold: &CaseSet,
    references: &BTreeMap<String, String>,
    config: &ScoringConfig,
    plugin: Option<&dyn SemanticScorer>,
) -> Result<FullReport> {
    let factuality = factuality(submission, gold, config)?;
    let relevance = relevance(submission, gold, references, config, plugin)?;
    let overall = overall_score(factuality.avg_fact, relevance.avg_relev);
    let metric = |m| relevance.per_metric.get(&m).copied();
    let table = TableRow {
        strict_precision: factuality.strict.precision * 100.0,
        strict_recall: factuality.strict.recall * 100.0,
        strict_f1: factuality.strict.f1 * 100.0,
        lenient_precision: factuality.lenient.precision * 100.0,
        lenient_recall: factuality.lenient.recall * 100.0,
        lenient_f1: factuality.lenient.f1 * 100.0,
        avg_fact: factuality.avg_fact,
        bleu: metric(RelevanceMetric::Bleu).unwrap_or(0.0),
        rouge_lsum: metric(RelevanceMetric::RougeLsum).unwrap_or(0.0),
        sari: metric(RelevanceMetric::Sari).unwrap_or(0.0),
        bert_score: metric(RelevanceMetric::BertScore),
        align_score: metric(RelevanceMetric::AlignScore),
        medcon: metric(RelevanceMetric::Medcon),
        avg_relev: relevance.avg_relev,
        overall,
        partial: relevance.partial,
    };
    Ok(FullReport {
        table,
        factuality,
        relevance,
        overall,
    })
}

impl TableRow {
    /// Aligned text table with one header line and one value line.
    pub fn render(&self, label: &str) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
        let cells = [
            ("Model", label.to_string()),
            ("P_S", format!("{:.1}", self.strict_precision)),
            ("R_S", format!("{:.1}", self.strict_recall)),
            ("F1_S", format!("{:.1}", self.strict_f1)),
            ("P_L", format!("{:.1}", self.lenient_precision)),
            ("R_L", format!("{:.1}", self.lenient_recall)),
            ("F1_L", format!("{:.1}", self.lenient_f1)),
            ("AVG_fact", format!("{:.1}", self.avg_fact)),
            ("BLEU", format!("{:.1}", self.bleu)),
            ("R.L.", format!("{:.1}", self.rouge_lsum)),
            ("SARI", format!("{:.1}", self.sari)),
            ("B.S.", opt(self.bert_score)),
            ("A.S.", opt(self.align_score)),
            ("M.C.", opt(self.medcon)),
            ("AVG_relev", format!("{:.1}", self.avg_relev)),
            ("Overall", format!("{:.1}", self.overall)),
        ];
        let widths: Vec<usize> = cells.iter().map(|(h, v)| h.len().max(v.len())).collect();
        let header: Vec<String> = cells.iter().zip(&widths).map(|((h, _), w)| format!("{h:>w$}")).collect();
        let values: Vec<String> = cells.iter().zip(&widths).map(|((_, v), w)| format!("{v:>w$}")).collect();
        let mut out = format!("{}\n{}\n", header.join(" | "), values.join(" | "));
        if self.partial {
            out.push_str("(partial: semantic metrics unavailable, relevance averaged over native metrics)\n");
        }
        out
    }
}
