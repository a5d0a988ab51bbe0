//! Stage 2: citation-constrained answer generation.
//!
//! The answer grammar is a sequence of sentences, each ending in one
//! parenthetical citation group: `text (1, 3) text (2)`. Parsing is total;
//! grammar and constraint violations are reported through `format_valid` and
//! `length_valid` rather than errors.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Case;
use crate::evidence::{LabelVector, VoteRecord};
use crate::llm::{Gateway, GatewayError, PromptRequest, Purpose, SamplingParams};
use crate::prompt::PromptConfig;

pub const MAX_ANSWER_WORDS: usize = 75;

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error("case `{case_id}` has {sentences} sentences but {labels} labels")]
    LengthMismatch {
        case_id: String,
        sentences: usize,
        labels: usize,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub type Result<T> = std::result::Result<T, AnswerError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub id: u32,
    pub text: String,
}

/// Sentences predicted essential, in note order, with their original ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub case_id: String,
    pub items: Vec<EvidenceItem>,
}

impl EvidenceSet {
    pub fn ids(&self) -> BTreeSet<u32> {
        self.items.iter().map(|i| i.id).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn text(&self) -> String {
        self.items
            .iter()
            .map(|i| i.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Evidence consisting of the given sentence ids of `case`, in note order.
    pub fn from_ids(case: &Case, ids: &BTreeSet<u32>) -> Self {
        Self {
            case_id: case.case_id.clone(),
            items: case
                .sentences
                .iter()
                .filter(|s| ids.contains(&s.id))
                .map(|s| EvidenceItem {
                    id: s.id,
                    text: s.text.clone(),
                })
                .collect(),
        }
    }
}

pub fn build_evidence_set(case: &Case, final_labels: &LabelVector) -> Result<EvidenceSet> {
    if final_labels.labels.len() != case.sentences.len() {
        return Err(AnswerError::LengthMismatch {
            case_id: case.case_id.clone(),
            sentences: case.sentences.len(),
            labels: final_labels.labels.len(),
        });
    }
    Ok(EvidenceSet::from_ids(case, &final_labels.positive_ids()))
}

/// The evidence actually shown to the generator: `evidence` itself, or, when it
/// is empty, the single top-voted sentence (sentence 1 without a vote record).
pub fn resolve_evidence(case: &Case, evidence: &EvidenceSet, votes: Option<&VoteRecord>) -> EvidenceSet {
    if !evidence.is_empty() {
        return evidence.clone();
    }
    let id = votes.and_then(VoteRecord::top_voted).unwrap_or(1);
    EvidenceSet::from_ids(case, &BTreeSet::from([id]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSentence {
    pub text: String,
    pub citations: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredAnswer {
    pub case_id: String,
    pub sentences: Vec<AnswerSentence>,
    pub word_count: usize,
    pub format_valid: bool,
    pub length_valid: bool,
}

impl StructuredAnswer {
    /// Builds an answer and derives word count and both validity flags.
    pub fn from_sentences(case_id: impl Into<String>, sentences: Vec<AnswerSentence>, allowed: &BTreeSet<u32>) -> Self {
        let word_count = sentences
            .iter()
            .map(|s| s.text.split_whitespace().count())
            .sum();
        let format_valid = !sentences.is_empty()
            && sentences
                .iter()
                .all(|s| !s.citations.is_empty() && s.citations.is_subset(allowed));
        Self {
            case_id: case_id.into(),
            sentences,
            word_count,
            format_valid,
            length_valid: word_count <= MAX_ANSWER_WORDS,
        }
    }

    /// Submission rendering: `text (id, id) text (id)`.
    pub fn render(&self) -> String {
        self.sentences
            .iter()
            .map(|s| {
                if s.citations.is_empty() {
                    s.text.clone()
                } else {
                    format!("{} ({})", s.text, join_ids(&s.citations))
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Answer text with citation groups removed.
    pub fn plain_text(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn cited_ids(&self) -> BTreeSet<u32> {
        self.sentences
            .iter()
            .flat_map(|s| s.citations.iter().copied())
            .collect()
    }

    fn validity_rank(&self) -> u8 {
        u8::from(self.format_valid) + u8::from(self.length_valid)
    }

    /// Human-readable reasons the answer breaks the length or citation rules.
    pub fn violations(&self, allowed: &BTreeSet<u32>) -> Vec<String> {
        let mut out = Vec::new();
        if !self.length_valid {
            out.push(format!(
                "it has {} words but the limit is {MAX_ANSWER_WORDS}",
                self.word_count
            ));
        }
        if self.sentences.is_empty() {
            out.push("it is empty".into());
        }
        let uncited = self.sentences.iter().filter(|s| s.citations.is_empty()).count();
        if uncited > 0 {
            out.push(format!("{uncited} sentence(s) have no citation"));
        }
        let foreign: BTreeSet<u32> = self.cited_ids().difference(allowed).copied().collect();
        if !foreign.is_empty() {
            out.push(format!(
                "it cites ids that are not evidence sentences: {}",
                join_ids(&foreign)
            ));
        }
        out
    }

    /// Minimal repair so the answer satisfies the submission grammar: drop ids
    /// outside `evidence`, give uncited sentences the citations of the next
    /// (else previous) cited sentence, and fall back to quoting the first
    /// evidence sentence when nothing is left. Length is not touched.
    pub fn repaired(&self, evidence: &EvidenceSet) -> StructuredAnswer {
        let allowed = evidence.ids();
        let mut sentences: Vec<AnswerSentence> = self
            .sentences
            .iter()
            .map(|s| AnswerSentence {
                text: s.text.clone(),
                citations: s.citations.intersection(&allowed).copied().collect(),
            })
            .collect();
        let cited: Vec<Option<BTreeSet<u32>>> = sentences
            .iter()
            .map(|s| (!s.citations.is_empty()).then(|| s.citations.clone()))
            .collect();
        for (i, s) in sentences.iter_mut().enumerate() {
            if s.citations.is_empty() {
                let donor = cited[i..]
                    .iter()
                    .flatten()
                    .next()
                    .or_else(|| cited[..i].iter().rev().flatten().next());
                if let Some(donor) = donor {
                    s.citations = donor.clone();
                }
            }
        }
        if sentences.iter().any(|s| s.citations.is_empty()) || sentences.is_empty() {
            sentences = evidence
                .items
                .first()
                .map(|item| {
                    vec![AnswerSentence {
                        text: item.text.clone(),
                        citations: BTreeSet::from([item.id]),
                    }]
                })
                .unwrap_or_default();
        }
        StructuredAnswer::from_sentences(self.case_id.clone(), sentences, &allowed)
    }
}

fn join_ids(ids: &BTreeSet<u32>) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")
}

fn citation_group() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(\s*(\d+(?:\s*,\s*\d+)*)\s*\)").expect("citation grammar compiles"))
}

fn is_trailing_punct(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | ';' | ':' | ',')
}

/// Splits on `.`, `!` or `?` followed by whitespace.
fn split_sentences(segment: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut after_terminal = false;
    for (idx, c) in segment.char_indices() {
        if after_terminal && c.is_whitespace() {
            out.push(segment[start..idx].trim().to_string());
            start = idx;
        }
        after_terminal = matches!(c, '.' | '!' | '?');
    }
    out.push(segment[start..].trim().to_string());
    out.retain(|s| !s.is_empty());
    out
}

fn parse_ids(group: &str) -> BTreeSet<u32> {
    group
        .split(',')
        .filter_map(|p| p.trim().parse::<u32>().ok())
        .collect()
}

/// Parses rendered answer text against the allowed citation ids.
pub fn parse_answer_text(text: &str, allowed: &BTreeSet<u32>) -> StructuredAnswer {
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut sentences: Vec<AnswerSentence> = Vec::new();
    let mut cursor = 0;

    let absorb_leading = |segment: &str, sentences: &mut Vec<AnswerSentence>| -> String {
        let trimmed = segment.trim_start();
        let punct_len: usize = trimmed
            .chars()
            .take_while(|c| is_trailing_punct(*c))
            .map(char::len_utf8)
            .sum();
        if punct_len > 0 {
            if let Some(last) = sentences.last_mut() {
                last.text.push_str(&trimmed[..punct_len]);
                return trimmed[punct_len..].to_string();
            }
        }
        segment.to_string()
    };

    for caps in citation_group().captures_iter(&text) {
        let whole = caps.get(0).expect("group 0");
        let segment = absorb_leading(&text[cursor..whole.start()], &mut sentences);
        let ids = parse_ids(&caps[1]);
        let mut parts = split_sentences(&segment);
        match parts.pop() {
            Some(last) => {
                sentences.extend(parts.into_iter().map(|t| AnswerSentence {
                    text: t,
                    citations: BTreeSet::new(),
                }));
                sentences.push(AnswerSentence {
                    text: last,
                    citations: ids,
                });
            }
            // A group directly following another group joins the previous sentence.
            None => match sentences.last_mut() {
                Some(prev) => prev.citations.extend(ids),
                None => sentences.push(AnswerSentence {
                    text: String::new(),
                    citations: ids,
                }),
            },
        }
        cursor = whole.end();
    }
    let rest = absorb_leading(&text[cursor..], &mut sentences);
    sentences.extend(split_sentences(&rest).into_iter().map(|t| AnswerSentence {
        text: t,
        citations: BTreeSet::new(),
    }));
    // A citation group with no preceding text is not a sentence.
    sentences.retain(|s| !s.text.is_empty());
    StructuredAnswer::from_sentences(String::new(), sentences, allowed)
}

pub fn parse_answer(completion: &str, evidence: &EvidenceSet) -> StructuredAnswer {
    let mut answer = parse_answer_text(completion, &evidence.ids());
    answer.case_id = evidence.case_id.clone();
    answer
}

const LIVE_QUESTION_HEADER: &str = "### Question";

/// Question and numbered evidence; also the input half of stage-2 demonstrations.
pub fn render_question_block(question: &str, evidence: &EvidenceSet) -> String {
    let mut out = format!("Question: {question}\nEvidence sentences:\n");
    for item in &evidence.items {
        out.push_str(&format!("{}: {}\n", item.id, item.text));
    }
    out
}

pub fn render_stage2_prompt(
    config: &PromptConfig,
    question: &str,
    evidence: &EvidenceSet,
    params: &SamplingParams,
) -> PromptRequest {
    let mut user = config.render_demonstrations("Answer");
    user.push_str(LIVE_QUESTION_HEADER);
    user.push('\n');
    user.push_str(&render_question_block(question, evidence));
    user.push_str(&format!(
        "\nWrite at most {MAX_ANSWER_WORDS} words. End every sentence with a parenthetical citation \
of the supporting evidence ids, for example (1) or (2, 5). Cite only the ids listed above."
    ));
    PromptRequest {
        system_text: config.instruction.clone(),
        user_text: user,
        params: params.clone(),
        purpose: Purpose::Stage2,
    }
}

/// Splits a rendered stage-2 user text and returns the live question block.
pub fn live_question_block(user_text: &str) -> Option<&str> {
    user_text
        .rfind(LIVE_QUESTION_HEADER)
        .map(|at| user_text[at + LIVE_QUESTION_HEADER.len()..].trim_start_matches('\n'))
}

/// Generates an answer for `(question, evidence)`, with one corrective reprompt
/// when the first attempt breaks the length or citation constraints.
pub fn generate(
    case: &Case,
    evidence: &EvidenceSet,
    config: &PromptConfig,
    params: &SamplingParams,
    gateway: &Gateway,
    votes: Option<&VoteRecord>,
) -> Result<StructuredAnswer> {
    let evidence = resolve_evidence(case, evidence, votes);
    let allowed = evidence.ids();
    let request = render_stage2_prompt(config, &case.question_text(), &evidence, params);
    let first = parse_answer(&gateway.complete(&request)?.text, &evidence);

    let chosen = if first.format_valid && first.length_valid {
        first
    } else {
        let mut retry = request;
        retry.user_text.push_str(&format!(
            "\n\nYour previous answer was:\n{}\nIt broke the rules because {}. Rewrite it so that it follows every rule.",
            first.render(),
            first.violations(&allowed).join("; ")
        ));
        let second = parse_answer(&gateway.complete(&retry)?.text, &evidence);
        if second.validity_rank() > first.validity_rank() {
            second
        } else {
            first
        }
    };
    Ok(strip_foreign_ids(chosen, case, &allowed))
}

fn strip_foreign_ids(answer: StructuredAnswer, case: &Case, allowed: &BTreeSet<u32>) -> StructuredAnswer {
    let n = case.sentences.len() as u32;
    if answer.cited_ids().iter().all(|&id| id >= 1 && id <= n) {
        return answer;
    }
    tracing::warn!(case_id = %case.case_id, "dropping citations of sentence ids absent from the case");
    let sentences = answer
        .sentences
        .into_iter()
        .map(|s| AnswerSentence {
            text: s.text,
            citations: s.citations.into_iter().filter(|&id| id >= 1 && id <= n).collect(),
        })
        .collect();
    StructuredAnswer::from_sentences(answer.case_id, sentences, allowed)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::NoteSentence;
    use crate::llm::{MockBackend, MockRule};

    fn case(n: usize) -> Case {
        Case {
            case_id: "c".into(),
            patient_question: String::new(),
            clinician_question: "Why was fluid drained?".into(),
            sentences: (1..=n)
                .map(|i| NoteSentence {
                    id: i as u32,
                    text: format!("note sentence {i}."),
                    gold_label: None,
                })
                .collect(),
            reference_answer: None,
        }
    }

    fn ids(v: &[u32]) -> BTreeSet<u32> {
        v.iter().copied().collect()
    }

    fn words(n: usize) -> String {
        vec!["word"; n].join(" ")
    }

    #[test]
    fn evidence_set_examples() {
        let c = case(3);
        let e = build_evidence_set(&c, &LabelVector::new("c", vec![true, false, true])).unwrap();
        assert_eq!(e.ids(), ids(&[1, 3]));
        assert!(build_evidence_set(&c, &LabelVector::new("c", vec![false; 3]))
            .unwrap()
            .is_empty());
        let all = build_evidence_set(&c, &LabelVector::new("c", vec![true; 3])).unwrap();
        assert_eq!(all.items.iter().map(|i| i.id).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(matches!(
            build_evidence_set(&c, &LabelVector::new("c", vec![true])),
            Err(AnswerError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn parse_examples() {
        let a = parse_answer_text("Fluid built up around the heart. (1, 3)", &ids(&[1, 3]));
        assert_eq!(a.sentences.len(), 1);
        assert_eq!(a.sentences[0].citations, ids(&[1, 3]));
        assert_eq!(a.word_count, 6);
        assert!(a.format_valid && a.length_valid);

        let b = parse_answer_text("He improved. (4)", &ids(&[1, 3]));
        assert!(!b.format_valid);

        let long = parse_answer_text(&format!("{}. (1)", words(80)), &ids(&[1]));
        assert!(long.format_valid);
        assert!(!long.length_valid);
        assert_eq!(long.word_count, 80);
    }

    #[test]
    fn parse_handles_trailing_punctuation_and_uncited_sentences() {
        let a = parse_answer_text("Fluid built up (1, 3). It was drained (2).", &ids(&[1, 2, 3]));
        assert_eq!(a.sentences.len(), 2);
        assert_eq!(a.sentences[0].text, "Fluid built up.");
        assert_eq!(a.sentences[1].text, "It was drained.");
        assert_eq!(a.word_count, 6);
        assert!(a.format_valid);

        let b = parse_answer_text("First thing. Second thing. (1)", &ids(&[1]));
        assert_eq!(b.sentences.len(), 2);
        assert!(b.sentences[0].citations.is_empty());
        assert!(!b.format_valid);

        let c = parse_answer_text("Cited. (1) trailing words", &ids(&[1]));
        assert_eq!(c.sentences.len(), 2);
        assert!(!c.format_valid);

        let empty = parse_answer_text("", &ids(&[1]));
        assert!(empty.sentences.is_empty());
        assert!(!empty.format_valid);
        assert!(empty.length_valid);

        let dose = parse_answer_text("Given 5 mg (5 mg daily). (1)", &ids(&[1]));
        assert_eq!(dose.sentences.len(), 1);
        assert!(dose.format_valid);
    }

    #[test]
    fn render_parse_round_trip() {
        let a = parse_answer_text("Fluid built up. (1, 3) It was drained. (2)", &ids(&[1, 2, 3]));
        assert_eq!(a.render(), "Fluid built up. (1, 3) It was drained. (2)");
        assert_eq!(parse_answer_text(&a.render(), &ids(&[1, 2, 3])), a);
    }

    #[test]
    fn stage2_rendering_contract() {
        let c = case(6);
        let e = EvidenceSet::from_ids(&c, &ids(&[2, 5]));
        let cfg = PromptConfig::new("p", "Answer");
        let params = SamplingParams::default();
        let req = render_stage2_prompt(&cfg, "Why?", &e, &params);
        assert!(req.user_text.contains("2: note sentence 2."));
        assert!(req.user_text.contains("5: note sentence 5."));
        assert!(!req.user_text.contains("1: note sentence 2."));
        assert!(req.user_text.contains("at most 75 words"));
        assert!(!req.user_text.contains("### Example"));
        assert_eq!(req, render_stage2_prompt(&cfg, "Why?", &e, &params));
        assert_eq!(req.purpose, Purpose::Stage2);
        assert!(live_question_block(&req.user_text).unwrap().starts_with("Question: Why?"));
    }

    #[test]
    fn generate_valid_first_attempt() {
        let c = case(3);
        let e = EvidenceSet::from_ids(&c, &ids(&[1, 3]));
        let text = format!("{}. (1, 3)", words(40));
        let mock = MockBackend::new().with_rule(MockRule::always(text.clone()));
        let gw = Gateway::new(Arc::new(mock.clone()));
        let a = generate(&c, &e, &PromptConfig::new("p", "I"), &SamplingParams::default(), &gw, None).unwrap();
        assert!(a.format_valid && a.length_valid);
        assert_eq!(a.render(), text);
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn generate_prefers_corrected_answer() {
        let c = case(3);
        let e = EvidenceSet::from_ids(&c, &ids(&[1]));
        let mock = MockBackend::new().with_rule(MockRule::when(|r| {
            Some(if r.user_text.contains("Your previous answer") {
                format!("{}. (1)", vec!["short"; 60].join(" "))
            } else {
                format!("{}. (1)", vec!["long"; 90].join(" "))
            })
        }));
        let gw = Gateway::new(Arc::new(mock));
        let a = generate(&c, &e, &PromptConfig::new("p", "I"), &SamplingParams::default(), &gw, None).unwrap();
        assert_eq!(a.word_count, 60);
        assert!(a.length_valid);

        // Equally invalid retries keep the first attempt.
        let stubborn = MockBackend::new().with_rule(MockRule::when(|r| {
            Some(if r.user_text.contains("Your previous answer") { "Second. (9)" } else { "First. (9)" }.into())
        }));
        let gw = Gateway::new(Arc::new(stubborn));
        let a = generate(&c, &e, &PromptConfig::new("p", "I"), &SamplingParams::default(), &gw, None).unwrap();
        assert_eq!(a.sentences[0].text, "First.");
        // Id 9 does not exist in a 3-sentence case and is stripped.
        assert!(a.cited_ids().is_empty());
        assert!(!a.format_valid);
    }

    #[test]
    fn empty_evidence_falls_back_to_top_voted_sentence() {
        let c = case(3);
        let empty = EvidenceSet { case_id: "c".into(), items: vec![] };
        let votes = crate::evidence::aggregate_votes(
            "c",
            vec![
                LabelVector::new("c", vec![false, true, false]),
                LabelVector::new("c", vec![false, true, true]),
                LabelVector::new("c", vec![false, false, true]),
                LabelVector::new("c", vec![false, true, false]),
                LabelVector::new("c", vec![false, false, false]),
            ],
            3,
        );
        let resolved = resolve_evidence(&c, &empty, Some(&votes));
        assert_eq!(resolved.ids(), ids(&[2]));
        let mock = MockBackend::new().with_rule(MockRule::when(|r| {
            r.user_text.contains("2: note sentence 2.").then(|| "Because. (2)".to_string())
        }));
        let gw = Gateway::new(Arc::new(mock));
        let a = generate(&c, &empty, &PromptConfig::new("p", "I"), &SamplingParams::default(), &gw, Some(&votes)).unwrap();
        assert!(a.format_valid);
        assert_eq!(resolve_evidence(&c, &empty, None).ids(), ids(&[1]));
    }

    #[test]
    fn repair_produces_grammar_valid_answer() {
        let c = case(3);
        let e = EvidenceSet::from_ids(&c, &ids(&[1, 3]));
        let raw = parse_answer("One. Two. (3, 7) Three.", &e);
        let fixed = raw.repaired(&e);
        assert!(fixed.format_valid);
        assert_eq!(fixed.sentences.len(), 3);
        assert!(fixed.sentences.iter().all(|s| s.citations == ids(&[3])));

        let nothing = parse_answer("", &e).repaired(&e);
        assert!(nothing.format_valid);
        assert_eq!(nothing.render(), "note sentence 1. (1)");
    }
}
