//! Stage 1: sentence-level essentiality classification with self-consistency voting.
//!
//! A single pass renders the case, asks the model for one `<id>: essential` or
//! `<id>: not essential` line per sentence and parses the reply. The voted
//! classifier repeats the pass `R` times with seeds `seed_base + r` and keeps
//! sentence `i` when its vote count `v_i` reaches the threshold `τ`.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Case;
use crate::llm::{Gateway, GatewayError, PromptRequest, Purpose, SamplingParams, SAMPLING_TEMPERATURE};
use crate::prompt::PromptConfig;
use crate::scoring::{Counts, Prf};

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("no line of the completion matches `<id>: essential|not essential`")]
    Unparseable,
    #[error("case `{case_id}`: completion still unparseable after a format reminder")]
    UnparseableAfterRetry { case_id: String },
    #[error("sentence id {id} is outside 1..={n}")]
    IdOutOfRange { id: u32, n: usize },
    #[error("invalid vote settings: {0}")]
    InvalidVote(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub type Result<T> = std::result::Result<T, EvidenceError>;

/// Binary essentiality predictions for one case, one entry per sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub case_id: String,
    #[serde(with = "bits")]
    pub labels: Vec<bool>,
}

mod bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|b| u8::from(*b)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        raw.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!("label {other} is not 0 or 1"))),
            })
            .collect()
    }
}

impl LabelVector {
    pub fn new(case_id: impl Into<String>, labels: Vec<bool>) -> Self {
        Self {
            case_id: case_id.into(),
            labels,
        }
    }

    /// 1-based ids of the sentences labeled essential.
    pub fn positive_ids(&self) -> BTreeSet<u32> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l)
            .map(|(i, _)| i as u32 + 1)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub case_id: String,
    pub runs: Vec<LabelVector>,
    pub votes: Vec<u32>,
    pub threshold: u32,
    #[serde(rename = "final")]
    pub final_labels: LabelVector,
}

impl VoteRecord {
    /// Sentence id with the most votes; ties go to the earliest sentence.
    pub fn top_voted(&self) -> Option<u32> {
        self.votes
            .iter()
            .enumerate()
            .max_by(|(ia, va), (ib, vb)| va.cmp(vb).then(ib.cmp(ia)))
            .map(|(i, _)| i as u32 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteSettings {
    pub runs: u32,
    pub threshold: u32,
    pub temperature: f64,
    pub seed_base: u64,
    pub max_context_tokens: usize,
}

impl VoteSettings {
    /// `R` runs with the majority threshold `⌈R/2⌉`.
    pub fn with_runs(runs: u32) -> Self {
        Self {
            runs,
            threshold: runs.div_ceil(2),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(EvidenceError::InvalidVote("R must be at least 1".into()));
        }
        if self.threshold == 0 || self.threshold > self.runs {
            return Err(EvidenceError::InvalidVote(format!(
                "threshold {} must lie in 1..={}",
                self.threshold, self.runs
            )));
        }
        Ok(())
    }

    pub fn params_for_run(&self, run: u32) -> SamplingParams {
        let mut params = SamplingParams::with_temperature(self.temperature).seeded(self.seed_base + run as u64);
        params.max_context_tokens = self.max_context_tokens;
        params
    }
}

impl Default for VoteSettings {
    fn default() -> Self {
        Self {
            runs: 5,
            threshold: 3,
            temperature: SAMPLING_TEMPERATURE,
            seed_base: 0,
            max_context_tokens: crate::llm::DEFAULT_MAX_CONTEXT_TOKENS,
        }
    }
}

const LIVE_CASE_HEADER: &str = "### Case";
const FORMAT_LINE: &str =
    "Label every sentence on its own line as `<id>: essential` or `<id>: not essential`.";
const FORMAT_REMINDER: &str = "Your previous reply could not be read. Reply with exactly one line per sentence, \
formatted as `<id>: essential` or `<id>: not essential`, and nothing else.";

/// Question plus numbered sentences; also the input half of stage-1 demonstrations.
pub fn render_case_block(case: &Case) -> String {
    let mut out = format!("Question: {}\nNote sentences:\n", case.question_text());
    for s in &case.sentences {
        out.push_str(&format!("{}: {}\n", s.id, s.text));
    }
    out
}

/// Splits a rendered stage-1 user text and returns the live case block.
pub fn live_case_block(user_text: &str) -> Option<&str> {
    user_text
        .rfind(LIVE_CASE_HEADER)
        .map(|at| user_text[at + LIVE_CASE_HEADER.len()..].trim_start_matches('\n'))
}

pub fn render_stage1_prompt(config: &PromptConfig, case: &Case, params: &SamplingParams) -> PromptRequest {
    let mut user = config.render_demonstrations("Labels");
    user.push_str(LIVE_CASE_HEADER);
    user.push('\n');
    user.push_str(&render_case_block(case));
    user.push('\n');
    user.push_str(FORMAT_LINE);
    PromptRequest {
        system_text: config.instruction.clone(),
        user_text: user,
        params: params.clone(),
        purpose: Purpose::Stage1,
    }
}

/// Inverse of [`parse_labels`] on its grammar.
pub fn render_labels(labels: &[bool]) -> String {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| format!("{}: {}", i + 1, if l { "essential" } else { "not essential" }))
        .collect::<Vec<_>>()
        .join("\n")
}

fn label_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:[-*+•]\s*)?(?:\*\*|__)?\s*(?:sentence\s+)?\[?(\d+)\]?\s*(?:\*\*|__)?\s*:\s*(?:\*\*|__)?\s*(not[\s_-]+essential|non[\s_-]?essential|essential)\b",
        )
        .expect("label grammar compiles")
    })
}

/// Parses `<id>: essential|not essential` lines into `n` binary labels.
///
/// Ids outside `1..=n` are ignored with a warning, unmentioned ids default to
/// not essential, and a repeated id takes its last verdict.
pub fn parse_labels(completion: &str, n: usize) -> Result<Vec<bool>> {
    let mut labels = vec![false; n];
    let mut matched = false;
    for line in completion.lines() {
        let Some(caps) = label_line().captures(line) else {
            continue;
        };
        matched = true;
        let id: usize = match caps[1].parse() {
            Ok(id) => id,
            Err(_) => continue,
        };
        if id == 0 || id > n {
            tracing::warn!(id, n, "ignoring label for out-of-range sentence id");
            continue;
        }
        let verdict = caps[2].to_ascii_lowercase();
        labels[id - 1] = verdict == "essential";
    }
    if matched {
        Ok(labels)
    } else {
        Err(EvidenceError::Unparseable)
    }
}

/// One classifier pass: render, complete, parse; one reprompt on unparseable output.
pub fn classify_once(
    case: &Case,
    config: &PromptConfig,
    params: &SamplingParams,
    gateway: &Gateway,
) -> Result<LabelVector> {
    let n = case.sentences.len();
    let request = render_stage1_prompt(config, case, params);
    let first = gateway.complete(&request)?;
    match parse_labels(&first.text, n) {
        Ok(labels) => return Ok(LabelVector::new(case.case_id.clone(), labels)),
        Err(EvidenceError::Unparseable) => {}
        Err(other) => return Err(other),
    }
    let mut retry = request;
    retry.user_text.push_str("\n\n");
    retry.user_text.push_str(FORMAT_REMINDER);
    let second = gateway.complete(&retry)?;
    parse_labels(&second.text, n)
        .map(|labels| LabelVector::new(case.case_id.clone(), labels))
        .map_err(|e| match e {
            EvidenceError::Unparseable => EvidenceError::UnparseableAfterRetry {
                case_id: case.case_id.clone(),
            },
            other => other,
        })
}

/// Folds completed runs into per-sentence votes and final labels.
pub fn aggregate_votes(case_id: &str, runs: Vec<LabelVector>, threshold: u32) -> VoteRecord {
    let n = runs.first().map_or(0, |r| r.labels.len());
    let mut votes = vec![0u32; n];
    for run in &runs {
        debug_assert_eq!(run.labels.len(), n);
        for (v, &l) in votes.iter_mut().zip(&run.labels) {
            *v += u32::from(l);
        }
    }
    let final_labels = LabelVector::new(case_id, votes.iter().map(|&v| v >= threshold).collect());
    VoteRecord {
        case_id: case_id.to_string(),
        runs,
        votes,
        threshold,
        final_labels,
    }
}

/// Runs the classifier `R` times with distinct seeds and majority-votes the labels.
///
/// Any failed run fails the whole record.
pub fn self_consistency(
    case: &Case,
    config: &PromptConfig,
    settings: &VoteSettings,
    gateway: &Gateway,
) -> Result<VoteRecord> {
    settings.validate()?;
    let runs = (0..settings.runs)
        .into_par_iter()
        .map(|r| classify_once(case, config, &settings.params_for_run(r), gateway))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate_votes(&case.case_id, runs, settings.threshold))
}

/// Set precision/recall/F1 of the predicted essential ids against gold.
pub fn evidence_f1(predicted: &LabelVector, gold: &BTreeSet<u32>) -> Result<Prf> {
    let n = predicted.labels.len();
    if let Some(&id) = gold.iter().find(|&&id| id == 0 || id as usize > n) {
        return Err(EvidenceError::IdOutOfRange { id, n });
    }
    let pred = predicted.positive_ids();
    Ok(Counts::from_sets(&pred, gold, gold).prf())
}
