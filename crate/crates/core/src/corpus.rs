//! Question–note cases, gold evidence annotations and the submission file format.
//!
//! Cases are loaded from the canonical JSON layout or from the shared-task XML
//! layout. All text is normalized at load time (NFC, whitespace runs collapsed,
//! trimmed) so that word counting and n-gram metrics share one substrate.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::answer::parse_answer_text;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed document at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate case id `{0}`")]
    DuplicateCaseId(String),
    #[error("case `{case_id}`: sentence ids are not the contiguous range 1..n (found {found:?})")]
    NonContiguousSentenceIds { case_id: String, found: Vec<u32> },
    #[error("unknown relevance label `{0}`")]
    UnknownLabel(String),
    #[error("case `{case_id}`: {reason}")]
    InvalidCase { case_id: String, reason: String },
    #[error("case `{0}` has sentences without gold labels")]
    MissingGoldLabels(String),
    #[error("submission entry for case `{case_id}` is invalid: {reason}")]
    InvalidEntry { case_id: String, reason: String },
    #[error("malformed submission record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Gold relevance of a note sentence with respect to the question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelevanceLabel {
    #[serde(rename = "essential")]
    Essential,
    #[serde(rename = "supplementary")]
    Supplementary,
    #[serde(rename = "not-relevant")]
    NotRelevant,
}

impl RelevanceLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RelevanceLabel::Essential => "essential",
            RelevanceLabel::Supplementary => "supplementary",
            RelevanceLabel::NotRelevant => "not-relevant",
        }
    }
}

impl FromStr for RelevanceLabel {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "essential" => Ok(RelevanceLabel::Essential),
            "supplementary" => Ok(RelevanceLabel::Supplementary),
            "not-relevant" => Ok(RelevanceLabel::NotRelevant),
            other => Err(CorpusError::UnknownLabel(other.to_string())),
        }
    }
}

impl fmt::Display for RelevanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteSentence {
    pub id: u32,
    pub text: String,
    pub gold_label: Option<RelevanceLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub patient_question: String,
    pub clinician_question: String,
    pub sentences: Vec<NoteSentence>,
    /// Reference answer used by relevance scoring and stage-2 optimization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
}

impl Case {
    /// The question shown to the model: the clinician question, with the
    /// patient's own wording appended when both are present.
    pub fn question_text(&self) -> String {
        match (
            self.clinician_question.is_empty(),
            self.patient_question.is_empty(),
        ) {
            (false, false) => format!(
                "{}\nPatient question: {}",
                self.clinician_question, self.patient_question
            ),
            (false, true) => self.clinician_question.clone(),
            _ => self.patient_question.clone(),
        }
    }

    pub fn sentence(&self, id: u32) -> Option<&NoteSentence> {
        id.checked_sub(1)
            .and_then(|idx| self.sentences.get(idx as usize))
    }

    pub fn has_gold_labels(&self) -> bool {
        self.sentences.iter().all(|s| s.gold_label.is_some())
    }

    /// The whole note excerpt as one string, sentences joined by spaces.
    pub fn note_text(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| CorpusError::InvalidCase {
            case_id: self.case_id.clone(),
            reason: reason.to_string(),
        };
        if self.case_id.is_empty() {
            return Err(invalid("empty case id"));
        }
        if self.sentences.is_empty() {
            return Err(invalid("no note sentences"));
        }
        if self.patient_question.is_empty() && self.clinician_question.is_empty() {
            return Err(invalid("both questions are empty"));
        }
        let contiguous = self
            .sentences
            .iter()
            .enumerate()
            .all(|(idx, s)| s.id as usize == idx + 1);
        if !contiguous {
            return Err(CorpusError::NonContiguousSentenceIds {
                case_id: self.case_id.clone(),
                found: self.sentences.iter().map(|s| s.id).collect(),
            });
        }
        if self.sentences.iter().any(|s| s.text.is_empty()) {
            return Err(invalid("empty sentence text"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Dev,
    Test,
    #[default]
    Custom,
}

impl SplitTag {
    fn as_str(self) -> &'static str {
        match self {
            SplitTag::Dev => "dev",
            SplitTag::Test => "test",
            SplitTag::Custom => "custom",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "dev" => Some(SplitTag::Dev),
            "test" => Some(SplitTag::Test),
            "custom" => Some(SplitTag::Custom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseSet {
    pub cases: Vec<Case>,
    pub split_tag: SplitTag,
}

impl CaseSet {
    /// Builds a set, validating every case invariant and id uniqueness.
    pub fn new(cases: Vec<Case>, split_tag: SplitTag) -> Result<Self> {
        let mut seen = HashSet::new();
        for case in &cases {
            case.validate()?;
            if !seen.insert(case.case_id.as_str()) {
                return Err(CorpusError::DuplicateCaseId(case.case_id.clone()));
            }
        }
        Ok(Self { cases, split_tag })
    }

    pub fn get(&self, case_id: &str) -> Option<&Case> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Case> {
        self.cases.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseFormat {
    Json,
    Xml,
}

impl CaseFormat {
    /// `.xml` files are XML; everything else is read as JSON.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("xml") => CaseFormat::Xml,
            _ => CaseFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvidenceMode {
    Strict,
    Lenient,
}

/// Collapses whitespace runs, trims, and applies NFC.
pub fn normalize_text(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

// JSON wire layout. Labels are read as raw strings so that unknown values
// surface as `UnknownLabel` rather than a generic decode error.
#[derive(Serialize, Deserialize)]
struct JsonDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    cases: Vec<JsonCase>,
}

#[derive(Serialize, Deserialize)]
struct JsonCase {
    case_id: String,
    patient_question: String,
    clinician_question: String,
    sentences: Vec<JsonSentence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_answer: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct JsonSentence {
    id: u32,
    text: String,
    label: Option<String>,
}

fn parse_label(raw: Option<&str>) -> Result<Option<RelevanceLabel>> {
    raw.map(str::parse).transpose()
}

/// Reads a case set from `source` in the given format.
pub fn load_cases<R: Read>(mut source: R, format: CaseFormat) -> Result<CaseSet> {
    let mut text = String::new();
    source.read_to_string(&mut text).map_err(|e| {
        if e.kind() == std::io::ErrorKind::InvalidData {
            CorpusError::Malformed {
                line: 0,
                column: 0,
                message: "source is not valid UTF-8".into(),
            }
        } else {
            CorpusError::Io(e)
        }
    })?;
    match format {
        CaseFormat::Json => load_json(&text),
        CaseFormat::Xml => load_xml(&text),
    }
}

fn load_json(text: &str) -> Result<CaseSet> {
    let doc: JsonDocument = serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let split_tag = match doc.split.as_deref() {
        None => SplitTag::Custom,
        Some(s) => SplitTag::parse(s).ok_or_else(|| CorpusError::Malformed {
            line: 0,
            column: 0,
            message: format!("unknown split tag `{s}`"),
        })?,
    };
    let cases = doc
        .cases
        .into_iter()
        .map(|c| {
            let sentences = c
                .sentences
                .into_iter()
                .map(|s| {
                    Ok(NoteSentence {
                        id: s.id,
                        text: normalize_text(&s.text),
                        gold_label: parse_label(s.label.as_deref())?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Case {
                case_id: c.case_id.trim().to_string(),
                patient_question: normalize_text(&c.patient_question),
                clinician_question: normalize_text(&c.clinician_question),
                sentences,
                reference_answer: c.reference_answer.as_deref().map(normalize_text),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CaseSet::new(cases, split_tag)
}

fn xml_error(doc_text: &str, pos: usize, message: String) -> CorpusError {
    let before = &doc_text[..pos.min(doc_text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    CorpusError::Malformed {
        line,
        column,
        message,
    }
}

fn load_xml(text: &str) -> Result<CaseSet> {
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        CorpusError::Malformed {
            line: pos.row as usize,
            column: pos.col as usize,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    let split_tag = match root.attribute("split") {
        None => SplitTag::Custom,
        Some(s) => SplitTag::parse(s)
            .ok_or_else(|| xml_error(text, root.range().start, format!("unknown split `{s}`")))?,
    };
    let case_nodes: Vec<_> = if root.has_tag_name("case") {
        vec![root]
    } else {
        root.children().filter(|n| n.has_tag_name("case")).collect()
    };

    let mut cases = Vec::with_capacity(case_nodes.len());
    for node in case_nodes {
        let case_id = node
            .attribute("id")
            .ok_or_else(|| xml_error(text, node.range().start, "case without id".into()))?
            .trim()
            .to_string();
        let child_text = |name: &str| {
            node.children()
                .find(|n| n.has_tag_name(name))
                .map(|n| normalize_text(&element_text(n)))
        };
        let patient_question = child_text("patient_narrative")
            .or_else(|| child_text("patient_question"))
            .unwrap_or_default();
        let clinician_question = child_text("clinician_question").unwrap_or_default();
        let reference_answer = child_text("reference_answer");

        let mut sentences = Vec::new();
        for container in node
            .children()
            .filter(|n| n.has_tag_name("note_excerpt") || n.has_tag_name("note_excerpt_sentences"))
        {
            for s in container.children().filter(|n| n.has_tag_name("sentence")) {
                let raw_id = s.attribute("id").ok_or_else(|| {
                    xml_error(text, s.range().start, "sentence without id".into())
                })?;
                let id = raw_id.trim().parse::<u32>().map_err(|_| {
                    xml_error(text, s.range().start, format!("bad sentence id `{raw_id}`"))
                })?;
                sentences.push(NoteSentence {
                    id,
                    text: normalize_text(&element_text(s)),
                    gold_label: parse_label(s.attribute("label"))?,
                });
            }
        }
        cases.push(Case {
            case_id,
            patient_question,
            clinician_question,
            sentences,
            reference_answer,
        });
    }
    CaseSet::new(cases, split_tag)
}

fn element_text(node: roxmltree::Node<'_, '_>) -> String {
    node.descendants()
        .filter(|n| n.is_text())
        .filter_map(|n| n.text())
        .collect::<Vec<_>>()
        .join(" ")
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Writes a case set in either supported format. `load_cases` reads it back unchanged.
pub fn write_cases<W: Write>(set: &CaseSet, format: CaseFormat, mut sink: W) -> Result<()> {
    match format {
        CaseFormat::Json => {
            let doc = JsonDocument {
                split: Some(set.split_tag.as_str().to_string()),
                cases: set
                    .cases
                    .iter()
                    .map(|c| JsonCase {
                        case_id: c.case_id.clone(),
                        patient_question: c.patient_question.clone(),
                        clinician_question: c.clinician_question.clone(),
                        sentences: c
                            .sentences
                            .iter()
                            .map(|s| JsonSentence {
                                id: s.id,
                                text: s.text.clone(),
                                label: s.gold_label.map(|l| l.as_str().to_string()),
                            })
                            .collect(),
                        reference_answer: c.reference_answer.clone(),
                    })
                    .collect(),
            };
            serde_json::to_writer_pretty(&mut sink, &doc).map_err(std::io::Error::from)?;
            writeln!(sink)?;
        }
        CaseFormat::Xml => {
            writeln!(sink, "<annotations split=\"{}\">", set.split_tag.as_str())?;
            for c in &set.cases {
                writeln!(sink, "  <case id=\"{}\">", xml_escape(&c.case_id))?;
                writeln!(
                    sink,
                    "    <patient_narrative>{}</patient_narrative>",
                    xml_escape(&c.patient_question)
                )?;
                writeln!(
                    sink,
                    "    <clinician_question>{}</clinician_question>",
                    xml_escape(&c.clinician_question)
                )?;
                writeln!(sink, "    <note_excerpt>")?;
                for s in &c.sentences {
                    match s.gold_label {
                        Some(label) => writeln!(
                            sink,
                            "      <sentence id=\"{}\" label=\"{}\">{}</sentence>",
                            s.id,
                            label,
                            xml_escape(&s.text)
                        )?,
                        None => writeln!(
                            sink,
                            "      <sentence id=\"{}\">{}</sentence>",
                            s.id,
                            xml_escape(&s.text)
                        )?,
                    }
                }
                writeln!(sink, "    </note_excerpt>")?;
                if let Some(reference) = &c.reference_answer {
                    writeln!(
                        sink,
                        "    <reference_answer>{}</reference_answer>",
                        xml_escape(reference)
                    )?;
                }
                writeln!(sink, "  </case>")?;
            }
            writeln!(sink, "</annotations>")?;
        }
    }
    Ok(())
}

/// Gold evidence ids: essential only (strict) or essential plus supplementary (lenient).
pub fn gold_evidence(case: &Case, mode: EvidenceMode) -> Result<BTreeSet<u32>> {
    if !case.has_gold_labels() {
        return Err(CorpusError::MissingGoldLabels(case.case_id.clone()));
    }
    Ok(case
        .sentences
        .iter()
        .filter(|s| {
            matches!(
                (mode, s.gold_label),
                (_, Some(RelevanceLabel::Essential)) | (EvidenceMode::Lenient, Some(RelevanceLabel::Supplementary))
            )
        })
        .map(|s| s.id)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionEntry {
    pub case_id: String,
    pub answer: String,
}

/// Rendered answers keyed by case, in emission order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Submission {
    pub entries: Vec<SubmissionEntry>,
}

impl Submission {
    pub fn get(&self, case_id: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.case_id == case_id)
            .map(|e| e.answer.as_str())
    }

    pub fn push(&mut self, case_id: impl Into<String>, answer: impl Into<String>) {
        self.entries.push(SubmissionEntry {
            case_id: case_id.into(),
            answer: answer.into(),
        });
    }

    /// Checks that every case appears exactly once and every answer follows the
    /// citation grammar with ids drawn from its case.
    pub fn validate_against(&self, cases: &CaseSet) -> Result<()> {
        let mut seen = HashSet::new();
        for entry in &self.entries {
            let invalid = |reason: String| CorpusError::InvalidEntry {
                case_id: entry.case_id.clone(),
                reason,
            };
            let case = cases
                .get(&entry.case_id)
                .ok_or_else(|| invalid("case not in the target case set".into()))?;
            if !seen.insert(entry.case_id.as_str()) {
                return Err(invalid("duplicate entry".into()));
            }
            let case_ids: BTreeSet<u32> = case.sentences.iter().map(|s| s.id).collect();
            let parsed = parse_answer_text(&entry.answer, &case_ids);
            if !parsed.format_valid {
                return Err(invalid(format!(
                    "answer does not follow the citation grammar: {:?}",
                    entry.answer
                )));
            }
        }
        if let Some(missing) = cases.iter().find(|c| !seen.contains(c.case_id.as_str())) {
            return Err(CorpusError::InvalidEntry {
                case_id: missing.case_id.clone(),
                reason: "no answer for case".into(),
            });
        }
        Ok(())
    }
}

/// Emits the JSON-lines submission after validating it against `cases`.
pub fn write_submission<W: Write>(
    submission: &Submission,
    cases: &CaseSet,
    mut sink: W,
) -> Result<()> {
    submission.validate_against(cases)?;
    write_submission_unchecked(submission, &mut sink)
}

/// Emits records without validation; used for partial outputs after failures.
pub fn write_submission_unchecked<W: Write>(submission: &Submission, mut sink: W) -> Result<()> {
    for entry in &submission.entries {
        serde_json::to_writer(&mut sink, entry).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn parse_submission<R: Read>(source: R) -> Result<Submission> {
    let mut submission = Submission::default();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: SubmissionEntry =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: idx + 1,
                message: e.to_string(),
            })?;
        if !seen.insert(entry.case_id.clone()) {
            return Err(CorpusError::DuplicateCaseId(entry.case_id));
        }
        submission.entries.push(entry);
    }
    Ok(submission)
}
