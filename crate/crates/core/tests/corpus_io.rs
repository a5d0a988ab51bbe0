mod common;

use std::collections::BTreeSet;

use common::{answer, case_set, submission_for};
use evigen::answer::{parse_answer_text, StructuredAnswer};
use evigen::corpus::{
    gold_evidence, load_cases, parse_submission, write_cases, write_submission, CaseFormat, CorpusError,
    EvidenceMode, Submission,
};
use evigen::evidence::{parse_labels, render_labels};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn case_sets_round_trip(set in case_set(), xml in any::<bool>()) {
        let format = if xml { CaseFormat::Xml } else { CaseFormat::Json };
        let mut buf = Vec::new();
        write_cases(&set, format, &mut buf).unwrap();
        let back = load_cases(buf.as_slice(), format).unwrap();
        prop_assert_eq!(back, set);
    }

    #[test]
    fn submissions_round_trip(set in case_set(), answers in prop::collection::vec(answer(), 5)) {
        let sub = submission_for(&set, answers);
        let mut buf = Vec::new();
        write_submission(&sub, &set, &mut buf).unwrap();
        prop_assert_eq!(parse_submission(buf.as_slice()).unwrap(), sub);
    }

    #[test]
    fn answers_round_trip(sentences in answer()) {
        let allowed: BTreeSet<u32> = (1..30).collect();
        let built = StructuredAnswer::from_sentences("", sentences, &allowed);
        prop_assert!(built.format_valid);
        let parsed = parse_answer_text(&built.render(), &allowed);
        prop_assert_eq!(parsed, built);
    }

    #[test]
    fn labels_round_trip(labels in prop::collection::vec(any::<bool>(), 1..40)) {
        let rendered = render_labels(&labels);
        let parsed = parse_labels(&rendered, labels.len()).unwrap();
        prop_assert_eq!(&parsed, &labels);
        prop_assert_eq!(render_labels(&parsed), rendered);
    }
}

const ONE_CASE: &str = r#"{"cases": [{"case_id": "a", "patient_question": "", "clinician_question": "Why?",
  "sentences": [{"id": 1, "text": "One.", "label": "essential"},
                {"id": 2, "text": "Two.", "label": "not-relevant"},
                {"id": 3, "text": "Three.", "label": "supplementary"}]}]}"#;

#[test]
fn load_examples() {
    let set = load_cases(ONE_CASE.as_bytes(), CaseFormat::Json).unwrap();
    assert_eq!(set.len(), 1);
    let case = set.get("a").unwrap();
    assert_eq!(case.sentences.iter().map(|s| s.id).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(gold_evidence(case, EvidenceMode::Strict).unwrap(), BTreeSet::from([1]));
    assert_eq!(gold_evidence(case, EvidenceMode::Lenient).unwrap(), BTreeSet::from([1, 3]));

    let gap = ONE_CASE.replace("\"id\": 2", "\"id\": 4");
    assert!(matches!(
        load_cases(gap.as_bytes(), CaseFormat::Json),
        Err(CorpusError::NonContiguousSentenceIds { .. })
    ));
    let dup = r#"{"cases": [
      {"case_id": "a", "patient_question": "q", "clinician_question": "", "sentences": [{"id": 1, "text": "x", "label": null}]},
      {"case_id": "a", "patient_question": "q", "clinician_question": "", "sentences": [{"id": 1, "text": "y", "label": null}]}]}"#;
    assert!(matches!(load_cases(dup.as_bytes(), CaseFormat::Json), Err(CorpusError::DuplicateCaseId(_))));
}

#[test]
fn xml_errors_carry_positions() {
    let bad = "<cases split=\"dev\">\n  <case id=\"a\">\n    <clinician_question>Why?</clinician_question>\n  </cas>\n</cases>";
    match load_cases(bad.as_bytes(), CaseFormat::Xml) {
        Err(CorpusError::Malformed { line, .. }) => assert!(line >= 4, "line {line}"),
        other => panic!("expected a malformed-input error, got {other:?}"),
    }
}

#[test]
fn all_not_relevant_has_empty_strict_evidence() {
    let text = ONE_CASE.replace("essential\"", "not-relevant\"").replace("supplementary", "not-relevant");
    let set = load_cases(text.as_bytes(), CaseFormat::Json).unwrap();
    assert!(gold_evidence(set.get("a").unwrap(), EvidenceMode::Strict).unwrap().is_empty());
}

#[test]
fn submission_writer_examples() {
    let set = load_cases(ONE_CASE.as_bytes(), CaseFormat::Json).unwrap();
    let mut sub = Submission::default();
    sub.push("a", "Fluid built up. (1, 3)");
    let mut buf = Vec::new();
    write_submission(&sub, &set, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "{\"case_id\":\"a\",\"answer\":\"Fluid built up. (1, 3)\"}\n");

    let mut sink = Vec::new();
    assert!(matches!(
        write_submission(&Submission::default(), &set, &mut sink),
        Err(CorpusError::InvalidEntry { .. })
    ));
    let mut uncited = Submission::default();
    uncited.push("a", "No citation here.");
    assert!(write_submission(&uncited, &set, &mut sink).is_err());
}
