#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use evigen::answer::{AnswerSentence, StructuredAnswer};
use evigen::corpus::{Case, CaseFormat, CaseSet, NoteSentence, RelevanceLabel, SplitTag, Submission};
use evigen::evidence::live_case_block;
use evigen::llm::{Backend, MockBackend, MockRule, PromptRequest};
use evigen::orchestrator::{gold_oracle, load_case_file};
use proptest::prelude::*;

pub fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_cases.json")
}

pub fn fixture() -> CaseSet {
    load_case_file(&fixture_path(), CaseFormat::Json).unwrap()
}

/// `n` one-sentence cases `c0..c{n-1}` with an essential sentence each.
pub fn tiny_devset(n: usize) -> CaseSet {
    let cases = (0..n)
        .map(|i| Case {
            case_id: format!("c{i}"),
            patient_question: String::new(),
            clinician_question: format!("question {i}"),
            sentences: vec![NoteSentence {
                id: 1,
                text: format!("sentence of case {i}"),
                gold_label: Some(RelevanceLabel::Essential),
            }],
            reference_answer: Some(format!("answer {i}")),
        })
        .collect();
    CaseSet::new(cases, SplitTag::Dev).unwrap()
}

/// Index of a case id produced by [`tiny_devset`].
pub fn case_index(case: &Case) -> usize {
    case.case_id[1..].parse().unwrap()
}

/// Labels every sentence "not essential" unless the system instruction
/// contains `trigger`, in which case it returns the gold labels.
pub fn picky_mock(cases: &CaseSet, trigger: &'static str) -> MockBackend {
    let oracle = gold_oracle(cases.iter());
    MockBackend::new().with_rule(MockRule::when(move |req: &PromptRequest| {
        if req.system_text.contains(trigger) {
            return oracle.complete(req).ok().map(|c| c.text);
        }
        let block = live_case_block(&req.user_text)?;
        let lines: Vec<String> = block
            .lines()
            .filter_map(|l| l.split_once(": ")?.0.parse::<u32>().ok())
            .map(|id| format!("{id}: not essential"))
            .collect();
        Some(lines.join("\n"))
    }))
}

pub fn words(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec("[A-Za-z][a-z0-9]{0,7}", 1..max).prop_map(|w| w.join(" "))
}

pub fn prose() -> impl Strategy<Value = String> {
    // Markup-hostile characters exercise XML and JSON escaping.
    (words(8), prop::sample::select(vec!["", ".", " & co.", " <ok>", " \"quoted\"", " é"]))
        .prop_map(|(w, tail)| format!("{w}{tail}"))
}

pub fn label() -> impl Strategy<Value = RelevanceLabel> {
    prop::sample::select(vec![
        RelevanceLabel::Essential,
        RelevanceLabel::Supplementary,
        RelevanceLabel::NotRelevant,
    ])
}

pub fn case(id: usize) -> impl Strategy<Value = Case> {
    (
        prose(),
        prop::option::of(prose()),
        prop::collection::vec((prose(), label()), 1..6),
        any::<bool>(),
        prop::option::of(prose()),
    )
        .prop_map(move |(clinician, patient, sentences, labeled, reference)| Case {
            case_id: format!("case-{id}"),
            patient_question: patient.unwrap_or_default(),
            clinician_question: clinician,
            sentences: sentences
                .into_iter()
                .enumerate()
                .map(|(i, (text, l))| NoteSentence {
                    id: i as u32 + 1,
                    text,
                    gold_label: labeled.then_some(l),
                })
                .collect(),
            reference_answer: reference,
        })
}

pub fn case_set() -> impl Strategy<Value = CaseSet> {
    (1usize..5, prop::sample::select(vec![SplitTag::Dev, SplitTag::Test]))
        .prop_flat_map(|(n, tag)| {
            let cases: Vec<_> = (0..n).map(case).collect();
            (cases, Just(tag))
        })
        .prop_map(|(cases, tag)| CaseSet::new(cases, tag).expect("generated cases are valid"))
}

pub fn answer() -> impl Strategy<Value = Vec<AnswerSentence>> {
    prop::collection::vec(
        (
            words(10),
            prop::sample::select(vec!["", ".", "?", "!"]),
            prop::collection::btree_set(1u32..30, 1..4),
        ),
        1..5,
    )
    .prop_map(|parts| {
        parts
            .into_iter()
            .map(|(w, end, citations)| AnswerSentence {
                text: format!("{w}{end}"),
                citations,
            })
            .collect()
    })
}

/// Format-valid rendered answers, one per case, citing only that case's ids.
pub fn submission_for(set: &CaseSet, answers: Vec<Vec<AnswerSentence>>) -> Submission {
    let mut sub = Submission::default();
    for (case, sentences) in set.iter().zip(answers) {
        let n = case.sentences.len() as u32;
        let sentences = sentences
            .into_iter()
            .map(|s| AnswerSentence {
                citations: s.citations.iter().map(|c| (c - 1) % n + 1).collect(),
                ..s
            })
            .collect();
        let allowed: BTreeSet<u32> = (1..=n).collect();
        sub.push(case.case_id.clone(), StructuredAnswer::from_sentences("", sentences, &allowed).render());
    }
    sub
}
