//! Mock backend that answers from the gold annotations of a case set.
//!
//! Stage-1 requests get the gold essential labels of the case whose block
//! appears in the live part of the prompt. Stage-2 requests get one sentence
//! per evidence item, each citing itself, truncated to the word limit.
//! Proposer requests get a fixed instruction.

use std::collections::BTreeMap;

use crate::answer::{live_question_block, MAX_ANSWER_WORDS};
use crate::corpus::{gold_evidence, Case, EvidenceMode};
use crate::evidence::{live_case_block, render_case_block, render_labels};
use crate::llm::{MockBackend, MockRule, PromptRequest, Purpose};

pub const ORACLE_PROPOSAL: &str =
    "Mark a sentence essential when the answer to the question depends on it; otherwise mark it not essential.";

fn gold_answer(block: &str) -> Option<String> {
    let evidence = block.split_once("Evidence sentences:\n")?.1;
    let mut parts = Vec::new();
    let mut words = 0;
    for line in evidence.lines().take_while(|l| !l.trim().is_empty()) {
        let (id, text) = line.split_once(": ")?;
        let id: u32 = id.trim().parse().ok()?;
        let text = text.trim();
        let n = text.split_whitespace().count() + 1;
        if words + n > MAX_ANSWER_WORDS && !parts.is_empty() {
            break;
        }
        words += n;
        parts.push(format!("{text} ({id})"));
    }
    (!parts.is_empty()).then(|| parts.join(" "))
}

pub fn gold_oracle<'a>(cases: impl IntoIterator<Item = &'a Case>) -> MockBackend {
    let labels: BTreeMap<String, String> = cases
        .into_iter()
        .filter_map(|case| {
            let gold = gold_evidence(case, EvidenceMode::Strict).ok()?;
            let vector: Vec<bool> = case.sentences.iter().map(|s| gold.contains(&s.id)).collect();
            Some((render_case_block(case), render_labels(&vector)))
        })
        .collect();
    MockBackend::new().with_rule(MockRule::when(move |req: &PromptRequest| match req.purpose {
        Purpose::Stage1 => {
            let block = live_case_block(&req.user_text)?;
            labels
                .iter()
                .filter(|(rendered, _)| block.starts_with(rendered.as_str()))
                .max_by_key(|(rendered, _)| rendered.len())
                .map(|(_, out)| out.clone())
        }
        Purpose::Stage2 => gold_answer(live_question_block(&req.user_text)?),
        Purpose::Proposer => Some(ORACLE_PROPOSAL.to_string()),
    }))
}
