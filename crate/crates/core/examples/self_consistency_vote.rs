//! Majority voting over five noisy stage-1 runs.
//!
//! The mock flips its verdict on sentence 3 for two of the five seeds; the
//! vote (threshold 3) still recovers the intended labels.

use std::path::Path;
use std::sync::Arc;

use evigen::corpus::{gold_evidence, EvidenceMode};
use evigen::evidence::{evidence_f1, live_case_block, self_consistency, VoteSettings};
use evigen::llm::{Gateway, MockBackend, MockRule, PromptRequest};
use evigen::orchestrator::load_case_file;
use evigen::prompt::{Preset, Stage};

fn main() -> anyhow::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_cases.json");
    let cases = load_case_file(&path, evigen::corpus::CaseFormat::Json)?;
    let case = cases.get("syn-1").expect("fixture case");

    let noisy = MockRule::when(|req: &PromptRequest| {
        live_case_block(&req.user_text)?;
        let seed = req.params.seed.unwrap_or(0);
        let third = if seed % 5 < 2 { "not essential" } else { "essential" };
        Some(format!("1: not essential\n2: essential\n3: {third}\n4: essential"))
    });
    let gateway = Gateway::new(Arc::new(MockBackend::new().with_rule(noisy)));
    let config = Stage::Evidence.preset(Preset::FewShot).expect("built-in preset");

    let record = self_consistency(case, &config, &VoteSettings::default(), &gateway)?;
    for (r, run) in record.runs.iter().enumerate() {
        println!("run {r}: {:?}", run.positive_ids());
    }
    println!("votes per sentence: {:?} (threshold {})", record.votes, record.threshold);
    println!("voted essential ids: {:?}", record.final_labels.positive_ids());

    let gold = gold_evidence(case, EvidenceMode::Strict)?;
    let prf = evidence_f1(&record.final_labels, &gold)?;
    println!("evidence P/R/F1 vs gold {gold:?}: {:.3} / {:.3} / {:.3}", prf.precision, prf.recall, prf.f1);
    Ok(())
}
