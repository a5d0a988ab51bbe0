//! Plugging an external scorer in for BERTScore, AlignScore and MEDCON.
//!
//! The stand-in plugin is a shell loop that answers every request with 0.8.
//! A real deployment would point `scoring.plugin_command` at a model server
//! speaking the same one-JSON-object-per-line protocol.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use evigen::answer::parse_answer;
use evigen::corpus::{CaseFormat, Submission};
use evigen::optimizer::AnswerObjective;
use evigen::orchestrator::load_case_file;
use evigen::scoring::{composite_reward, full_report, MetricSet, ScoringConfig, SubprocessScorer};

fn main() -> anyhow::Result<()> {
    let script = r#"while IFS= read -r line; do echo '{"score": 0.8}'; done"#;
    let plugin = Arc::new(SubprocessScorer::spawn("sh", &["-c".into(), script.into()])?);

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_cases.json");
    let cases = load_case_file(&path, CaseFormat::Json)?;
    let case = cases.get("syn-2").expect("fixture case");
    let evidence = AnswerObjective::gold_evidence_set(case)?;
    let answer = parse_answer(
        "Warfarin was stopped because of bleeding in the gut. (1)",
        &evidence,
    );
    let reference = case.reference_answer.as_deref().expect("fixture reference");

    let official = MetricSet {
        official: true,
        ..MetricSet::native()
    };
    match composite_reward(&answer, reference, &evidence, &official) {
        Err(e) => println!("official mode without a plugin: {e}"),
        Ok(r) => println!("unexpected reward {r:?}"),
    }
    let full = official.with_semantic(plugin.clone());
    let reward = composite_reward(&answer, reference, &evidence, &full)?;
    println!("composite reward with six metrics: {:.4} (normalized {:.4})", reward.total, reward.normalized());

    let mut submission = Submission::default();
    for c in cases.iter() {
        submission.push(c.case_id.clone(), c.reference_answer.clone().unwrap_or_default());
    }
    let references: BTreeMap<String, String> = cases
        .iter()
        .filter_map(|c| Some((c.case_id.clone(), c.reference_answer.clone()?)))
        .collect();
    let report = full_report(&submission, &cases, &references, &ScoringConfig::default(), Some(plugin.as_ref()))?;
    print!("{}", report.table.render("references"));
    Ok(())
}
