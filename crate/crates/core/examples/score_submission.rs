//! Scores two hand-made submissions on the synthetic fixture: one citing the
//! gold essential sentences, one citing only irrelevant sentences.

use std::collections::BTreeMap;
use std::path::Path;

use evigen::corpus::{gold_evidence, CaseFormat, EvidenceMode, RelevanceLabel, Submission};
use evigen::orchestrator::load_case_file;
use evigen::scoring::{full_report, ScoringConfig};

fn main() -> anyhow::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_cases.json");
    let cases = load_case_file(&path, CaseFormat::Json)?;
    let references: BTreeMap<String, String> = cases
        .iter()
        .filter_map(|c| Some((c.case_id.clone(), c.reference_answer.clone()?)))
        .collect();

    let mut gold_cited = Submission::default();
    let mut off_topic = Submission::default();
    for case in cases.iter() {
        let answer: Vec<String> = gold_evidence(case, EvidenceMode::Strict)?
            .into_iter()
            .filter_map(|id| case.sentence(id).map(|s| format!("{} ({id})", s.text)))
            .collect();
        gold_cited.push(case.case_id.clone(), answer.join(" "));
        let noise = case
            .sentences
            .iter()
            .find(|s| s.gold_label == Some(RelevanceLabel::NotRelevant))
            .expect("fixture has a not-relevant sentence");
        off_topic.push(case.case_id.clone(), format!("{} ({})", noise.text, noise.id));
    }

    for (label, submission) in [("gold-cited", &gold_cited), ("off-topic", &off_topic)] {
        let report = full_report(submission, &cases, &references, &ScoringConfig::default(), None)?;
        print!("{}", report.table.render(label));
    }
    Ok(())
}
