//! Record a pipeline run, then reproduce it from the transcript alone.

use std::path::Path;
use std::sync::Arc;

use evigen::corpus::CaseFormat;
use evigen::llm::{Gateway, GatewayError, RecordingBackend, ReplayBackend};
use evigen::orchestrator::{answer_case, gold_oracle, load_case_file, OrchestratorError, Stage1Config, Stage2Config};
use evigen::prompt::{Preset, Stage};

fn main() -> anyhow::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_cases.json");
    let cases = load_case_file(&path, CaseFormat::Json)?;
    let stage1 = Stage::Evidence.preset(Preset::FewShot).expect("preset");
    let stage2 = Stage::Answer.preset(Preset::FewShot).expect("preset");
    let (s1, s2) = (Stage1Config::default(), Stage2Config::default());

    let recorder = Arc::new(RecordingBackend::new(gold_oracle(cases.iter()), Box::new(std::io::sink())));
    let recorded_gateway = Gateway::new(recorder.clone());
    let mut recorded = Vec::new();
    for case in cases.iter() {
        recorded.push(answer_case(case, &stage1, &stage2, &s1, &s2.params(), &recorded_gateway)?.answer.render());
    }
    let transcript = recorder.transcript();
    println!("recorded {} completions", transcript.entries.len());

    let replay_gateway = Gateway::new(Arc::new(ReplayBackend::new(&transcript)));
    for (case, original) in cases.iter().zip(&recorded) {
        let replayed = answer_case(case, &stage1, &stage2, &s1, &s2.params(), &replay_gateway)?.answer.render();
        assert_eq!(&replayed, original);
        println!("{}: identical", case.case_id);
    }

    let mut edited = stage2.clone();
    edited.instruction.push_str(" Be brief.");
    let first = cases.iter().next().expect("non-empty fixture");
    match answer_case(first, &stage1, &edited, &s1, &s2.params(), &replay_gateway) {
        Err(OrchestratorError::Answer(evigen::answer::AnswerError::Gateway(GatewayError::ReplayMiss { digest }))) => {
            println!("edited stage-2 instruction misses the transcript: {digest}")
        }
        other => anyhow::bail!("expected a replay miss, got {other:?}"),
    }
    Ok(())
}
