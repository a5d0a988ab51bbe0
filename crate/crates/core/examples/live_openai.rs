//! Runs both stages on one fixture case against an OpenAI-compatible endpoint.
//!
//! Needs `EVIGEN_API_KEY`; set `EVIGEN_BASE_URL` / `EVIGEN_MODEL` to target
//! another server. Without a key the example prints a note and exits.

use std::path::Path;
use std::sync::Arc;

use evigen::corpus::CaseFormat;
use evigen::llm::{Gateway, LiveBackend, LiveConfig, API_KEY_ENV};
use evigen::orchestrator::{answer_case, load_case_file, Stage1Config, Stage2Config};
use evigen::prompt::{Preset, Stage};

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_env_filter("evigen=info").init();
    if std::env::var_os(API_KEY_ENV).is_none() {
        println!("{API_KEY_ENV} is not set; skipping the live call.");
        return Ok(());
    }
    let mut live = LiveConfig::default();
    if let Ok(url) = std::env::var("EVIGEN_BASE_URL") {
        live.base_url = url;
    }
    if let Ok(model) = std::env::var("EVIGEN_MODEL") {
        live.model = model;
    }
    let gateway = Gateway::new(Arc::new(LiveBackend::from_env(live)?));

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_cases.json");
    let cases = load_case_file(&path, CaseFormat::Json)?;
    let case = cases.get("syn-1").expect("fixture case");
    let outcome = answer_case(
        case,
        &Stage::Evidence.preset(Preset::FewShot).expect("preset"),
        &Stage::Answer.preset(Preset::FewShot).expect("preset"),
        &Stage1Config::default(),
        &Stage2Config::default().params(),
        &gateway,
    )?;
    println!("votes: {:?}", outcome.votes.votes);
    println!("evidence: {:?}", outcome.votes.final_labels.positive_ids());
    println!("answer: {}", outcome.answer.render());
    Ok(())
}
