//! Stage-1 prompt search on the synthetic fixture.
//!
//! The mock labels every sentence "not essential" unless the system
//! instruction asks for the "minimal set" of sentences, in which case it
//! returns the gold labels. Search over the static instruction pool finds
//! that instruction and lifts evidence F1 from 0 to 1.

use std::path::Path;
use std::sync::Arc;

use evigen::corpus::CaseFormat;
use evigen::evidence::live_case_block;
use evigen::llm::{Backend, Gateway, MockBackend, MockRule, PromptRequest};
use evigen::optimizer::{
    bootstrap_demos, propose_instructions, search, BootstrapSettings, CandidatePool, EvidenceObjective,
    ProposalSpec, SearchSettings,
};
use evigen::orchestrator::{gold_oracle, load_case_file};
use evigen::prompt::Stage;

fn main() -> anyhow::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_cases.json");
    let devset = load_case_file(&path, CaseFormat::Json)?;

    let oracle = gold_oracle(devset.iter());
    let picky = MockRule::when(move |req: &PromptRequest| {
        if req.system_text.contains("minimal set") {
            return oracle.complete(req).ok().map(|c| c.text);
        }
        let block = live_case_block(&req.user_text)?;
        let ids: Vec<String> = block
            .lines()
            .filter_map(|l| l.split_once(": ")?.0.parse::<u32>().ok())
            .map(|id| format!("{id}: not essential"))
            .collect();
        Some(ids.join("\n"))
    });
    let gateway = Gateway::new(Arc::new(MockBackend::new().with_rule(picky)));
    let objective = EvidenceObjective::new(&gateway);

    let instructions = propose_instructions(&ProposalSpec::for_stage(Stage::Evidence), 3, None)?;
    let seed = CandidatePool::seed_only(Stage::Evidence.seed_instruction()).seed_config();
    let demo_sets = bootstrap_demos(&devset, &seed, &objective, &BootstrapSettings::default());
    let pool = CandidatePool::new(instructions, demo_sets)?;
    println!("pool: {} instructions x {} demo sets", pool.instructions.len(), pool.demo_sets.len());

    let settings = SearchSettings {
        trials: 8,
        minibatch_size: 3,
        seed: 7,
        ..Default::default()
    };
    let result = search(&pool, &objective, &devset, &settings)?;
    for trial in &result.ledger {
        println!("trial {:>2} {:?} minibatch {:?} score {:.3}", trial.trial_id, trial.choice, trial.minibatch_ids, trial.score);
    }
    println!("seed full-devset F1 {:.3}", result.seed_full_score);
    println!("best full-devset F1 {:.3} with {:?}", result.best_full_score, result.best_choice);
    println!("best instruction: {}", result.best.instruction);
    Ok(())
}
