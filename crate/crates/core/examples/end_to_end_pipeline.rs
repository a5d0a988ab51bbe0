//! `run` followed by `evaluate` on the bundled mock configuration.

use std::path::Path;

use evigen::orchestrator::{cmd_evaluate, cmd_run, RunConfig, ScoringSection};

fn main() -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let text = std::fs::read_to_string(data.join("mock_run.toml"))?;
    let mut config = RunConfig::parse(&text, &data, std::env::vars())?;
    let out = tempfile::tempdir()?;
    config.run.out_dir = out.path().to_path_buf();

    let outputs = cmd_run(&config)?;
    for entry in &outputs.submission.entries {
        println!("{}: {}", entry.case_id, entry.answer);
    }
    let report = cmd_evaluate(&outputs.submission_path, &config.data.cases, &ScoringSection::default(), out.path())?;
    print!("\n{}", report.table.render("mock few_shot"));
    Ok(())
}
