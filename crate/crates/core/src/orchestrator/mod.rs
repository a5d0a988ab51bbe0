//! Workflows behind the command line: `run`, `evaluate`, `optimize`, `replay`.

mod config;
mod oracle;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{build_evidence_set, generate, render_question_block, AnswerError, StructuredAnswer};
use crate::corpus::{
    load_cases, parse_submission, write_submission, write_submission_unchecked, Case, CaseSet, CorpusError, Submission,
};
use crate::evidence::{render_case_block, self_consistency, EvidenceError, VoteRecord};
use crate::llm::{
    Backend, Gateway, GatewayError, LiveBackend, MockBackend, MockScript, RecordingBackend, ReplayBackend,
    SamplingParams, OPTIMIZATION_TEMPERATURE,
};
use crate::optimizer::{
    bootstrap_demos, load_best_config, propose_instructions, search, write_artifacts, AnswerObjective, CandidatePool,
    EvidenceObjective, Objective, OptimizationResult, OptimizerError, ProposalSpec,
};
use crate::prompt::{Preset, PromptConfig, Stage};
use crate::scoring::{full_report, FullReport, HttpScorer, MetricSet, ScoringError, SemanticScorer, SubprocessScorer};

pub use config::{
    BackendConfig, BackendKind, DataConfig, OptimizerConfig, RunConfig, RunSection, ScoringSection, Stage1Config,
    Stage2Config,
};
pub use oracle::{gold_oracle, ORACLE_PROPOSAL};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input {path}: {source}")]
    Input { path: PathBuf, source: CorpusError },
    #[error("scoring mismatch: {0}")]
    ScoringMismatch(ScoringError),
    #[error("{failed} of {total} cases failed; see {}", manifest.display())]
    CasesFailed {
        failed: usize,
        total: usize,
        manifest: PathBuf,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Answer(#[from] AnswerError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Scoring(ScoringError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<ScoringError> for OrchestratorError {
    fn from(err: ScoringError) -> Self {
        match err {
            ScoringError::UnknownCase(_) | ScoringError::CaseMismatch => OrchestratorError::ScoringMismatch(err),
            ScoringError::MissingReference(_) | ScoringError::UnlabeledGold(_) | ScoringError::IncompleteMetrics(_) => {
                OrchestratorError::Config(err.to_string())
            }
            other => OrchestratorError::Scoring(other),
        }
    }
}

impl OrchestratorError {
    /// 2 configuration or input error, 3 runtime failure, 4 scoring mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            OrchestratorError::Config(_) | OrchestratorError::Input { .. } => 2,
            OrchestratorError::ScoringMismatch(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, OrchestratorError>;

pub fn load_case_file(path: &Path, format: crate::corpus::CaseFormat) -> Result<CaseSet> {
    let input_err = |source| OrchestratorError::Input {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(|e| input_err(CorpusError::Io(e)))?;
    load_cases(std::io::BufReader::new(file), format).map_err(input_err)
}

fn load_submission_file(path: &Path) -> Result<Submission> {
    let file = File::open(path).map_err(|e| OrchestratorError::Input {
        path: path.to_path_buf(),
        source: CorpusError::Io(e),
    })?;
    parse_submission(std::io::BufReader::new(file)).map_err(|source| OrchestratorError::Input {
        path: path.to_path_buf(),
        source,
    })
}

/// Backend chosen by the config, wrapped in a recorder writing to
/// `record_to` when recording is enabled. The script-less mock answers from
/// the gold annotations of `cases`.
pub fn build_gateway(config: &RunConfig, cases: &[&Case], record_to: Option<&Path>) -> Result<Gateway> {
    let backend = &config.backend;
    let inner: Arc<dyn Backend> = match backend.kind {
        BackendKind::Live => Arc::new(
            LiveBackend::from_env(backend.live.clone()).map_err(|e| OrchestratorError::Config(e.to_string()))?,
        ),
        BackendKind::Mock => match &backend.mock_script {
            Some(path) => {
                let script = MockScript::from_reader(File::open(path)?)
                    .map_err(|e| OrchestratorError::Config(format!("mock script {}: {e}", path.display())))?;
                Arc::new(MockBackend::from_script(script))
            }
            None => Arc::new(gold_oracle(cases.iter().copied())),
        },
        BackendKind::Replay => {
            let path = backend
                .transcript
                .as_ref()
                .ok_or_else(|| OrchestratorError::Config("replay backend needs backend.transcript".into()))?;
            let replay = ReplayBackend::from_reader(File::open(path)?)
                .map_err(|e| OrchestratorError::Config(format!("transcript {}: {e}", path.display())))?;
            Arc::new(replay)
        }
    };
    let backend: Arc<dyn Backend> = match record_to.filter(|_| backend.record) {
        Some(path) => {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            Arc::new(RecordingBackend::new(inner, Box::new(File::create(path)?)))
        }
        None => inner,
    };
    tracing::info!(backend = backend.id(), "gateway ready");
    Ok(Gateway::new(backend))
}

/// Prompt config for `stage` under `preset`; `optimized` loads the saved file.
pub fn resolve_prompt(stage: Stage, preset: Preset, optimized: Option<&Path>) -> Result<PromptConfig> {
    match stage.preset(preset) {
        Some(config) => Ok(config),
        None => {
            let path = optimized.ok_or_else(|| OrchestratorError::Config("optimized preset needs a saved config".into()))?;
            load_best_config(path).map_err(|e| OrchestratorError::Config(format!("{}: {e}", path.display())))
        }
    }
}

fn semantic_plugin(section: &ScoringSection) -> Result<Option<Arc<dyn SemanticScorer>>> {
    if let Some((program, args)) = section.plugin_command.split_first() {
        let scorer = SubprocessScorer::spawn(program, args).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        return Ok(Some(Arc::new(scorer)));
    }
    if let Some(url) = &section.plugin_url {
        let scorer = HttpScorer::new(url.clone()).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        return Ok(Some(Arc::new(scorer)));
    }
    Ok(None)
}

/// Everything produced for one case by the two-stage pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutcome {
    pub votes: VoteRecord,
    pub answer: StructuredAnswer,
    /// Citations were repaired to make the answer grammar-valid.
    pub repaired: bool,
}

/// Stage-1 vote, evidence set, stage-2 answer. An answer that still breaks
/// the citation grammar after the reprompt is repaired against its evidence.
pub fn answer_case(
    case: &Case,
    stage1: &PromptConfig,
    stage2: &PromptConfig,
    stage1_settings: &Stage1Config,
    stage2_params: &SamplingParams,
    gateway: &Gateway,
) -> Result<CaseOutcome> {
    let votes = self_consistency(case, stage1, &stage1_settings.vote_settings(), gateway)?;
    let evidence = build_evidence_set(case, &votes.final_labels)?;
    let answer = generate(case, &evidence, stage2, stage2_params, gateway, Some(&votes))?;
    if answer.format_valid {
        return Ok(CaseOutcome {
            votes,
            answer,
            repaired: false,
        });
    }
    tracing::warn!(case_id = %case.case_id, "repairing citations of an invalid answer");
    let resolved = crate::answer::resolve_evidence(case, &evidence, Some(&votes));
    Ok(CaseOutcome {
        answer: answer.repaired(&resolved),
        votes,
        repaired: true,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    cases: usize,
    stage1_config: PromptConfig,
    stage2_config: PromptConfig,
    repaired_cases: Vec<String>,
}

/// Paths written by a completed run.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub submission: Submission,
    pub votes: Vec<VoteRecord>,
    pub submission_path: PathBuf,
    pub votes_path: PathBuf,
    pub manifest_path: PathBuf,
    pub transcript_path: Option<PathBuf>,
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut sink = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut sink, item)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| OrchestratorError::Config(format!("worker pool: {e}")))
}

/// Runs the pipeline over every case and writes `submission.jsonl`,
/// `votes.jsonl`, `run.json` and, when recording, `transcript.jsonl` into the
/// output directory. On per-case failures the completed cases go to
/// `submission.partial.jsonl` and the errors to `failures.json`.
pub fn cmd_run(config: &RunConfig) -> Result<RunOutputs> {
    config.validate()?;
    let cases = load_case_file(&config.data.cases, config.case_format(&config.data.cases))?;
    let out = &config.run.out_dir;
    fs::create_dir_all(out)?;
    let transcript_path = config.backend.record.then(|| out.join("transcript.jsonl"));
    let gateway = build_gateway(config, &cases.iter().collect::<Vec<_>>(), transcript_path.as_deref())?;
    let stage1 = resolve_prompt(Stage::Evidence, config.stage1.preset, config.stage1.optimized_config.as_deref())?;
    let stage2 = resolve_prompt(Stage::Answer, config.stage2.preset, config.stage2.optimized_config.as_deref())?;
    let params = config.stage2.params();

    let outcomes: Vec<Result<CaseOutcome>> = worker_pool(config.run.workers)?.install(|| {
        cases
            .cases
            .par_iter()
            .map(|case| answer_case(case, &stage1, &stage2, &config.stage1, &params, &gateway))
            .collect()
    });

    let mut submission = Submission::default();
    let mut votes = Vec::new();
    let mut failures = Vec::new();
    let mut repaired_cases = Vec::new();
    for (case, outcome) in cases.iter().zip(outcomes) {
        match outcome {
            Ok(o) => {
                submission.push(case.case_id.clone(), o.answer.render());
                if o.repaired {
                    repaired_cases.push(case.case_id.clone());
                }
                votes.push(o.votes);
            }
            Err(err) => {
                tracing::error!(case_id = %case.case_id, error = %err, "case failed");
                failures.push(CaseFailure {
                    case_id: case.case_id.clone(),
                    error: err.to_string(),
                });
            }
        }
    }

    let submission_path = out.join("submission.jsonl");
    let votes_path = out.join("votes.jsonl");
    let manifest_path = out.join("run.json");
    write_jsonl(&votes_path, &votes)?;
    if !failures.is_empty() {
        let partial = out.join("submission.partial.jsonl");
        write_submission_unchecked(&submission, BufWriter::new(File::create(&partial)?))?;
        if submission_path.exists() {
            fs::remove_file(&submission_path)?;
        }
        let manifest = out.join("failures.json");
        fs::write(&manifest, serde_json::to_string_pretty(&failures)? + "\n")?;
        return Err(OrchestratorError::CasesFailed {
            failed: failures.len(),
            total: cases.len(),
            manifest,
        });
    }
    let mut sink = BufWriter::new(File::create(&submission_path)?);
    write_submission(&submission, &cases, &mut sink)?;
    sink.flush()?;
    let manifest = RunManifest {
        cases: cases.len(),
        stage1_config: stage1,
        stage2_config: stage2,
        repaired_cases,
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(RunOutputs {
        submission,
        votes,
        submission_path,
        votes_path,
        manifest_path,
        transcript_path,
    })
}

/// Re-runs `config` with every completion served from `transcript`.
pub fn cmd_replay(config: &RunConfig, transcript: &Path) -> Result<RunOutputs> {
    let mut replay = config.clone();
    replay.backend.kind = BackendKind::Replay;
    replay.backend.transcript = Some(transcript.to_path_buf());
    replay.backend.record = false;
    cmd_run(&replay)
}

/// Scores a submission file against a gold case file and writes
/// `report.json` into `out_dir`.
pub fn cmd_evaluate(submission: &Path, gold: &Path, scoring: &ScoringSection, out_dir: &Path) -> Result<FullReport> {
    let gold_cases = load_case_file(gold, crate::corpus::CaseFormat::from_path(gold))?;
    let submission = load_submission_file(submission)?;
    let references: BTreeMap<String, String> = gold_cases
        .iter()
        .filter_map(|c| c.reference_answer.clone().map(|r| (c.case_id.clone(), r)))
        .collect();
    let plugin = semantic_plugin(scoring)?;
    let report = full_report(&submission, &gold_cases, &references, &scoring.protocol, plugin.as_deref())?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct OptimizeOutputs {
    pub result: OptimizationResult,
    pub artifact_dir: PathBuf,
}

fn demo_input(stage: Stage, case: &Case) -> Option<String> {
    match stage {
        Stage::Evidence => Some(render_case_block(case)),
        Stage::Answer => AnswerObjective::gold_evidence_set(case)
            .ok()
            .map(|ev| render_question_block(&case.question_text(), &ev)),
    }
}

/// Proposes instructions, bootstraps demonstrations and searches the pool for
/// one stage; artifacts go to `<out_dir>/optimize-stage{1,2}`.
pub fn cmd_optimize(config: &RunConfig, stage: Stage) -> Result<OptimizeOutputs> {
    config.validate()?;
    let devset = load_case_file(&config.data.cases, config.case_format(&config.data.cases))?;
    let trainset = match &config.data.train {
        Some(path) => load_case_file(path, config.case_format(path))?,
        None => devset.clone(),
    };
    for case in devset.iter().chain(trainset.iter()) {
        if !case.has_gold_labels() {
            return Err(OrchestratorError::Config(format!(
                "optimization needs gold labels; case `{}` has none",
                case.case_id
            )));
        }
        if stage == Stage::Answer && case.reference_answer.is_none() {
            return Err(OrchestratorError::Config(format!(
                "stage 2 optimization needs reference answers; case `{}` has none",
                case.case_id
            )));
        }
    }
    let tag = match stage {
        Stage::Evidence => "optimize-stage1",
        Stage::Answer => "optimize-stage2",
    };
    let artifact_dir = config.run.out_dir.join(tag);
    fs::create_dir_all(&artifact_dir)?;
    let transcript = config.backend.record.then(|| artifact_dir.join("transcript.jsonl"));
    let all_cases: Vec<&Case> = devset.iter().chain(trainset.iter()).collect();
    let gateway = build_gateway(config, &all_cases, transcript.as_deref())?;

    let opt = &config.optimizer;
    let mut search_settings = opt.search;
    if search_settings.minibatch_size > devset.len() {
        tracing::warn!(
            requested = search_settings.minibatch_size,
            devset = devset.len(),
            "minibatch larger than the dev set; using the full dev set"
        );
        search_settings.minibatch_size = devset.len();
    }

    let objective: Box<dyn Objective + '_> = match stage {
        Stage::Evidence => {
            let mut obj = EvidenceObjective::new(&gateway);
            obj.params = SamplingParams {
                max_context_tokens: config.stage1.max_context_tokens,
                ..SamplingParams::with_temperature(OPTIMIZATION_TEMPERATURE).seeded(opt.search.seed)
            };
            obj.vote = opt.vote.then(|| config.stage1.vote_settings());
            Box::new(obj)
        }
        Stage::Answer => {
            let mut metrics = MetricSet::native();
            metrics.official = config.scoring.protocol.official;
            if let Some(plugin) = semantic_plugin(&config.scoring)? {
                metrics = metrics.with_semantic(plugin);
            }
            let mut obj = AnswerObjective::new(&gateway, metrics);
            obj.params = SamplingParams {
                max_context_tokens: config.stage2.max_context_tokens,
                ..SamplingParams::with_temperature(OPTIMIZATION_TEMPERATURE).seeded(opt.search.seed)
            };
            Box::new(obj)
        }
    };

    let examples: Vec<String> = trainset
        .iter()
        .filter_map(|c| demo_input(stage, c))
        .take(opt.proposal_examples)
        .collect();
    let spec = ProposalSpec {
        seed: opt.search.seed,
        ..ProposalSpec::for_stage(stage).with_examples(examples)
    };
    let instructions = propose_instructions(&spec, opt.proposals, opt.propose.then_some(&gateway))?;
    let seed_config = CandidatePool::seed_only(stage.seed_instruction()).seed_config();
    let demo_sets = bootstrap_demos(&trainset, &seed_config, objective.as_ref(), &opt.bootstrap());
    let pool = CandidatePool::new(instructions, demo_sets)?;
    tracing::info!(
        instructions = pool.instructions.len(),
        demo_sets = pool.demo_sets.len(),
        "candidate pool ready"
    );
    let result = search(&pool, objective.as_ref(), &devset, &search_settings)?;
    write_artifacts(&result, &seed_config, &artifact_dir)?;
    fs::write(artifact_dir.join("pool.json"), serde_json::to_string_pretty(&pool)? + "\n")?;
    Ok(OptimizeOutputs { result, artifact_dir })
}
