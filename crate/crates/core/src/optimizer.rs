//! Discrete prompt search for either stage.
//!
//! The search space is `instructions × demo_sets`, with the hand-written seed
//! instruction and the empty demonstration set at index 0. A trial scores one
//! candidate on a seeded random minibatch of the dev set; after the trial
//! budget is spent the top minibatch scorers and the seed are re-scored on the
//! full dev set and the best of those wins. Because the seed is always a
//! finalist, the winner never scores below it.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{generate, render_question_block, resolve_evidence, AnswerError, EvidenceSet};
use crate::corpus::{gold_evidence, Case, CaseSet, CorpusError, EvidenceMode};
use crate::evidence::{
    classify_once, evidence_f1, render_case_block, render_labels, self_consistency, EvidenceError, LabelVector,
    VoteSettings,
};
use crate::llm::{Gateway, GatewayError, PromptRequest, Purpose, SamplingParams, OPTIMIZATION_TEMPERATURE};
use crate::prompt::{Demonstration, PromptConfig, Stage};
use crate::scoring::{composite_reward, pairwise_sum, MetricSet, ScoringError};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid search settings: {0}")]
    InvalidSettings(String),
    #[error("candidate pool needs at least one instruction and one demo set")]
    EmptyPool,
    #[error("cannot evaluate on an empty case set")]
    EmptyDataset,
    #[error("every trial failed")]
    AllTrialsFailed,
    #[error("case `{0}` has no reference answer")]
    MissingReference(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Answer(#[from] AnswerError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("artifact I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact encoding: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, OptimizerError>;

/// `(instruction index, demo-set index)`.
pub type Choice = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub instructions: Vec<String>,
    pub demo_sets: Vec<Vec<Demonstration>>,
}

impl CandidatePool {
    /// `instructions[0]` must be the seed instruction; an empty demo set is
    /// inserted at index 0 when missing.
    pub fn new(instructions: Vec<String>, mut demo_sets: Vec<Vec<Demonstration>>) -> Result<Self> {
        if instructions.is_empty() {
            return Err(OptimizerError::EmptyPool);
        }
        if demo_sets.first().is_none_or(|d| !d.is_empty()) {
            demo_sets.insert(0, Vec::new());
        }
        Ok(Self {
            instructions,
            demo_sets,
        })
    }

    pub fn seed_only(instruction: impl Into<String>) -> Self {
        Self {
            instructions: vec![instruction.into()],
            demo_sets: vec![Vec::new()],
        }
    }

    pub fn len(&self) -> usize {
        self.instructions.len() * self.demo_sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, (i, j): Choice) -> usize {
        i * self.demo_sets.len() + j
    }

    pub fn choice_at(&self, index: usize) -> Choice {
        (index / self.demo_sets.len(), index % self.demo_sets.len())
    }

    pub fn config(&self, (i, j): Choice) -> PromptConfig {
        PromptConfig::new(format!("i{i}-d{j}"), self.instructions[i].clone())
            .with_demonstrations(self.demo_sets[j].clone())
    }

    pub fn seed_config(&self) -> PromptConfig {
        self.config((0, 0))
    }
}

mod score_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: usize,
    pub choice: Choice,
    pub minibatch_ids: Vec<String>,
    /// Mean minibatch objective; `-inf` (`null` in JSON) for a failed trial.
    #[serde(with = "score_or_null")]
    pub score: f64,
    pub full_score: Option<f64>,
}

impl Trial {
    pub fn failed(&self) -> bool {
        !self.score.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finalist {
    pub choice: Choice,
    #[serde(with = "score_or_null")]
    pub minibatch_mean: f64,
    #[serde(with = "score_or_null")]
    pub full_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best: PromptConfig,
    pub best_choice: Choice,
    pub ledger: Vec<Trial>,
    pub objective_name: String,
    pub seed_full_score: f64,
    pub best_full_score: f64,
    pub finalists: Vec<Finalist>,
}

/// Outcome of running a stage on one case under some prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRun {
    pub score: f64,
    pub input_rendering: String,
    pub output_rendering: String,
    pub gold_rendering: Option<String>,
}

impl CaseRun {
    pub fn demonstration(&self) -> Demonstration {
        Demonstration::new(
            self.input_rendering.clone(),
            self.gold_rendering.clone().unwrap_or_else(|| self.output_rendering.clone()),
        )
    }
}

/// Per-case objective in `[floor, 1]`, maximized by the search.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    /// Value a failed case contributes to a mean.
    fn floor(&self) -> f64 {
        0.0
    }

    fn run_case(&self, config: &PromptConfig, case: &Case) -> Result<CaseRun>;
}

/// Wraps a scoring closure; renderings are empty so it never yields demos.
pub struct FnObjective<F> {
    name: String,
    score: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&PromptConfig, &Case) -> Result<f64> + Send + Sync,
{
    pub fn new(name: impl Into<String>, score: F) -> Self {
        Self {
            name: name.into(),
            score,
        }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&PromptConfig, &Case) -> Result<f64> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn run_case(&self, config: &PromptConfig, case: &Case) -> Result<CaseRun> {
        Ok(CaseRun {
            score: (self.score)(config, case)?,
            input_rendering: String::new(),
            output_rendering: String::new(),
            gold_rendering: None,
        })
    }
}

/// Strict evidence F1 of the stage-1 labels.
pub struct EvidenceObjective<'g> {
    pub gateway: &'g Gateway,
    pub params: SamplingParams,
    /// Score the voted labels instead of a single pass.
    pub vote: Option<VoteSettings>,
}

impl<'g> EvidenceObjective<'g> {
    pub fn new(gateway: &'g Gateway) -> Self {
        Self {
            gateway,
            params: SamplingParams::with_temperature(OPTIMIZATION_TEMPERATURE).seeded(0),
            vote: None,
        }
    }
}

impl Objective for EvidenceObjective<'_> {
    fn name(&self) -> &str {
        "stage1_evidence_f1"
    }

    fn run_case(&self, config: &PromptConfig, case: &Case) -> Result<CaseRun> {
        let gold = gold_evidence(case, EvidenceMode::Strict)?;
        let predicted = match &self.vote {
            Some(settings) => self_consistency(case, config, settings, self.gateway)?.final_labels,
            None => classify_once(case, config, &self.params, self.gateway)?,
        };
        let score = evidence_f1(&predicted, &gold)?.f1;
        let gold_labels: Vec<bool> = case.sentences.iter().map(|s| gold.contains(&s.id)).collect();
        Ok(CaseRun {
            score,
            input_rendering: render_case_block(case),
            output_rendering: render_labels(&predicted.labels),
            gold_rendering: Some(render_labels(&LabelVector::new(&case.case_id, gold_labels).labels)),
        })
    }
}

/// Composite reward divided by 3, answering from gold evidence.
pub struct AnswerObjective<'g> {
    pub gateway: &'g Gateway,
    pub params: SamplingParams,
    pub metrics: MetricSet,
}

impl<'g> AnswerObjective<'g> {
    pub fn new(gateway: &'g Gateway, metrics: MetricSet) -> Self {
        Self {
            gateway,
            params: SamplingParams::with_temperature(OPTIMIZATION_TEMPERATURE).seeded(0),
            metrics,
        }
    }

    /// Essential sentences, else essential ∪ supplementary, else sentence 1.
    pub fn gold_evidence_set(case: &Case) -> Result<EvidenceSet> {
        let mut ids = gold_evidence(case, EvidenceMode::Strict)?;
        if ids.is_empty() {
            ids = gold_evidence(case, EvidenceMode::Lenient)?;
        }
        Ok(resolve_evidence(case, &EvidenceSet::from_ids(case, &ids), None))
    }
}

impl Objective for AnswerObjective<'_> {
    fn name(&self) -> &str {
        "stage2_composite_reward"
    }

    fn run_case(&self, config: &PromptConfig, case: &Case) -> Result<CaseRun> {
        let reference = case
            .reference_answer
            .as_deref()
            .ok_or_else(|| OptimizerError::MissingReference(case.case_id.clone()))?;
        let evidence = Self::gold_evidence_set(case)?;
        let answer = generate(case, &evidence, config, &self.params, self.gateway, None)?;
        let reward = composite_reward(&answer, reference, &evidence, &self.metrics)?;
        Ok(CaseRun {
            score: reward.normalized(),
            input_rendering: render_question_block(&case.question_text(), &evidence),
            output_rendering: answer.render(),
            gold_rendering: Some(reference.to_string()),
        })
    }
}

struct Evaluation {
    mean: f64,
    failures: usize,
}

fn evaluate_cases(config: &PromptConfig, cases: &[&Case], objective: &dyn Objective) -> Result<Evaluation> {
    if cases.is_empty() {
        return Err(OptimizerError::EmptyDataset);
    }
    let outcomes: Vec<Option<f64>> = cases
        .par_iter()
        .map(|case| match objective.run_case(config, case) {
            Ok(run) => Some(run.score),
            Err(err) => {
                tracing::warn!(case_id = %case.case_id, config_id = %config.config_id, error = %err, "case evaluation failed");
                None
            }
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    let values: Vec<f64> = outcomes.into_iter().map(|o| o.unwrap_or(objective.floor())).collect();
    Ok(Evaluation {
        mean: pairwise_sum(&values) / values.len() as f64,
        failures,
    })
}

/// Mean per-case objective over `dataset` in case order; failed cases
/// contribute the objective's floor.
pub fn evaluate_prompt(config: &PromptConfig, dataset: &CaseSet, objective: &dyn Objective) -> Result<f64> {
    let cases: Vec<&Case> = dataset.iter().collect();
    Ok(evaluate_cases(config, &cases, objective)?.mean)
}

/// Re-scores a ledger trial on its recorded minibatch.
pub fn replay_trial(pool: &CandidatePool, trial: &Trial, devset: &CaseSet, objective: &dyn Objective) -> Result<f64> {
    let cases: Vec<&Case> = trial.minibatch_ids.iter().filter_map(|id| devset.get(id)).collect();
    let eval = evaluate_cases(&pool.config(trial.choice), &cases, objective)?;
    Ok(if eval.failures == cases.len() {
        f64::NEG_INFINITY
    } else {
        eval.mean
    })
}

/// Running statistics of one candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArmStats {
    pub pulls: usize,
    pub successes: usize,
    pub total: f64,
}

impl ArmStats {
    /// Mean over successful trials; `-inf` when none succeeded.
    pub fn mean(&self) -> f64 {
        if self.successes == 0 {
            f64::NEG_INFINITY
        } else {
            self.total / self.successes as f64
        }
    }
}

/// Picks the next candidate (flat pool index) from the running statistics.
pub trait Acquisition {
    fn choose(&mut self, trial: usize, trials: usize, arms: &[ArmStats], rng: &mut ChaCha8Rng) -> usize;
}

/// ε-greedy over running means. Unexplored candidates go first; ε halves at
/// the trial midpoint.
#[derive(Debug, Clone, Copy)]
pub struct EpsilonGreedy {
    pub epsilon: f64,
}

impl Default for EpsilonGreedy {
    fn default() -> Self {
        Self { epsilon: 0.3 }
    }
}

fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (idx, v) in values.enumerate() {
        if idx == 0 || v > best.1 {
            best = (idx, v);
        }
    }
    best.0
}

impl Acquisition for EpsilonGreedy {
    fn choose(&mut self, trial: usize, trials: usize, arms: &[ArmStats], rng: &mut ChaCha8Rng) -> usize {
        let epsilon = if trial >= trials / 2 { self.epsilon / 2.0 } else { self.epsilon };
        let explore = rng.gen::<f64>() < epsilon;
        let unexplored: Vec<usize> = (0..arms.len()).filter(|&a| arms[a].pulls == 0).collect();
        if !unexplored.is_empty() {
            return if explore {
                unexplored[rng.gen_range(0..unexplored.len())]
            } else {
                unexplored[0]
            };
        }
        if explore {
            rng.gen_range(0..arms.len())
        } else {
            argmax_lowest(arms.iter().map(ArmStats::mean))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    pub trials: usize,
    pub minibatch_size: usize,
    pub seed: u64,
    pub top_k: usize,
    pub epsilon: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            trials: 30,
            minibatch_size: 5,
            seed: 0,
            top_k: 3,
            epsilon: 0.3,
        }
    }
}

/// Trial loop with the default ε-greedy acquisition.
pub fn search(
    pool: &CandidatePool,
    objective: &dyn Objective,
    devset: &CaseSet,
    settings: &SearchSettings,
) -> Result<OptimizationResult> {
    let mut acquisition = EpsilonGreedy {
        epsilon: settings.epsilon,
    };
    search_with(pool, objective, devset, settings, &mut acquisition)
}

pub fn search_with(
    pool: &CandidatePool,
    objective: &dyn Objective,
    devset: &CaseSet,
    settings: &SearchSettings,
    acquisition: &mut dyn Acquisition,
) -> Result<OptimizationResult> {
    if pool.is_empty() {
        return Err(OptimizerError::EmptyPool);
    }
    if devset.is_empty() {
        return Err(OptimizerError::EmptyDataset);
    }
    let top_k = settings.top_k.max(1).min(pool.len());
    if settings.trials < top_k {
        return Err(OptimizerError::InvalidSettings(format!(
            "{} trials cannot fill {top_k} finalists",
            settings.trials
        )));
    }
    if settings.minibatch_size == 0 || settings.minibatch_size > devset.len() {
        return Err(OptimizerError::InvalidSettings(format!(
            "minibatch size {} must lie in 1..={}",
            settings.minibatch_size,
            devset.len()
        )));
    }
    if !(0.0..=1.0).contains(&settings.epsilon) {
        return Err(OptimizerError::InvalidSettings(format!("epsilon {} outside [0, 1]", settings.epsilon)));
    }

    let cases: Vec<&Case> = devset.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut arms = vec![ArmStats::default(); pool.len()];
    let mut ledger = Vec::with_capacity(settings.trials);

    for trial_id in 0..settings.trials {
        let arm = if trial_id == 0 {
            0
        } else {
            acquisition.choose(trial_id, settings.trials, &arms, &mut rng)
        };
        let mut picked = sample(&mut rng, cases.len(), settings.minibatch_size).into_vec();
        picked.sort_unstable();
        let minibatch: Vec<&Case> = picked.iter().map(|&i| cases[i]).collect();
        let choice = pool.choice_at(arm);
        let eval = evaluate_cases(&pool.config(choice), &minibatch, objective)?;
        let score = if eval.failures == minibatch.len() {
            f64::NEG_INFINITY
        } else {
            eval.mean
        };
        let stats = &mut arms[arm];
        stats.pulls += 1;
        if score.is_finite() {
            stats.successes += 1;
            stats.total += score;
        }
        tracing::debug!(trial_id, ?choice, score, "trial");
        ledger.push(Trial {
            trial_id,
            choice,
            minibatch_ids: minibatch.iter().map(|c| c.case_id.clone()).collect(),
            score,
            full_score: None,
        });
    }
    if ledger.iter().all(Trial::failed) {
        return Err(OptimizerError::AllTrialsFailed);
    }

    let mut ranked: Vec<usize> = (0..arms.len()).filter(|&a| arms[a].successes > 0).collect();
    ranked.sort_by(|&a, &b| arms[b].mean().total_cmp(&arms[a].mean()).then(a.cmp(&b)));
    let mut finalist_arms: BTreeSet<usize> = ranked.into_iter().take(top_k).collect();
    finalist_arms.insert(0);

    let mut finalists = Vec::with_capacity(finalist_arms.len());
    for &arm in &finalist_arms {
        let choice = pool.choice_at(arm);
        let eval = evaluate_cases(&pool.config(choice), &cases, objective)?;
        let full_score = if eval.failures == cases.len() {
            f64::NEG_INFINITY
        } else {
            eval.mean
        };
        if let Some(trial) = ledger.iter_mut().find(|t| t.choice == choice) {
            trial.full_score = full_score.is_finite().then_some(full_score);
        }
        finalists.push(Finalist {
            choice,
            minibatch_mean: arms[arm].mean(),
            full_score,
        });
    }

    // Finalists are in index order, so a strict comparison keeps the lowest index on ties.
    let best = finalists
        .iter()
        .skip(1)
        .fold(&finalists[0], |best, f| if f.full_score > best.full_score { f } else { best });
    let seed_full_score = finalists[0].full_score;
    Ok(OptimizationResult {
        best: pool.config(best.choice),
        best_choice: best.choice,
        best_full_score: best.full_score,
        seed_full_score,
        objective_name: objective.name().to_string(),
        ledger,
        finalists,
    })
}

/// Inputs to the instruction proposer.
#[derive(Debug, Clone)]
pub struct ProposalSpec {
    pub seed_instruction: String,
    pub task_summary: String,
    pub static_pool: Vec<String>,
    /// Rendered training cases shown to the proposer.
    pub examples: Vec<String>,
    pub seed: u64,
}

impl ProposalSpec {
    pub fn for_stage(stage: Stage) -> Self {
        Self {
            seed_instruction: stage.seed_instruction().to_string(),
            task_summary: stage.task_summary().to_string(),
            static_pool: stage.static_pool().iter().map(|s| s.to_string()).collect(),
            examples: Vec::new(),
            seed: 0,
        }
    }

    pub fn with_examples(mut self, examples: Vec<String>) -> Self {
        self.examples = examples;
        self
    }

    fn meta_prompt(&self, index: usize) -> PromptRequest {
        let mut user = format!(
            "Task: {}\n\nCurrent instruction:\n{}\n\n",
            self.task_summary, self.seed_instruction
        );
        for (n, example) in self.examples.iter().enumerate() {
            user.push_str(&format!("Example input {}:\n{}\n\n", n + 1, example.trim_end()));
        }
        user.push_str(&format!(
            "Write candidate instruction #{} for this task. It should be different from the current \
instruction and help the model do the task more accurately. Reply with the instruction text only.",
            index + 1
        ));
        PromptRequest {
            system_text: "You write instructions for a language model.".into(),
            user_text: user,
            params: SamplingParams::with_temperature(OPTIMIZATION_TEMPERATURE).seeded(self.seed + index as u64),
            purpose: Purpose::Proposer,
        }
    }
}

fn clean_proposal(raw: &str) -> String {
    let mut text = raw.trim();
    for prefix in ["Instruction:", "instruction:", "New instruction:"] {
        if let Some(rest) = text.strip_prefix(prefix) {
            text = rest.trim();
        }
    }
    let text = text.trim_matches(|c| c == '"' || c == '\'' || c == '`').trim();
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Seed instruction followed by up to `k` distinct proposals. Without a
/// gateway, or when every proposal duplicates an earlier one, the static pool
/// fills in.
pub fn propose_instructions(spec: &ProposalSpec, k: usize, gateway: Option<&Gateway>) -> Result<Vec<String>> {
    if k == 0 {
        return Err(OptimizerError::InvalidSettings("k must be at least 1".into()));
    }
    let mut pool = vec![spec.seed_instruction.clone()];
    let push_unique = |pool: &mut Vec<String>, candidate: String| {
        if !candidate.is_empty() && !pool.contains(&candidate) {
            pool.push(candidate);
        }
    };
    if let Some(gateway) = gateway {
        let proposals = (0..k)
            .into_par_iter()
            .map(|i| gateway.complete(&spec.meta_prompt(i)).map(|c| clean_proposal(&c.text)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        for proposal in proposals {
            push_unique(&mut pool, proposal);
        }
    }
    if pool.len() == 1 {
        for fallback in &spec.static_pool {
            push_unique(&mut pool, fallback.clone());
        }
    }
    Ok(pool)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSettings {
    pub max_demos: usize,
    pub threshold: f64,
    pub sets_per_size: usize,
    pub seed: u64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            max_demos: 2,
            threshold: 1.0,
            sets_per_size: 2,
            seed: 0,
        }
    }
}

/// Demonstrations from training cases whose seed-prompt objective reaches the
/// threshold, grouped into seeded demo sets. Index 0 is always the empty set.
pub fn bootstrap_demos(
    trainset: &CaseSet,
    seed_config: &PromptConfig,
    objective: &dyn Objective,
    settings: &BootstrapSettings,
) -> Vec<Vec<Demonstration>> {
    let runs: Vec<Option<CaseRun>> = trainset
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|case| match objective.run_case(seed_config, case) {
            Ok(run) => Some(run),
            Err(err) => {
                tracing::warn!(case_id = %case.case_id, error = %err, "bootstrap case failed");
                None
            }
        })
        .collect();
    let qualifying: Vec<Demonstration> = runs
        .into_iter()
        .flatten()
        .filter(|run| run.score >= settings.threshold)
        .map(|run| run.demonstration())
        .filter(Demonstration::is_valid)
        .collect();

    let mut sets: Vec<Vec<Demonstration>> = vec![Vec::new()];
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    for size in 1..=settings.max_demos.min(qualifying.len()) {
        for _ in 0..settings.sets_per_size.max(1) {
            let mut picked = sample(&mut rng, qualifying.len(), size).into_vec();
            picked.sort_unstable();
            let set: Vec<Demonstration> = picked.iter().map(|&i| qualifying[i].clone()).collect();
            if !sets.contains(&set) {
                sets.push(set);
            }
        }
    }
    sets
}

/// Files written by [`write_artifacts`].
#[derive(Debug, Clone)]
pub struct ArtifactPaths {
    pub ledger: PathBuf,
    pub best_config: PathBuf,
    pub seed_config: PathBuf,
    pub summary: PathBuf,
}

impl ArtifactPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            ledger: dir.join("ledger.jsonl"),
            best_config: dir.join("best_config.json"),
            seed_config: dir.join("seed_config.json"),
            summary: dir.join("result.json"),
        }
    }
}

/// Writes the ledger (JSON lines), the winning and seed configs, and the full result.
pub fn write_artifacts(result: &OptimizationResult, seed: &PromptConfig, dir: &Path) -> Result<ArtifactPaths> {
    fs::create_dir_all(dir)?;
    let paths = ArtifactPaths::in_dir(dir);
    let mut ledger = std::io::BufWriter::new(fs::File::create(&paths.ledger)?);
    for trial in &result.ledger {
        serde_json::to_writer(&mut ledger, trial)?;
        ledger.write_all(b"\n")?;
    }
    ledger.flush()?;
    fs::write(&paths.best_config, serde_json::to_string_pretty(&result.best)? + "\n")?;
    fs::write(&paths.seed_config, serde_json::to_string_pretty(seed)? + "\n")?;
    fs::write(&paths.summary, serde_json::to_string_pretty(result)? + "\n")?;
    Ok(paths)
}

/// Loads a saved winning config (`best_config.json`, or a full `result.json`).
pub fn load_best_config(path: &Path) -> Result<PromptConfig> {
    let text = fs::read_to_string(path)?;
    if let Ok(result) = serde_json::from_str::<OptimizationResult>(&text) {
        return Ok(result.best);
    }
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{NoteSentence, RelevanceLabel, SplitTag};
    use crate::llm::{MockBackend, MockRule};
    use std::sync::Arc;

    fn devset(n: usize) -> CaseSet {
        let cases = (0..n)
            .map(|i| Case {
                case_id: format!("c{i}"),
                patient_question: String::new(),
                clinician_question: format!("question {i}"),
                sentences: vec![NoteSentence {
                    id: 1,
                    text: "s".into(),
                    gold_label: Some(RelevanceLabel::Essential),
                }],
                reference_answer: None,
            })
            .collect();
        CaseSet::new(cases, SplitTag::Dev).unwrap()
    }

    fn pool(instructions: usize, demo_sets: usize) -> CandidatePool {
        let demos = (0..demo_sets)
            .map(|j| (0..j).map(|k| Demonstration::new(format!("in{k}"), format!("out{k}"))).collect())
            .collect();
        CandidatePool::new((0..instructions).map(|i| format!("inst{i}")).collect(), demos).unwrap()
    }

    #[test]
    fn pool_indexing() {
        let p = pool(3, 2);
        assert_eq!(p.len(), 6);
        for idx in 0..6 {
            assert_eq!(p.index_of(p.choice_at(idx)), idx);
        }
        assert_eq!(p.seed_config().instruction, "inst0");
        assert!(p.seed_config().demonstrations.is_empty());
        let inserted = CandidatePool::new(vec!["a".into()], vec![vec![Demonstration::new("x", "y")]]).unwrap();
        assert_eq!(inserted.demo_sets.len(), 2);
        assert!(inserted.demo_sets[0].is_empty());
    }

    #[test]
    fn evaluate_prompt_arithmetic() {
        let ones = FnObjective::new("one", |_: &PromptConfig, _: &Case| Ok(1.0));
        assert_eq!(evaluate_prompt(&PromptConfig::new("x", "i"), &devset(3), &ones).unwrap(), 1.0);
        let alternating = FnObjective::new("alt", |_: &PromptConfig, c: &Case| {
            Ok(if c.case_id == "c0" { 0.0 } else { 1.0 })
        });
        assert_eq!(evaluate_prompt(&PromptConfig::new("x", "i"), &devset(2), &alternating).unwrap(), 0.5);
    }

    #[test]
    fn search_finds_the_scripted_winner() {
        let objective = FnObjective::new("scripted", |cfg: &PromptConfig, _: &Case| {
            Ok(if cfg.instruction == "inst2" && cfg.demonstrations.is_empty() { 1.0 } else { 0.0 })
        });
        let settings = SearchSettings {
            trials: 8,
            minibatch_size: 3,
            ..Default::default()
        };
        let result = search(&pool(3, 2), &objective, &devset(5), &settings).unwrap();
        assert_eq!(result.best_choice, (2, 0));
        assert_eq!(result.best_full_score, 1.0);
        assert_eq!(result.seed_full_score, 0.0);
        assert_eq!(result.ledger.len(), 8);
        assert_eq!(result.ledger[0].choice, (0, 0));
    }

    #[test]
    fn single_candidate_pool() {
        let objective = FnObjective::new("half", |_: &PromptConfig, _: &Case| Ok(0.5));
        let settings = SearchSettings {
            trials: 2,
            minibatch_size: 1,
            ..Default::default()
        };
        let result = search(&CandidatePool::seed_only("seed"), &objective, &devset(2), &settings).unwrap();
        assert_eq!(result.best_choice, (0, 0));
        assert_eq!(result.best_full_score, result.seed_full_score);
    }

    #[test]
    fn failures() {
        let failing = FnObjective::new("fail", |_: &PromptConfig, c: &Case| {
            Err(OptimizerError::MissingReference(c.case_id.clone()))
        });
        let settings = SearchSettings {
            trials: 3,
            minibatch_size: 2,
            ..Default::default()
        };
        assert!(matches!(
            search(&pool(2, 1), &failing, &devset(3), &settings),
            Err(OptimizerError::AllTrialsFailed)
        ));
        let too_big = SearchSettings {
            minibatch_size: 9,
            ..settings
        };
        assert!(matches!(
            search(&pool(2, 1), &failing, &devset(3), &too_big),
            Err(OptimizerError::InvalidSettings(_))
        ));
    }

    #[test]
    fn failed_trial_serializes_as_null() {
        let t = Trial {
            trial_id: 0,
            choice: (0, 0),
            minibatch_ids: vec![],
            score: f64::NEG_INFINITY,
            full_score: None,
        };
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"score\":null"));
        let back: Trial = serde_json::from_str(&json).unwrap();
        assert!(back.failed());
    }

    #[test]
    fn proposals() {
        let spec = ProposalSpec::for_stage(Stage::Evidence);
        let static_only = propose_instructions(&spec, 3, None).unwrap();
        assert_eq!(static_only[0], spec.seed_instruction);
        assert_eq!(static_only.len(), 1 + spec.static_pool.len());

        let distinct = MockBackend::new().with_rule(MockRule::when(|req: &PromptRequest| {
            Some(format!("Instruction: variant with seed {}", req.params.seed.unwrap_or(0)))
        }));
        let gw = Gateway::new(Arc::new(distinct));
        let got = propose_instructions(&spec, 3, Some(&gw)).unwrap();
        assert_eq!(got.len(), 4);
        assert_eq!(got[1], "variant with seed 0");

        let seed_text = spec.seed_instruction.clone();
        let echo = MockBackend::new().with_rule(MockRule::always(seed_text));
        let gw = Gateway::new(Arc::new(echo));
        let got = propose_instructions(&spec, 3, Some(&gw)).unwrap();
        assert_eq!(got.len(), 1 + spec.static_pool.len());
    }

    #[test]
    fn bootstrap_threshold_and_determinism() {
        struct Scripted;
        impl Objective for Scripted {
            fn name(&self) -> &str {
                "scripted"
            }
            fn run_case(&self, _: &PromptConfig, case: &Case) -> Result<CaseRun> {
                let score = if case.case_id == "c1" { 0.5 } else { 1.0 };
                Ok(CaseRun {
                    score,
                    input_rendering: format!("in {}", case.case_id),
                    output_rendering: "out".into(),
                    gold_rendering: Some("gold".into()),
                })
            }
        }
        let cfg = PromptConfig::new("s", "seed");
        let two = CaseSet::new(devset(2).cases[..2].to_vec(), SplitTag::Dev).unwrap();
        let sets = bootstrap_demos(&two, &cfg, &Scripted, &BootstrapSettings::default());
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[1], vec![Demonstration::new("in c0", "gold")]);

        let settings = BootstrapSettings {
            max_demos: 2,
            ..Default::default()
        };
        let four = devset(4);
        let a = bootstrap_demos(&four, &cfg, &Scripted, &settings);
        let b = bootstrap_demos(&four, &cfg, &Scripted, &settings);
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.len() <= 2));

        let empty = CaseSet::new(Vec::new(), SplitTag::Dev).unwrap();
        assert_eq!(bootstrap_demos(&empty, &cfg, &Scripted, &settings), vec![Vec::new()]);
    }
}
