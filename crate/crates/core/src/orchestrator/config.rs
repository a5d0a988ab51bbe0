//! Run configuration: one TOML file plus `EVIGEN_<SECTION>__<KEY>` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CaseFormat;
use crate::evidence::VoteSettings;
use crate::llm::{LiveConfig, SamplingParams, API_KEY_ENV, DEFAULT_MAX_CONTEXT_TOKENS, OPTIMIZATION_TEMPERATURE};
use crate::optimizer::{BootstrapSettings, SearchSettings};
use crate::prompt::Preset;
use crate::scoring::ScoringConfig;

use super::{OrchestratorError, Result};

const ENV_PREFIX: &str = "EVIGEN_";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub backend: BackendConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub scoring: ScoringSection,
    pub optimizer: OptimizerConfig,
    pub run: RunSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Cases to run on; also the dev set for optimization.
    pub cases: PathBuf,
    /// Training cases for demonstration bootstrapping; defaults to `cases`.
    pub train: Option<PathBuf>,
    /// Inferred from the file extension when absent.
    pub format: Option<CaseFormat>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    #[default]
    Mock,
    Replay,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Mock script (JSON). Without one, the mock answers from the gold labels.
    pub mock_script: Option<PathBuf>,
    /// Transcript served by the replay backend.
    pub transcript: Option<PathBuf>,
    /// Record every request/completion pair to `<out_dir>/transcript.jsonl`.
    pub record: bool,
    #[serde(flatten)]
    pub live: LiveConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub preset: Preset,
    /// Saved optimizer output used by the `optimized` preset.
    pub optimized_config: Option<PathBuf>,
    pub runs: u32,
    pub threshold: u32,
    pub temperature: f64,
    pub seed_base: u64,
    pub max_context_tokens: usize,
}

impl Default for Stage1Config {
    fn default() -> Self {
        let votes = VoteSettings::default();
        Self {
            preset: Preset::FewShot,
            optimized_config: None,
            runs: votes.runs,
            threshold: votes.threshold,
            temperature: votes.temperature,
            seed_base: votes.seed_base,
            max_context_tokens: votes.max_context_tokens,
        }
    }
}

impl Stage1Config {
    pub fn vote_settings(&self) -> VoteSettings {
        VoteSettings {
            runs: self.runs,
            threshold: self.threshold,
            temperature: self.temperature,
            seed_base: self.seed_base,
            max_context_tokens: self.max_context_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub preset: Preset,
    pub optimized_config: Option<PathBuf>,
    pub temperature: f64,
    pub seed: u64,
    pub max_context_tokens: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            preset: Preset::FewShot,
            optimized_config: None,
            temperature: OPTIMIZATION_TEMPERATURE,
            seed: 0,
            max_context_tokens: DEFAULT_MAX_CONTEXT_TOKENS,
        }
    }
}

impl Stage2Config {
    pub fn params(&self) -> SamplingParams {
        SamplingParams {
            max_context_tokens: self.max_context_tokens,
            ..SamplingParams::with_temperature(self.temperature).seeded(self.seed)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    #[serde(flatten)]
    pub protocol: ScoringConfig,
    /// Semantic scorer subprocess: program followed by its arguments.
    pub plugin_command: Vec<String>,
    /// Semantic scorer HTTP endpoint.
    pub plugin_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub search: SearchSettings,
    /// Number of proposed instructions.
    pub proposals: usize,
    /// Ask the backend for proposals; otherwise only the static pool is used.
    pub propose: bool,
    pub proposal_examples: usize,
    pub max_demos: usize,
    pub demo_threshold: f64,
    pub sets_per_size: usize,
    /// Score stage 1 through the full voted pipeline instead of a single pass.
    pub vote: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let boot = BootstrapSettings::default();
        Self {
            search: SearchSettings::default(),
            proposals: 8,
            propose: true,
            proposal_examples: 3,
            max_demos: boot.max_demos,
            demo_threshold: boot.threshold,
            sets_per_size: boot.sets_per_size,
            vote: false,
        }
    }
}

impl OptimizerConfig {
    pub fn bootstrap(&self) -> BootstrapSettings {
        BootstrapSettings {
            max_demos: self.max_demos,
            threshold: self.demo_threshold,
            sets_per_size: self.sets_per_size,
            seed: self.search.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub out_dir: PathBuf,
    /// Upper bound on cases processed concurrently.
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            workers: 4,
        }
    }
}

fn config_err(msg: impl Into<String>) -> OrchestratorError {
    OrchestratorError::Config(msg.into())
}

/// Parses an override value as a TOML value, falling back to a plain string.
fn parse_override(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_overrides<I>(table: &mut toml::Table, env: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    for (name, raw) in env {
        if name == API_KEY_ENV {
            continue;
        }
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let Some((section, key)) = rest.split_once("__") else {
            continue;
        };
        let (section, key) = (section.to_ascii_lowercase(), key.to_ascii_lowercase());
        let entry = table
            .entry(section.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let toml::Value::Table(section_table) = entry else {
            return Err(config_err(format!("`{section}` is not a table")));
        };
        tracing::debug!(%section, %key, "config override from environment");
        section_table.insert(key, parse_override(&raw));
    }
    Ok(())
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() && !path.as_os_str().is_empty() {
        *path = base.join(&*path);
    }
}

impl RunConfig {
    /// Reads `path`, applies process-environment overrides, resolves relative
    /// paths against the config file's directory and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let config = Self::parse(&text, base, std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    /// Parses without touching the filesystem or the process environment.
    pub fn parse<I>(text: &str, base: &Path, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| config_err(format!("config syntax: {e}")))?;
        apply_overrides(&mut table, env)?;
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(format!("config: {e}")))?;
        resolve(base, &mut config.data.cases);
        for p in [
            config.data.train.as_mut(),
            config.backend.mock_script.as_mut(),
            config.backend.transcript.as_mut(),
            config.stage1.optimized_config.as_mut(),
            config.stage2.optimized_config.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        resolve(base, &mut config.run.out_dir);
        Ok(config)
    }

    /// Checks value ranges and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        self.stage1
            .vote_settings()
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        self.stage2
            .params()
            .validate()
            .map_err(|e| config_err(format!("stage2: {e}")))?;
        if self.run.workers == 0 {
            return Err(config_err("run.workers must be at least 1"));
        }
        let must_exist = |label: &str, path: &Path| {
            if path.is_file() {
                Ok(())
            } else {
                Err(config_err(format!("{label} `{}` does not exist", path.display())))
            }
        };
        if self.data.cases.as_os_str().is_empty() {
            return Err(config_err("data.cases is required"));
        }
        must_exist("data.cases", &self.data.cases)?;
        if let Some(p) = &self.data.train {
            must_exist("data.train", p)?;
        }
        if let Some(p) = &self.backend.mock_script {
            must_exist("backend.mock_script", p)?;
        }
        if self.backend.kind == BackendKind::Replay {
            let p = self
                .backend
                .transcript
                .as_ref()
                .ok_or_else(|| config_err("replay backend needs backend.transcript"))?;
            must_exist("backend.transcript", p)?;
        }
        for (label, preset, path) in [
            ("stage1", self.stage1.preset, &self.stage1.optimized_config),
            ("stage2", self.stage2.preset, &self.stage2.optimized_config),
        ] {
            if preset == Preset::Optimized {
                let p = path
                    .as_ref()
                    .ok_or_else(|| config_err(format!("{label}.preset = \"optimized\" needs {label}.optimized_config")))?;
                must_exist(&format!("{label}.optimized_config"), p)?;
            }
        }
        if !self.scoring.plugin_command.is_empty() && self.scoring.plugin_url.is_some() {
            return Err(config_err("set at most one of scoring.plugin_command and scoring.plugin_url"));
        }
        if self.optimizer.proposals == 0 {
            return Err(config_err("optimizer.proposals must be at least 1"));
        }
        Ok(())
    }

    pub fn case_format(&self, path: &Path) -> CaseFormat {
        self.data.format.unwrap_or_else(|| CaseFormat::from_path(path))
    }
}
