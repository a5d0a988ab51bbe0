//! Prompt configurations and the built-in presets.
//!
//! A [`PromptConfig`] is the unit the optimizer searches over: an instruction
//! plus an ordered list of demonstrations. The presets mirror the compared
//! baselines: a bare instruction (`zero_shot`) and the same instruction with two
//! bundled demonstrations (`few_shot`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demonstration {
    pub input_rendering: String,
    pub output_rendering: String,
}

impl Demonstration {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            input_rendering: input.into(),
            output_rendering: output.into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.input_rendering.trim().is_empty() && !self.output_rendering.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub config_id: String,
    pub instruction: String,
    #[serde(default)]
    pub demonstrations: Vec<Demonstration>,
}

impl PromptConfig {
    pub fn new(config_id: impl Into<String>, instruction: impl Into<String>) -> Self {
        Self {
            config_id: config_id.into(),
            instruction: instruction.into(),
            demonstrations: Vec::new(),
        }
    }

    pub fn with_demonstrations(mut self, demos: Vec<Demonstration>) -> Self {
        self.demonstrations = demos;
        self
    }

    pub fn is_valid(&self) -> bool {
        !self.instruction.trim().is_empty() && self.demonstrations.iter().all(Demonstration::is_valid)
    }

    /// Renders the demonstration block, or an empty string for zero-shot configs.
    pub(crate) fn render_demonstrations(&self, answer_label: &str) -> String {
        let mut out = String::new();
        for (idx, demo) in self.demonstrations.iter().enumerate() {
            out.push_str(&format!(
                "### Example {}\n{}\n{answer_label}:\n{}\n\n",
                idx + 1,
                demo.input_rendering.trim_end(),
                demo.output_rendering.trim_end()
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    ZeroShot,
    FewShot,
    Optimized,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero_shot" => Ok(Preset::ZeroShot),
            "few_shot" => Ok(Preset::FewShot),
            "optimized" => Ok(Preset::Optimized),
            other => Err(format!("unknown preset `{other}`")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::ZeroShot => "zero_shot",
            Preset::FewShot => "few_shot",
            Preset::Optimized => "optimized",
        })
    }
}

pub const STAGE1_SEED_INSTRUCTION: &str = "You are given a question and a clinical note split into numbered sentences. \
For every sentence decide whether it is essential for answering the question.";

pub const STAGE2_SEED_INSTRUCTION: &str = "Answer the question using only the numbered evidence sentences. \
Cite the supporting sentence ids after every sentence of your answer.";

pub const STAGE1_TASK_SUMMARY: &str = "Label each numbered clinical-note sentence as essential or not essential \
for answering a patient's question about their hospital stay.";

pub const STAGE2_TASK_SUMMARY: &str = "Write a short answer (at most 75 words) to a patient's question from \
numbered clinical-note evidence sentences, ending every answer sentence with a parenthetical citation such as (1, 3).";

/// Instructions used when no proposer backend is available or proposals collapse.
pub const STAGE1_STATIC_POOL: &[&str] = &[
    "Read the question carefully, then mark a note sentence essential only if the answer would be incomplete without it.",
    "Act as a clinician reviewing the chart. Flag the sentences that directly explain, justify or describe what the question asks about; mark all others not essential.",
    "Identify the minimal set of note sentences that together answer the question. Label those essential and every other sentence not essential.",
];

pub const STAGE2_STATIC_POOL: &[&str] = &[
    "Write a plain-language answer a patient can understand. Keep it under 75 words and end each sentence with the ids of the evidence it relies on in parentheses.",
    "Summarize what the evidence says about the question in two to four short sentences, each followed by its supporting sentence ids in parentheses.",
    "Answer directly and factually from the cited note sentences only; do not speculate. Every sentence must end with a citation like (2) or (1, 4).",
];

pub fn stage1_demos() -> Vec<Demonstration> {
    vec![
        Demonstration::new(
            "Question: Why was a chest tube placed?\nPatient question: Why did they put a tube in my chest?\nNote sentences:\n\
1: The patient was admitted with shortness of breath.\n\
2: Chest x-ray showed a large left pleural effusion.\n\
3: A chest tube was placed to drain the effusion.\n\
4: The patient tolerated a regular diet.",
            "1: not essential\n2: essential\n3: essential\n4: not essential",
        ),
        Demonstration::new(
            "Question: Why was the blood thinner stopped?\nNote sentences:\n\
1: Warfarin was held because of a gastrointestinal bleed.\n\
2: Hemoglobin dropped from 11 to 7.\n\
3: Physical therapy was consulted.",
            "1: essential\n2: essential\n3: not essential",
        ),
    ]
}

pub fn stage2_demos() -> Vec<Demonstration> {
    vec![
        Demonstration::new(
            "Question: Why was a chest tube placed?\nEvidence sentences:\n\
2: Chest x-ray showed a large left pleural effusion.\n\
3: A chest tube was placed to drain the effusion.",
            "Fluid had collected around your left lung. (2) The tube was placed to drain that fluid. (3)",
        ),
        Demonstration::new(
            "Question: Why was the blood thinner stopped?\nEvidence sentences:\n\
1: Warfarin was held because of a gastrointestinal bleed.\n\
2: Hemoglobin dropped from 11 to 7.",
            "Warfarin was stopped because of bleeding in the digestive tract. (1) Blood counts fell significantly. (2)",
        ),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Evidence,
    Answer,
}

impl Stage {
    pub fn seed_instruction(self) -> &'static str {
        match self {
            Stage::Evidence => STAGE1_SEED_INSTRUCTION,
            Stage::Answer => STAGE2_SEED_INSTRUCTION,
        }
    }

    pub fn task_summary(self) -> &'static str {
        match self {
            Stage::Evidence => STAGE1_TASK_SUMMARY,
            Stage::Answer => STAGE2_TASK_SUMMARY,
        }
    }

    pub fn static_pool(self) -> &'static [&'static str] {
        match self {
            Stage::Evidence => STAGE1_STATIC_POOL,
            Stage::Answer => STAGE2_STATIC_POOL,
        }
    }

    /// Config for the `zero_shot` or `few_shot` preset. `Optimized` has no
    /// built-in config and yields `None`.
    pub fn preset(self, preset: Preset) -> Option<PromptConfig> {
        let base = PromptConfig::new(format!("{preset}-{}", self.tag()), self.seed_instruction());
        match preset {
            Preset::ZeroShot => Some(base),
            Preset::FewShot => Some(base.with_demonstrations(match self {
                Stage::Evidence => stage1_demos(),
                Stage::Answer => stage2_demos(),
            })),
            Preset::Optimized => None,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Stage::Evidence => "stage1",
            Stage::Answer => "stage2",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let zero = Stage::Evidence.preset(Preset::ZeroShot).unwrap();
        assert!(zero.demonstrations.is_empty());
        let few = Stage::Answer.preset(Preset::FewShot).unwrap();
        assert_eq!(few.demonstrations.len(), 2);
        assert_eq!(few.instruction, STAGE2_SEED_INSTRUCTION);
        assert!(few.is_valid());
        assert!(Stage::Answer.preset(Preset::Optimized).is_none());
        assert_eq!("few_shot".parse::<Preset>().unwrap(), Preset::FewShot);
        assert!("many_shot".parse::<Preset>().is_err());
    }
}
