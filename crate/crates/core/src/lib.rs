//! Two-stage, citation-grounded question answering over clinical notes.
//!
//! Stage 1 ([`evidence`]) labels every note sentence as essential or not, with
//! self-consistency voting. Stage 2 ([`answer`]) writes a short answer from the
//! selected sentences and cites them. [`optimizer`] searches instructions and
//! demonstrations for either stage, [`scoring`] implements the evaluation
//! protocol, and [`orchestrator`] wires it all together behind the CLI.

pub mod answer;
pub mod corpus;
pub mod evidence;
pub mod llm;
pub mod optimizer;
pub mod orchestrator;
pub mod prompt;
pub mod scoring;
