//! Training-free optimization of text (and media) candidates by alternating
//! an LLM generator with a scorer.
//!
//! A run seeds a [`CandidatePool`], then repeatedly formats the best
//! candidates as feedback, asks a generator for new proposals, scores them
//! and merges them back. See [`Engine::run_optimization`].

pub mod artifacts;
pub mod backends;
pub mod candidate;
pub mod config;
pub mod error;
pub mod generators;
pub mod metrics;
pub mod pool;
pub mod prompts;
pub mod run;
pub mod scorers;
pub mod solver;

pub use candidate::{normalize_text, scalarize_scores, Candidate, CandidateId, Direction, Objective, ScoreValue};
pub use error::{Error, Result};
pub use metrics::bleu4;
pub use pool::{check_convergence, epsilon_greedy_select, top_k_select, CandidatePool};
pub use prompts::{format_feedback, parse_numbered_list, render_template, PromptTemplate, TemplateStore};
pub use run::{RunConfig, RunTrace, StepRecord};
pub use solver::{Bootstrap, Engine, SolveResult, StopReason, TaskKind, TaskSpec};

/// Version string recorded in run manifests.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
