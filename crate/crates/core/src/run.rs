//! Run hyperparameters and the per-step trace.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 50;
pub const DEFAULT_REQUESTED_NUMBER: usize = 50;
pub const DEFAULT_CAPTION_STEPS: usize = 10;
pub const DEFAULT_T2I_STEPS: usize = 20;
pub const DEFAULT_MIN_POOL_CAPACITY: usize = 1000;

/// Loop hyperparameters for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub top_k: usize,
    pub max_steps: usize,
    pub epsilon: f64,
    pub requested_number: usize,
    pub convergence_threshold: Option<f64>,
    pub seed: u64,
    pub pool_capacity: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            max_steps: DEFAULT_CAPTION_STEPS,
            epsilon: 0.0,
            requested_number: DEFAULT_REQUESTED_NUMBER,
            convergence_threshold: None,
            seed: 0,
            pool_capacity: Some(DEFAULT_MIN_POOL_CAPACITY.max(DEFAULT_TOP_K)),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::config("run.top_k", "must be at least 1"));
        }
        if self.max_steps < 1 {
            return Err(Error::config("run.max_steps", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("run.epsilon", "must lie in [0, 1]"));
        }
        if self.requested_number < 1 {
            return Err(Error::config("run.requested_number", "must be at least 1"));
        }
        if let Some(t) = self.convergence_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config("run.convergence_threshold", "must lie in [0, 1]"));
            }
        }
        if self.pool_capacity == Some(0) {
            return Err(Error::config("run.pool_capacity", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub best_scalar: f64,
    pub mean_topk_scalar: f64,
    pub topk_texts: Vec<String>,
    pub generator_calls: u64,
    pub scorer_calls: u64,
    pub cache_hits: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub steps: Vec<StepRecord>,
}

impl RunTrace {
    pub fn push(&mut self, record: StepRecord) {
        debug_assert_eq!(record.step, self.steps.len());
        self.steps.push(record);
    }

    pub fn final_best(&self) -> Option<f64> {
        self.steps.last().map(|s| s.best_scalar)
    }

    /// Best scalar never drops from one step to the next.
    pub fn is_monotone(&self) -> bool {
        self.steps.windows(2).all(|w| w[1].best_scalar >= w[0].best_scalar)
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for record in &self.steps {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Self> {
        let steps = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<StepRecord>, _>>()?;
        Ok(Self { steps })
    }

    /// CSV with header `step,best_scalar,mean_topk_scalar`.
    pub fn write_curve_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,best_scalar,mean_topk_scalar")?;
        for r in &self.steps {
            writeln!(out, "{},{},{}", r.step, r.best_scalar, r.mean_topk_scalar)?;
        }
        Ok(())
    }
}
