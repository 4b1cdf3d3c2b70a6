//! The generate/score loop and the task pipelines built on it.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::backends::{CallMeter, MediaHandle, Registry, Sampling};
use crate::candidate::{Candidate, IdSource};
use crate::error::{Error, Result};
use crate::generators::{
    self, bootstrap_build_texts, bootstrap_load_texts, GenerateContext, GeneratorKind, GeneratorSpec,
};
use crate::pool::{check_convergence, epsilon_greedy_select, top_k_select, CandidatePool};
use crate::prompts::{FeedbackBlock, FeedbackMode, TemplateStore};
use crate::run::{RunConfig, RunTrace, StepRecord};
use crate::scorers::{batch_score, ScoreContext, ScoreMemo, ScorerKind, ScorerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    CaptionImage,
    CaptionVideo,
    CaptionAudio,
    T2iEnhance,
    StyleTransfer,
    CrossModalArithmetic,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::CaptionImage => "caption_image",
            TaskKind::CaptionVideo => "caption_video",
            TaskKind::CaptionAudio => "caption_audio",
            TaskKind::T2iEnhance => "t2i_enhance",
            TaskKind::StyleTransfer => "style_transfer",
            TaskKind::CrossModalArithmetic => "cross_modal_arithmetic",
        }
    }

    pub fn is_captioning(self) -> bool {
        matches!(self, TaskKind::CaptionImage | TaskKind::CaptionVideo | TaskKind::CaptionAudio)
    }
}

/// Where the step-0 candidate set comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Bootstrap {
    /// One candidate per line; `limit` keeps only the first lines.
    File { path: PathBuf, limit: Option<usize> },
    /// Asks the chat backend for `per_label` candidates per label.
    Llm {
        labels: Vec<String>,
        template: String,
        per_label: usize,
        backend: String,
        #[serde(default)]
        sampling: Sampling,
    },
    Inline { texts: Vec<String> },
}

/// The LLM call that fuses two captions into one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineSpec {
    pub backend: String,
    pub template: String,
    #[serde(default)]
    pub sampling: Sampling,
}

/// One inversion stage of the cross-modal pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub generator: GeneratorSpec,
    pub scorer: ScorerSpec,
    pub run: RunConfig,
    pub bootstrap: Option<Bootstrap>,
}

/// Extra inputs for cross-modal arithmetic. The enclosing task's
/// generator/scorer/run describe the final text-to-image stage and its
/// `test_sample` is the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticSpec {
    pub audio_sample: MediaHandle,
    pub image_stage: StageSpec,
    pub audio_stage: StageSpec,
    pub combine: CombineSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub generator: GeneratorSpec,
    pub scorer: ScorerSpec,
    pub run: RunConfig,
    pub test_sample: Option<MediaHandle>,
    pub init_description: Option<String>,
    pub bootstrap: Option<Bootstrap>,
    pub arithmetic: Option<ArithmeticSpec>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.scorer.validate()?;
        self.run.validate()?;
        let kind = self.kind;
        if kind.is_captioning() {
            if self.test_sample.is_none() {
                return Err(Error::config("task.test_sample", format!("{} needs a test sample", kind.as_str())));
            }
            if self.bootstrap.is_none() {
                return Err(Error::config("task.bootstrap", format!("{} needs a bootstrap set", kind.as_str())));
            }
        }
        if matches!(kind, TaskKind::T2iEnhance | TaskKind::StyleTransfer | TaskKind::CrossModalArithmetic)
            && self.bootstrap.is_some()
        {
            return Err(Error::config("task.bootstrap", format!("{} takes no bootstrap set", kind.as_str())));
        }
        match kind {
            TaskKind::T2iEnhance => {
                if self.init_description.as_deref().unwrap_or_default().trim().is_empty() {
                    return Err(Error::config("task.init_description", "t2i_enhance needs the prompt to rewrite"));
                }
                self.expect_stack("t2i_enhance", GeneratorKind::LlmThenImage, ScorerKind::PreferenceService)?;
            }
            TaskKind::StyleTransfer => {
                if self.test_sample.is_none() {
                    return Err(Error::config("task.test_sample", "style_transfer needs the image to edit"));
                }
                if self.scorer.style_target.is_none() {
                    return Err(Error::config("scorer.style_target", "style_transfer needs a style target"));
                }
                self.expect_stack("style_transfer", GeneratorKind::LlmThenEdit, ScorerKind::GramStyle)?;
            }
            TaskKind::CrossModalArithmetic => {
                if self.test_sample.is_none() {
                    return Err(Error::config("task.test_sample", "cross_modal_arithmetic needs an image"));
                }
                let arith = self
                    .arithmetic
                    .as_ref()
                    .ok_or_else(|| Error::config("task.arithmetic", "cross_modal_arithmetic needs its stage settings"))?;
                self.expect_stack("cross_modal_arithmetic", GeneratorKind::LlmThenImage, ScorerKind::PreferenceService)?;
                for (name, stage) in [("image_stage", &arith.image_stage), ("audio_stage", &arith.audio_stage)] {
                    stage.generator.validate()?;
                    stage.scorer.validate()?;
                    stage.run.validate()?;
                    if stage.bootstrap.is_none() {
                        return Err(Error::config(
                            format!("task.arithmetic.{name}.bootstrap"),
                            "inversion stages need a bootstrap set",
                        ));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn expect_stack(&self, task: &str, generator: GeneratorKind, scorer: ScorerKind) -> Result<()> {
        if self.generator.kind != generator {
            return Err(Error::config(
                "generator.kind",
                format!("{task} uses the {generator:?} generator"),
            ));
        }
        if self.scorer.kind != scorer {
            return Err(Error::config("scorer.kind", format!("{task} uses the {scorer:?} scorer")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    Converged,
    EmptyGeneration,
}

/// Result of one inversion stage of a composite pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub name: String,
    pub best: Candidate,
    pub trace: RunTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub best: Candidate,
    pub trace: RunTrace,
    pub stopped_reason: StopReason,
    /// Inversion stages that fed this run, in execution order.
    pub stages: Vec<StageResult>,
    pub combined_prompt: Option<String>,
}

/// Backends and templates shared by every run.
pub struct Engine {
    pub registry: Registry,
    pub templates: TemplateStore,
    pub max_in_flight: usize,
}

const EXPLORE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Per-step seed: a splitmix64 finalizer over the run seed, a stream tag
/// and the step.
fn derive_seed(seed: u64, stream: u64, step: usize) -> u64 {
    let mut z = seed ^ stream.rotate_left(17) ^ (step as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Engine {
    pub fn new(registry: Registry, templates: TemplateStore) -> Self {
        Self {
            registry,
            templates,
            max_in_flight: 8,
        }
    }

    /// Dispatches on the task kind.
    pub fn solve(&self, task: &TaskSpec) -> Result<SolveResult> {
        match task.kind {
            TaskKind::T2iEnhance => self.solve_t2i(task),
            TaskKind::StyleTransfer => self.solve_style_transfer(task),
            TaskKind::CrossModalArithmetic => {
                task.validate()?;
                let arith = task.arithmetic.as_ref().expect("validated");
                let image = task.test_sample.as_ref().expect("validated");
                self.solve_cross_modal_arithmetic(image, &arith.audio_sample, task)
            }
            _ => self.run_optimization(task),
        }
    }

    pub fn solve_t2i(&self, task: &TaskSpec) -> Result<SolveResult> {
        if task.kind != TaskKind::T2iEnhance {
            return Err(Error::Contract(format!("solve_t2i given a {} task", task.kind.as_str())));
        }
        self.run_optimization(task)
    }

    pub fn solve_style_transfer(&self, task: &TaskSpec) -> Result<SolveResult> {
        if task.kind != TaskKind::StyleTransfer {
            return Err(Error::Contract(format!(
                "solve_style_transfer given a {} task",
                task.kind.as_str()
            )));
        }
        self.run_optimization(task)
    }

    /// Inverts the image and the audio to captions, fuses them with one LLM
    /// call, then rewrites the fused prompt as a text-to-image task.
    pub fn solve_cross_modal_arithmetic(
        &self,
        image: &MediaHandle,
        audio: &MediaHandle,
        task: &TaskSpec,
    ) -> Result<SolveResult> {
        let arith = task
            .arithmetic
            .as_ref()
            .ok_or_else(|| Error::config("task.arithmetic", "cross_modal_arithmetic needs its stage settings"))?;
        let stage_task = |kind: TaskKind, stage: &StageSpec, sample: &MediaHandle| TaskSpec {
            kind,
            generator: stage.generator.clone(),
            scorer: stage.scorer.clone(),
            run: stage.run.clone(),
            test_sample: Some(sample.clone()),
            init_description: None,
            bootstrap: stage.bootstrap.clone(),
            arithmetic: None,
        };

        let image_run = self
            .run_optimization(&stage_task(TaskKind::CaptionImage, &arith.image_stage, image))
            .map_err(|e| e.in_stage("caption_image"))?;
        let audio_run = self
            .run_optimization(&stage_task(TaskKind::CaptionAudio, &arith.audio_stage, audio))
            .map_err(|e| e.in_stage("caption_audio"))?;

        let combined = self
            .combine_captions(&arith.combine, &image_run.best.text, &audio_run.best.text)
            .map_err(|e| e.in_stage("combine"))?;
        log::info!("combined prompt: {combined}");

        let t2i = TaskSpec {
            kind: TaskKind::T2iEnhance,
            init_description: Some(combined.clone()),
            test_sample: None,
            bootstrap: None,
            arithmetic: None,
            ..task.clone()
        };
        let mut result = self.solve_t2i(&t2i).map_err(|e| e.in_stage("t2i_enhance"))?;
        result.stages = vec![
            StageResult {
                name: "caption_image".into(),
                best: image_run.best,
                trace: image_run.trace,
            },
            StageResult {
                name: "caption_audio".into(),
                best: audio_run.best,
                trace: audio_run.trace,
            },
        ];
        result.combined_prompt = Some(combined);
        Ok(result)
    }

    /// Renders the combine template and keeps the first non-empty line of the reply.
    pub fn combine_captions(&self, spec: &CombineSpec, image_caption: &str, audio_caption: &str) -> Result<String> {
        let template = self.templates.get(&spec.template)?;
        let bindings = HashMap::from([
            ("image_caption".to_string(), image_caption.to_string()),
            ("audio_caption".to_string(), audio_caption.to_string()),
        ]);
        let prompt = template.render(&bindings)?;
        let chat = self.registry.chat(&spec.backend)?;
        let reply = chat.chat_complete(
            &[crate::backends::ChatMessage::user(prompt)],
            &spec.sampling,
            &CallMeter::default(),
        )?;
        reply
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .map(str::to_string)
            .ok_or_else(|| Error::Generation("combine reply was empty".into()))
    }

    fn bootstrap_texts(&self, bootstrap: &Bootstrap) -> Result<Vec<String>> {
        match bootstrap {
            Bootstrap::File { path, limit } => {
                let mut texts = bootstrap_load_texts(path)?;
                if let Some(limit) = limit {
                    texts.truncate(*limit);
                }
                Ok(texts)
            }
            Bootstrap::Llm {
                labels,
                template,
                per_label,
                backend,
                sampling,
            } => {
                let chat = self.registry.chat(backend)?;
                bootstrap_build_texts(
                    chat.as_ref(),
                    labels,
                    self.templates.get(template)?,
                    *per_label,
                    sampling,
                    &CallMeter::default(),
                    self.max_in_flight,
                )
            }
            Bootstrap::Inline { texts } => Ok(texts.clone()),
        }
    }

    /// Seeds the pool at step 0, then alternates generation and scoring for
    /// up to `run.max_steps` steps.
    pub fn run_optimization(&self, task: &TaskSpec) -> Result<SolveResult> {
        task.validate()?;
        let run = &task.run;
        let ids = IdSource::default();
        let gen_meter = CallMeter::default();
        let score_meter = CallMeter::default();
        let memo = ScoreMemo::default();
        let score_ctx = ScoreContext {
            registry: &self.registry,
            test_sample: task.test_sample.as_ref(),
            init_description: task.init_description.as_deref(),
            meter: &score_meter,
            memo: &memo,
            max_in_flight: self.max_in_flight,
        };
        let mode = if task.scorer.is_multi_objective() {
            FeedbackMode::Multi
        } else {
            FeedbackMode::Single
        };
        let mut extra = HashMap::new();
        if let Some(desc) = &task.init_description {
            extra.insert("init_description".to_string(), desc.clone());
        }
        let llm_calls = AtomicU64::new(0);
        let gen_ctx = |step| GenerateContext {
            registry: &self.registry,
            templates: &self.templates,
            meter: &gen_meter,
            ids: &ids,
            step,
            max_in_flight: self.max_in_flight,
            llm_calls: &llm_calls,
        };

        let mut pool = CandidatePool::new(run.pool_capacity);
        let mut trace = RunTrace::default();

        // Step 0: bootstrap, identity rewrite, or an unguided first generation.
        let score_before = score_meter.reading();
        let seeds = if let Some(bootstrap) = &task.bootstrap {
            let texts = self.bootstrap_texts(bootstrap).map_err(|e| match e {
                Error::Bootstrap(_) => e,
                other => Error::Bootstrap(other.to_string()),
            })?;
            let seeds: Vec<Candidate> = texts
                .into_iter()
                .map(|t| Candidate::new(ids.next_id(), t, 0))
                .collect();
            seeds
        } else if task.kind == TaskKind::T2iEnhance {
            let desc = task.init_description.clone().expect("validated");
            let media = generators::attach_media(&task.generator, &gen_ctx(0), std::slice::from_ref(&desc))?
                .pop()
                .flatten()
                .ok_or_else(|| Error::Solve("could not render the original prompt".into()))?;
            vec![Candidate::new(ids.next_id(), desc, 0).with_media(media)]
        } else {
            match generators::generate(
                &task.generator,
                &gen_ctx(0),
                &FeedbackBlock::default(),
                run.requested_number,
                &extra,
                derive_seed(run.seed, 0, 0),
            ) {
                Ok(g) => g,
                Err(Error::EmptyGeneration) => Vec::new(),
                Err(e) => return Err(e),
            }
        };
        let scored = batch_score(&task.scorer, &score_ctx, seeds)?;
        pool.merge(scored)?;
        if pool.is_empty() {
            return Err(Error::Solve("candidate pool is empty after seeding".into()));
        }
        let mut prev_topk = top_k_select(&pool, run.top_k);
        let generator_calls = llm_calls.swap(0, Ordering::Relaxed);
        trace.push(step_record(0, &pool, &prev_topk, generator_calls, score_meter.reading().since(score_before)));

        let mut stopped_reason = StopReason::MaxSteps;
        let mut any_generated = false;
        for step in 1..=run.max_steps {
            let score_before = score_meter.reading();
            let selected = if run.epsilon > 0.0 {
                epsilon_greedy_select(&pool, run.top_k, run.epsilon, derive_seed(run.seed, EXPLORE_STREAM, step))
            } else {
                prev_topk.clone()
            };
            let feedback = crate::prompts::format_feedback(&selected, mode)?;
            let generated = match generators::generate(
                &task.generator,
                &gen_ctx(step),
                &feedback,
                run.requested_number,
                &extra,
                derive_seed(run.seed, 0, step),
            ) {
                Ok(g) => Some(g),
                Err(Error::EmptyGeneration) => {
                    log::warn!("step {step}: generator produced nothing");
                    None
                }
                Err(e) => return Err(e),
            };
            let calls = llm_calls.swap(0, Ordering::Relaxed);
            if let Some(g) = generated {
                any_generated = true;
                let scored = batch_score(&task.scorer, &score_ctx, g)?;
                pool.merge(scored)?;
            }
            let topk = top_k_select(&pool, run.top_k);
            trace.push(step_record(step, &pool, &topk, calls, score_meter.reading().since(score_before)));
            log::info!(
                "step {step}/{}: best {:.4}, pool {}",
                run.max_steps,
                pool.max_scalar().unwrap_or(f64::NAN),
                pool.len()
            );
            let converged = run.convergence_threshold.is_some_and(|thr| {
                check_convergence(&texts_of(&prev_topk), &texts_of(&topk), thr)
            });
            prev_topk = topk;
            if converged {
                stopped_reason = StopReason::Converged;
                break;
            }
        }
        if !any_generated {
            stopped_reason = StopReason::EmptyGeneration;
        }

        debug_assert!(trace.is_monotone());
        let best = pool.best().cloned().expect("pool is non-empty");
        Ok(SolveResult {
            best,
            trace,
            stopped_reason,
            stages: Vec::new(),
            combined_prompt: None,
        })
    }
}

fn texts_of(cands: &[Candidate]) -> Vec<String> {
    cands.iter().map(|c| c.normalized_key().to_string()).collect()
}

fn step_record(
    step: usize,
    pool: &CandidatePool,
    topk: &[Candidate],
    generator_calls: u64,
    scoring: crate::backends::MeterReading,
) -> StepRecord {
    let scalars: Vec<f64> = topk.iter().filter_map(Candidate::scalar).collect();
    StepRecord {
        step,
        best_scalar: pool.max_scalar().expect("pool is non-empty"),
        mean_topk_scalar: scalars.iter().sum::<f64>() / scalars.len() as f64,
        topk_texts: topk.iter().map(|c| c.text.clone()).collect(),
        generator_calls,
        scorer_calls: scoring.upstream,
        cache_hits: scoring.cache_hits,
    }
}
