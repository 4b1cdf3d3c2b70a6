//! Generators: propose new candidate texts (and optionally media) from the
//! score feedback of the previous step.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{parallel_map, CallMeter, ChatBackend, ChatMessage, MediaHandle, Registry, Sampling};
use crate::candidate::{normalize_text, Candidate, IdSource};
use crate::error::{Error, Result};
use crate::prompts::{parse_numbered_list, FeedbackBlock, PromptTemplate, TemplateStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Llm,
    LlmThenImage,
    LlmThenEdit,
    MockMutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Template name in the store.
    pub template: Option<String>,
    /// Chat endpoint.
    pub backend: Option<String>,
    /// Image generation/editing endpoint for chained kinds.
    pub media_backend: Option<String>,
    pub sampling: Sampling,
    /// Image the edit chain modifies.
    pub test_sample: Option<MediaHandle>,
    /// Optional system message sent before the rendered prompt.
    pub system_prompt: Option<String>,
    /// Tokens the mutation generator draws from.
    pub vocabulary: Vec<String>,
    /// Longest phrase the mutation generator will build.
    pub max_phrase_tokens: Option<usize>,
}

impl GeneratorSpec {
    pub fn llm(template: impl Into<String>, backend: impl Into<String>) -> Self {
        Self {
            kind: GeneratorKind::Llm,
            template: Some(template.into()),
            backend: Some(backend.into()),
            media_backend: None,
            sampling: Sampling::default(),
            test_sample: None,
            system_prompt: None,
            vocabulary: Vec::new(),
            max_phrase_tokens: None,
        }
    }

    pub fn mock_mutation(vocabulary: Vec<String>, max_phrase_tokens: Option<usize>) -> Self {
        Self {
            kind: GeneratorKind::MockMutation,
            template: None,
            backend: None,
            vocabulary,
            max_phrase_tokens,
            ..Self::llm("", "")
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            GeneratorKind::MockMutation => {
                if self.vocabulary.is_empty() {
                    return Err(Error::config("generator.vocabulary", "mutation generator needs a vocabulary"));
                }
                if self.max_phrase_tokens == Some(0) {
                    return Err(Error::config("generator.max_phrase_tokens", "must be at least 1"));
                }
            }
            kind => {
                if self.template.as_deref().unwrap_or_default().is_empty() {
                    return Err(Error::config("generator.template", "LLM generators need a template"));
                }
                if self.backend.as_deref().unwrap_or_default().is_empty() {
                    return Err(Error::config("generator.backend", "LLM generators need a chat backend"));
                }
                if matches!(kind, GeneratorKind::LlmThenImage | GeneratorKind::LlmThenEdit)
                    && self.media_backend.is_none()
                {
                    return Err(Error::config("generator.media_backend", "chained generators need an image backend"));
                }
                if kind == GeneratorKind::LlmThenEdit && self.test_sample.is_none() {
                    return Err(Error::config("generator.test_sample", "edit generators need the image to edit"));
                }
            }
        }
        let t = self.sampling.temperature;
        if t.is_nan() || t < 0.0 {
            return Err(Error::config("generator.sampling.temperature", "must be non-negative"));
        }
        Ok(())
    }
}

/// Shared state for generator calls within one run.
pub struct GenerateContext<'a> {
    pub registry: &'a Registry,
    pub templates: &'a TemplateStore,
    pub meter: &'a CallMeter,
    pub ids: &'a IdSource,
    pub step: usize,
    pub max_in_flight: usize,
    /// Incremented once per LLM proposal request, retries included.
    pub llm_calls: &'a AtomicU64,
}

fn dedup_texts(texts: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    texts
        .into_iter()
        .filter(|t| seen.insert(normalize_text(t)))
        .collect()
}

fn messages(spec: &GeneratorSpec, prompt: String) -> Vec<ChatMessage> {
    let mut msgs = Vec::with_capacity(2);
    if let Some(system) = &spec.system_prompt {
        msgs.push(ChatMessage::system(system.clone()));
    }
    msgs.push(ChatMessage::user(prompt));
    msgs
}

/// Renders the template, asks the chat backend, and parses the numbered
/// reply. Under-production triggers one retry whose lines are added.
/// Returns at most `requested_number` distinct texts.
#[allow(clippy::too_many_arguments)]
pub fn llm_generate_texts(
    chat: &dyn ChatBackend,
    spec: &GeneratorSpec,
    template: &PromptTemplate,
    feedback: &FeedbackBlock,
    requested_number: usize,
    extra_bindings: &HashMap<String, String>,
    meter: &CallMeter,
    calls: &AtomicU64,
) -> Result<Vec<String>> {
    if requested_number == 0 {
        return Err(Error::Contract("requested_number must be at least 1".into()));
    }
    let mut bindings = extra_bindings.clone();
    bindings.insert("descriptions".into(), feedback.to_string());
    bindings.insert("requested_number".into(), requested_number.to_string());
    let prompt = template.render(&bindings)?;
    let msgs = messages(spec, prompt);

    let call = || {
        calls.fetch_add(1, Ordering::Relaxed);
        chat.chat_complete(&msgs, &spec.sampling, meter)
            .map(|raw| parse_numbered_list(&raw))
            .map_err(|e| Error::Generation(e.to_string()))
    };
    let mut texts = dedup_texts(call()?);
    if texts.len() < requested_number {
        match call() {
            Ok(more) => texts = dedup_texts(texts.into_iter().chain(more)),
            Err(e) if !texts.is_empty() => log::warn!("retry after under-production failed: {e}"),
            Err(e) => return Err(e),
        }
    }
    if texts.is_empty() {
        return Err(Error::EmptyGeneration);
    }
    texts.truncate(requested_number);
    Ok(texts)
}

fn template_for<'a>(spec: &GeneratorSpec, templates: &'a TemplateStore) -> Result<&'a PromptTemplate> {
    let name = spec
        .template
        .as_deref()
        .ok_or_else(|| Error::config("generator.template", "missing"))?;
    templates.get(name)
}

fn chat_for(spec: &GeneratorSpec, registry: &Registry) -> Result<std::sync::Arc<dyn ChatBackend>> {
    registry.chat(spec.backend.as_deref().unwrap_or_default())
}

pub fn llm_generate(
    spec: &GeneratorSpec,
    ctx: &GenerateContext<'_>,
    feedback: &FeedbackBlock,
    requested_number: usize,
    extra_bindings: &HashMap<String, String>,
) -> Result<Vec<Candidate>> {
    let chat = chat_for(spec, ctx.registry)?;
    let template = template_for(spec, ctx.templates)?;
    let texts = llm_generate_texts(
        chat.as_ref(),
        spec,
        template,
        feedback,
        requested_number,
        extra_bindings,
        ctx.meter,
        ctx.llm_calls,
    )?;
    let candidates = texts
        .into_iter()
        .map(|t| Candidate::new(ctx.ids.next_id(), t, ctx.step))
        .collect();
    Ok(candidates)
}

/// LLM proposals, each turned into one image by generation or by editing
/// `spec.test_sample`. Failed image calls drop their candidate.
pub fn chained_media_generate(
    spec: &GeneratorSpec,
    ctx: &GenerateContext<'_>,
    feedback: &FeedbackBlock,
    requested_number: usize,
    extra_bindings: &HashMap<String, String>,
) -> Result<Vec<Candidate>> {
    if !matches!(spec.kind, GeneratorKind::LlmThenImage | GeneratorKind::LlmThenEdit) {
        return Err(Error::Contract(format!("{:?} is not a chained generator", spec.kind)));
    }
    let proposed = llm_generate(spec, ctx, feedback, requested_number, extra_bindings)?;
    let texts: Vec<String> = proposed.iter().map(|c| c.text.clone()).collect();
    let media = attach_media(spec, ctx, &texts)?;
    let candidates: Vec<Candidate> = proposed
        .into_iter()
        .zip(media)
        .filter_map(|(c, m)| m.map(|m| c.with_media(m)))
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyGeneration);
    }
    Ok(candidates)
}

/// One image per text; `None` where the backend failed.
pub(crate) fn attach_media(
    spec: &GeneratorSpec,
    ctx: &GenerateContext<'_>,
    texts: &[String],
) -> Result<Vec<Option<MediaHandle>>> {
    let backend = ctx
        .registry
        .image(spec.media_backend.as_deref().unwrap_or_default())?;
    let edit_source = match spec.kind {
        GeneratorKind::LlmThenEdit => Some(
            spec.test_sample
                .as_ref()
                .ok_or_else(|| Error::config("generator.test_sample", "edit generators need the image to edit"))?,
        ),
        _ => None,
    };
    Ok(parallel_map(texts, ctx.max_in_flight, |_, text| {
        let made = match edit_source {
            Some(source) => backend.edit_image(source, text, ctx.meter),
            None => backend.generate_image(text, ctx.meter),
        };
        match made {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("dropping candidate `{text}`: {e}");
                None
            }
        }
    }))
}

/// One chat call per label with `{class_label}` bound; results are
/// concatenated and deduplicated. Failing labels are skipped.
pub fn bootstrap_build_texts(
    chat: &dyn ChatBackend,
    labels: &[String],
    template: &PromptTemplate,
    per_label: usize,
    sampling: &Sampling,
    meter: &CallMeter,
    max_in_flight: usize,
) -> Result<Vec<String>> {
    if per_label == 0 {
        return Err(Error::Contract("per_label must be at least 1".into()));
    }
    let per = parallel_map(labels, max_in_flight, |_, label| -> Result<Vec<String>> {
        let bindings = HashMap::from([
            ("class_label".to_string(), label.clone()),
            ("requested_number".to_string(), per_label.to_string()),
        ]);
        let prompt = template.render(&bindings)?;
        let raw = chat.chat_complete(&[ChatMessage::user(prompt)], sampling, meter)?;
        let mut lines = parse_numbered_list(&raw);
        lines.truncate(per_label);
        Ok(lines)
    });
    let mut all = Vec::new();
    for (label, result) in labels.iter().zip(per) {
        match result {
            Ok(lines) => all.extend(lines),
            Err(e) => log::warn!("bootstrap label `{label}` skipped: {e}"),
        }
    }
    let all = dedup_texts(all);
    if all.is_empty() {
        return Err(Error::Bootstrap("no candidates produced for any label".into()));
    }
    Ok(all)
}

/// One candidate per non-blank line, deduplicated in first-seen order.
pub fn bootstrap_load_texts(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    Ok(dedup_texts(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string),
    ))
}

pub fn bootstrap_load(path: &Path, ids: &IdSource) -> Result<Vec<Candidate>> {
    Ok(bootstrap_load_texts(path)?
        .into_iter()
        .map(|t| Candidate::new(ids.next_id(), t, 0))
        .collect())
}

/// Writes texts one per line, the inverse of [`bootstrap_load_texts`].
pub fn bootstrap_write(path: &Path, texts: &[String]) -> Result<()> {
    let mut body = texts.join("\n");
    body.push('\n');
    std::fs::write(path, body)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mutation {
    Substitute,
    Insert,
    Delete,
}

/// Seeded local edits of feedback texts: each output takes a feedback text
/// (or a vocabulary token when there is no feedback) and substitutes,
/// inserts or deletes one token.
pub fn mock_mutation_generate(
    feedback: &[String],
    requested_number: usize,
    rng_seed: u64,
    vocabulary: &[String],
    max_phrase_tokens: Option<usize>,
) -> Vec<String> {
    assert!(!vocabulary.is_empty(), "mutation vocabulary must not be empty");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(requested_number);
    for _ in 0..requested_number {
        let Some(seed_text) = feedback.choose(&mut rng) else {
            out.push(vocabulary.choose(&mut rng).expect("non-empty").clone());
            continue;
        };
        let mut tokens: Vec<&str> = seed_text.split_whitespace().collect();
        let mut ops = vec![Mutation::Substitute];
        if max_phrase_tokens.is_none_or(|m| tokens.len() < m) {
            ops.push(Mutation::Insert);
        }
        if tokens.len() >= 2 {
            ops.push(Mutation::Delete);
        }
        if tokens.is_empty() {
            ops = vec![Mutation::Insert];
        }
        let word = vocabulary.choose(&mut rng).expect("non-empty").as_str();
        match *ops.choose(&mut rng).expect("non-empty") {
            Mutation::Substitute => {
                let at = rng.random_range(0..tokens.len());
                tokens[at] = word;
            }
            Mutation::Insert => {
                let at = rng.random_range(0..=tokens.len());
                tokens.insert(at, word);
            }
            Mutation::Delete => {
                let at = rng.random_range(0..tokens.len());
                tokens.remove(at);
            }
        }
        out.push(tokens.join(" "));
    }
    out
}

/// Dispatches on the generator kind.
pub fn generate(
    spec: &GeneratorSpec,
    ctx: &GenerateContext<'_>,
    feedback: &FeedbackBlock,
    requested_number: usize,
    extra_bindings: &HashMap<String, String>,
    rng_seed: u64,
) -> Result<Vec<Candidate>> {
    match spec.kind {
        GeneratorKind::Llm => llm_generate(spec, ctx, feedback, requested_number, extra_bindings),
        GeneratorKind::LlmThenImage | GeneratorKind::LlmThenEdit => {
            chained_media_generate(spec, ctx, feedback, requested_number, extra_bindings)
        }
        GeneratorKind::MockMutation => {
            let seeds: Vec<String> = feedback.texts().map(str::to_string).collect();
            let texts = mock_mutation_generate(
                &seeds,
                requested_number,
                rng_seed,
                &spec.vocabulary,
                spec.max_phrase_tokens,
            );
            let candidates: Vec<Candidate> = texts
                .into_iter()
                .map(|t| Candidate::new(ctx.ids.next_id(), t, ctx.step))
                .collect();
            if candidates.is_empty() {
                return Err(Error::EmptyGeneration);
            }
            ctx.llm_calls.fetch_add(1, Ordering::Relaxed);
            Ok(candidates)
        }
    }
}
