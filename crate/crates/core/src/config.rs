//! Task configuration files.
//!
//! A config is one JSON document. Hyperparameters left out resolve to the
//! defaults for the task kind; media and bootstrap paths are relative to the
//! config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backends::{BackendEndpoint, MediaHandle, MediaKind, Sampling};
use crate::candidate::Direction;
use crate::error::{Error, Result};
use crate::generators::{GeneratorKind, GeneratorSpec};
use crate::run::{
    RunConfig, DEFAULT_CAPTION_STEPS, DEFAULT_MIN_POOL_CAPACITY, DEFAULT_REQUESTED_NUMBER, DEFAULT_T2I_STEPS,
    DEFAULT_TOP_K,
};
use crate::scorers::{default_objectives, LayerSpec, ScorerKind, ScorerSpec};
use crate::solver::{ArithmeticSpec, Bootstrap, CombineSpec, StageSpec, TaskKind, TaskSpec};

pub const DEFAULT_CACHE_DIR: &str = ".genscore-cache";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requested_number: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_capacity: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorFile {
    pub kind: GeneratorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<Sampling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocabulary: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_phrase_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerFile {
    pub kind: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_target: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_target: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageFile {
    pub generator: GeneratorFile,
    pub scorer: ScorerFile,
    #[serde(default)]
    pub run: RunFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<Bootstrap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombineFile {
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<Sampling>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArithmeticFile {
    pub audio_sample: PathBuf,
    pub image_stage: StageFile,
    pub audio_stage: StageFile,
    pub combine: CombineFile,
}

/// The on-disk config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub endpoints: Vec<BackendEndpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_dir: Option<PathBuf>,
    /// Extra templates (`<name>.txt`) that override or add to the built-ins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    pub generator: GeneratorFile,
    pub scorer: ScorerFile,
    #[serde(default)]
    pub run: RunFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_sample: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<Bootstrap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arithmetic: Option<ArithmeticFile>,
}

/// A config with defaults filled in, paths resolved and media loaded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub task: TaskSpec,
    pub endpoints: Vec<BackendEndpoint>,
    pub cache_dir: PathBuf,
    pub media_dir: PathBuf,
    pub templates_dir: Option<PathBuf>,
    pub max_in_flight: usize,
}

fn json_error(e: serde_json::Error, path: &serde_path_to_error::Path) -> Error {
    let field = path.to_string();
    let field = if field == "." { "<root>".to_string() } else { field };
    Error::config(field, e.to_string())
}

impl ConfigFile {
    pub fn from_value(value: Value) -> Result<Self> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().clone();
            json_error(e.into_inner(), &path)
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Resolves against `base_dir`, the directory relative paths start from.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedConfig> {
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        let media = |field: &str, kind: MediaKind, p: &Path| {
            MediaHandle::load(kind, at(p)).map_err(|e| Error::config(field, e.to_string()))
        };

        let kind = self.task;
        let test_kind = match kind {
            TaskKind::CaptionVideo => MediaKind::Video,
            TaskKind::CaptionAudio => MediaKind::Audio,
            _ => MediaKind::Image,
        };
        let test_sample = self
            .test_sample
            .as_deref()
            .map(|p| media("test_sample", test_kind, p))
            .transpose()?;

        let main_kind = match kind {
            TaskKind::CrossModalArithmetic => TaskKind::T2iEnhance,
            k => k,
        };
        let mut generator = resolve_generator(&self.generator, main_kind);
        if generator.kind == GeneratorKind::LlmThenEdit {
            generator.test_sample = test_sample.clone();
        }
        let scorer = resolve_scorer(&self.scorer, "scorer", &media)?;
        let run = resolve_run(&self.run, main_kind);
        let bootstrap = self.bootstrap.as_ref().map(|b| resolve_bootstrap(b, &at));

        let arithmetic = match &self.arithmetic {
            None => None,
            Some(a) => {
                let stage = |field: &str, s: &StageFile, stage_kind: TaskKind| -> Result<StageSpec> {
                    Ok(StageSpec {
                        generator: resolve_generator(&s.generator, stage_kind),
                        scorer: resolve_scorer(&s.scorer, &format!("arithmetic.{field}.scorer"), &media)?,
                        run: resolve_run(&s.run, stage_kind),
                        bootstrap: s.bootstrap.as_ref().map(|b| resolve_bootstrap(b, &at)),
                    })
                };
                Some(ArithmeticSpec {
                    audio_sample: media("arithmetic.audio_sample", MediaKind::Audio, &a.audio_sample)?,
                    image_stage: stage("image_stage", &a.image_stage, TaskKind::CaptionImage)?,
                    audio_stage: stage("audio_stage", &a.audio_stage, TaskKind::CaptionAudio)?,
                    combine: CombineSpec {
                        backend: a.combine.backend.clone(),
                        template: a
                            .combine
                            .template
                            .clone()
                            .unwrap_or_else(|| "cross_modal_combine".into()),
                        sampling: a.combine.sampling.unwrap_or_default(),
                    },
                })
            }
        };

        let task = TaskSpec {
            kind,
            generator,
            scorer,
            run,
            test_sample,
            init_description: self.init_description.clone(),
            bootstrap,
            arithmetic,
        };
        task.validate()?;
        for (field, b) in [("bootstrap", &task.bootstrap)]
            .into_iter()
            .chain(task.arithmetic.iter().flat_map(|a| {
                [
                    ("arithmetic.image_stage.bootstrap", &a.image_stage.bootstrap),
                    ("arithmetic.audio_stage.bootstrap", &a.audio_stage.bootstrap),
                ]
            }))
        {
            if let Some(Bootstrap::File { path, .. }) = b {
                if !path.is_file() {
                    return Err(Error::config(
                        format!("{field}.path"),
                        format!("{} is not a readable file", path.display()),
                    ));
                }
            }
        }
        for (i, ep) in self.endpoints.iter().enumerate() {
            ep.validate(&format!("endpoints[{i}]"))?;
        }
        if self.max_in_flight == Some(0) {
            return Err(Error::config("max_in_flight", "must be at least 1"));
        }
        let cache_dir = at(self.cache_dir.as_deref().unwrap_or(Path::new(DEFAULT_CACHE_DIR)));
        let media_dir = self.media_dir.as_deref().map(at).unwrap_or_else(|| cache_dir.join("media"));
        Ok(ResolvedConfig {
            task,
            endpoints: self.endpoints.clone(),
            cache_dir,
            media_dir,
            templates_dir: self.templates_dir.as_deref().map(at),
            max_in_flight: self.max_in_flight.unwrap_or(8),
        })
    }
}

fn default_template(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::CaptionImage => "caption_image",
        TaskKind::CaptionVideo => "caption_video",
        TaskKind::CaptionAudio => "caption_audio",
        TaskKind::T2iEnhance | TaskKind::CrossModalArithmetic => "t2i_enhance",
        TaskKind::StyleTransfer => "style_transfer",
    }
}

fn resolve_generator(g: &GeneratorFile, kind: TaskKind) -> GeneratorSpec {
    let llm = g.kind != GeneratorKind::MockMutation;
    GeneratorSpec {
        kind: g.kind,
        template: g.template.clone().or_else(|| llm.then(|| default_template(kind).to_string())),
        backend: g.backend.clone(),
        media_backend: g.media_backend.clone(),
        sampling: g.sampling.unwrap_or_default(),
        test_sample: None,
        system_prompt: g.system_prompt.clone(),
        vocabulary: g.vocabulary.clone(),
        max_phrase_tokens: g.max_phrase_tokens,
    }
}

fn resolve_scorer(
    s: &ScorerFile,
    field: &str,
    media: &dyn Fn(&str, MediaKind, &Path) -> Result<MediaHandle>,
) -> Result<ScorerSpec> {
    let objective_names = s
        .objective_names
        .clone()
        .unwrap_or_else(|| default_objectives(s.kind).iter().map(|n| n.to_string()).collect());
    let weights = s.weights.clone().unwrap_or_else(|| vec![1.0; objective_names.len()]);
    let target = |name: &str, p: &Option<PathBuf>| {
        p.as_deref()
            .map(|p| media(&format!("{field}.{name}"), MediaKind::Image, p))
            .transpose()
    };
    let default_direction = match s.kind {
        ScorerKind::GramStyle => Direction::Minimize,
        _ => Direction::Maximize,
    };
    Ok(ScorerSpec {
        kind: s.kind,
        backend: s.backend.clone(),
        direction: s.direction.unwrap_or(default_direction),
        objective_names,
        weights,
        style_target: target("style_target", &s.style_target)?,
        content_target: target("content_target", &s.content_target)?,
        layers: s.layers.clone(),
        reference: s.reference.clone(),
        frames: s.frames,
    })
}

/// Fills unset hyperparameters: K=50 and 50 proposals per step everywhere,
/// 20 steps for prompt rewriting and 10 otherwise.
pub fn resolve_run(r: &RunFile, kind: TaskKind) -> RunConfig {
    let top_k = r.top_k.unwrap_or(DEFAULT_TOP_K);
    let default_steps = match kind {
        TaskKind::T2iEnhance | TaskKind::CrossModalArithmetic => DEFAULT_T2I_STEPS,
        _ => DEFAULT_CAPTION_STEPS,
    };
    RunConfig {
        top_k,
        max_steps: r.max_steps.unwrap_or(default_steps),
        epsilon: r.epsilon.unwrap_or(0.0),
        requested_number: r.requested_number.unwrap_or(DEFAULT_REQUESTED_NUMBER),
        convergence_threshold: r.convergence_threshold,
        seed: r.seed.unwrap_or(0),
        pool_capacity: Some(r.pool_capacity.unwrap_or(DEFAULT_MIN_POOL_CAPACITY.max(top_k))),
    }
}

fn resolve_bootstrap(b: &Bootstrap, at: &dyn Fn(&Path) -> PathBuf) -> Bootstrap {
    match b {
        Bootstrap::File { path, limit } => Bootstrap::File {
            path: at(path),
            limit: *limit,
        },
        other => other.clone(),
    }
}

/// Applies `a.b.c=value` to a JSON document. The value is parsed as JSON
/// when possible and kept as a string otherwise; missing objects on the
/// path are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(key, "override key has an empty segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = doc;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        slot = match slot {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| Error::config(key, format!("`{seg}` is not an array index")))?;
                let len = items.len();
                let item = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::config(key, format!("index {idx} out of range ({len} items)")))?;
                if last {
                    *item = value;
                    return Ok(());
                }
                item
            }
            _ => return Err(Error::config(key, format!("`{seg}` is inside a non-object value"))),
        };
    }
    unreachable!("loop returns on the last segment")
}

/// Reads a config file, applies overrides in order, and resolves it.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<(ConfigFile, ResolvedConfig)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<config>", format!("cannot read {}: {e}", path.display())))?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| Error::config("<root>", e.to_string()))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let file = ConfigFile::from_value(doc)?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let resolved = file.resolve(base)?;
    Ok((file, resolved))
}
