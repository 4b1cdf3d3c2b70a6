//! Model access: wire clients, the response cache, media handles, and a
//! scriptable mock server speaking the same HTTP protocol.
//!
//! Every model the loop talks to sits behind one of the traits below. The
//! HTTP client in [`http`] implements all of them for a configured
//! [`BackendEndpoint`]; tests and offline runs register in-process
//! implementations on a [`Registry`] instead.

pub mod cache;
pub mod http;
pub mod media;
pub mod mock;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cache::{CacheKey, ResponseCache};
pub use http::HttpBackend;
pub use media::{ContentHash, MediaHandle, MediaKind, MediaStore};
pub use mock::{MockResponder, MockScript, MockServer};

use crate::error::{Error, Result};
use crate::scorers::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Api {
    Chat,
    Embed,
    ImageGen,
    ImageEdit,
    Features,
    Preference,
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_in_flight() -> usize {
    8
}
fn default_batch_size() -> usize {
    64
}

/// A named remote model service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub name: String,
    pub base_url: String,
    pub api: Api,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env_var: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Texts per embedding request.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

impl BackendEndpoint {
    pub fn new(name: impl Into<String>, base_url: impl Into<String>, api: Api, model: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            base_url: base_url.into(),
            api,
            model: model.into(),
            auth_env_var: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_ms(),
            max_in_flight: default_in_flight(),
            batch_size: default_batch_size(),
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let url = reqwest::Url::parse(&self.base_url)
            .map_err(|e| Error::config(format!("{field}.base_url"), e.to_string()))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(Error::config(format!("{field}.base_url"), "scheme must be http or https"));
        }
        if self.max_in_flight == 0 {
            return Err(Error::config(format!("{field}.max_in_flight"), "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(format!("{field}.batch_size"), "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }
}

/// Decoding parameters for chat calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_tokens: 2048,
        }
    }
}

/// Counts upstream requests and cache hits made on behalf of one role.
#[derive(Debug, Default)]
pub struct CallMeter {
    upstream: AtomicU64,
    cache_hits: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeterReading {
    pub upstream: u64,
    pub cache_hits: u64,
}

impl MeterReading {
    pub fn since(self, earlier: MeterReading) -> MeterReading {
        MeterReading {
            upstream: self.upstream - earlier.upstream,
            cache_hits: self.cache_hits - earlier.cache_hits,
        }
    }
}

impl CallMeter {
    pub fn record_upstream(&self, n: u64) {
        self.upstream.fetch_add(n, Ordering::Relaxed);
    }

    pub fn record_cache_hit(&self, n: u64) {
        self.cache_hits.fetch_add(n, Ordering::Relaxed);
    }

    pub fn reading(&self) -> MeterReading {
        MeterReading {
            upstream: self.upstream.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    /// Returns the first choice's message content.
    fn chat_complete(&self, messages: &[ChatMessage], sampling: &Sampling, meter: &CallMeter) -> Result<String>;
}

pub trait EmbedBackend: Send + Sync {
    /// One vector per text, order-aligned.
    fn embed_texts(&self, texts: &[String], meter: &CallMeter) -> Result<Vec<Vec<f64>>>;

    /// `frames` is a sampling hint for video.
    fn embed_media(&self, media: &MediaHandle, frames: Option<u32>, meter: &CallMeter) -> Result<Vec<f64>>;
}

pub trait ImageBackend: Send + Sync {
    fn generate_image(&self, prompt: &str, meter: &CallMeter) -> Result<MediaHandle>;

    fn edit_image(&self, image: &MediaHandle, instruction: &str, meter: &CallMeter) -> Result<MediaHandle>;
}

pub trait FeatureBackend: Send + Sync {
    /// One map per requested layer, order-aligned.
    fn extract_features(&self, image: &MediaHandle, layer_ids: &[String], meter: &CallMeter) -> Result<Vec<FeatureMap>>;
}

pub trait PreferenceBackend: Send + Sync {
    /// Preference of each image for `prompt`, order-aligned.
    fn preference_scores(&self, prompt: &str, images: &[MediaHandle], meter: &CallMeter) -> Result<Vec<f64>>;
}

/// Backends by endpoint name, one table per API.
#[derive(Clone, Default)]
pub struct Registry {
    chat: HashMap<String, Arc<dyn ChatBackend>>,
    embed: HashMap<String, Arc<dyn EmbedBackend>>,
    image: HashMap<String, Arc<dyn ImageBackend>>,
    features: HashMap<String, Arc<dyn FeatureBackend>>,
    preference: HashMap<String, Arc<dyn PreferenceBackend>>,
}

fn lookup<T: ?Sized>(table: &HashMap<String, Arc<T>>, api: &str, name: &str) -> Result<Arc<T>> {
    table
        .get(name)
        .cloned()
        .ok_or_else(|| Error::config("endpoints", format!("no {api} endpoint named `{name}`")))
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds HTTP clients for every endpoint. Image endpoints persist into `media`.
    pub fn from_endpoints(
        endpoints: &[BackendEndpoint],
        cache: Arc<ResponseCache>,
        media: Arc<MediaStore>,
    ) -> Result<Self> {
        let mut registry = Self::new();
        for (i, ep) in endpoints.iter().enumerate() {
            ep.validate(&format!("endpoints[{i}]"))?;
            let client = Arc::new(HttpBackend::new(ep.clone(), cache.clone(), media.clone())?);
            let name = ep.name.clone();
            match ep.api {
                Api::Chat => registry.chat.insert(name, client).map(|_| ()),
                Api::Embed => registry.embed.insert(name, client).map(|_| ()),
                Api::ImageGen | Api::ImageEdit => registry.image.insert(name, client).map(|_| ()),
                Api::Features => registry.features.insert(name, client).map(|_| ()),
                Api::Preference => registry.preference.insert(name, client).map(|_| ()),
            };
        }
        Ok(registry)
    }

    pub fn with_chat(mut self, name: &str, backend: Arc<dyn ChatBackend>) -> Self {
        self.chat.insert(name.to_string(), backend);
        self
    }

    pub fn with_embed(mut self, name: &str, backend: Arc<dyn EmbedBackend>) -> Self {
        self.embed.insert(name.to_string(), backend);
        self
    }

    pub fn with_image(mut self, name: &str, backend: Arc<dyn ImageBackend>) -> Self {
        self.image.insert(name.to_string(), backend);
        self
    }

    pub fn with_features(mut self, name: &str, backend: Arc<dyn FeatureBackend>) -> Self {
        self.features.insert(name.to_string(), backend);
        self
    }

    pub fn with_preference(mut self, name: &str, backend: Arc<dyn PreferenceBackend>) -> Self {
        self.preference.insert(name.to_string(), backend);
        self
    }

    pub fn chat(&self, name: &str) -> Result<Arc<dyn ChatBackend>> {
        lookup(&self.chat, "chat", name)
    }

    pub fn embed(&self, name: &str) -> Result<Arc<dyn EmbedBackend>> {
        lookup(&self.embed, "embed", name)
    }

    pub fn image(&self, name: &str) -> Result<Arc<dyn ImageBackend>> {
        lookup(&self.image, "image", name)
    }

    pub fn features(&self, name: &str) -> Result<Arc<dyn FeatureBackend>> {
        lookup(&self.features, "features", name)
    }

    pub fn preference(&self, name: &str) -> Result<Arc<dyn PreferenceBackend>> {
        lookup(&self.preference, "preference", name)
    }
}

/// Runs `f` over `items` on at most `limit` threads, keeping input order.
pub(crate) fn parallel_map<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = limit.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicU64::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed) as usize;
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every index visited")).collect()
}
