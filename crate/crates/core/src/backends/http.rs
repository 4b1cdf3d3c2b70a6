//! Blocking HTTP client for the backend wire protocol.
//!
//! Chat uses the OpenAI-compatible `/v1/chat/completions` shape and text
//! embeddings use `/v1/embeddings`. Media embeddings, image generation and
//! editing, feature extraction and preference scoring use the JSON bodies
//! documented in `docs/protocol.md`. Everything except chat goes through the
//! response cache.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use serde::Deserialize;
use serde_json::{json, Value};

use super::cache::{CacheKey, ResponseCache};
use super::media::{MediaHandle, MediaKind, MediaStore};
use super::{
    Api, BackendEndpoint, CallMeter, ChatBackend, ChatMessage, EmbedBackend, FeatureBackend, ImageBackend,
    PreferenceBackend, Sampling,
};
use crate::error::{Error, Result};
use crate::scorers::FeatureMap;

struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Client for one [`BackendEndpoint`].
pub struct HttpBackend {
    endpoint: BackendEndpoint,
    client: reqwest::blocking::Client,
    auth: Option<String>,
    cache: Arc<ResponseCache>,
    media: Arc<MediaStore>,
    in_flight: InFlight,
    embed_dim: Mutex<Option<usize>>,
}

impl HttpBackend {
    pub fn new(endpoint: BackendEndpoint, cache: Arc<ResponseCache>, media: Arc<MediaStore>) -> Result<Self> {
        let auth = match &endpoint.auth_env_var {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::config(
                    format!("endpoints.{}.auth_env_var", endpoint.name),
                    format!("environment variable `{var}` is not set"),
                )
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| Error::backend(&endpoint.name, None, e.to_string()))?;
        Ok(Self {
            in_flight: InFlight::new(endpoint.max_in_flight),
            endpoint,
            client,
            auth,
            cache,
            media,
            embed_dim: Mutex::new(None),
        })
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    fn err(&self, status: Option<u16>, message: impl Into<String>) -> Error {
        Error::backend(&self.endpoint.name, status, message)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.endpoint.backoff_base_ms as f64 * 2f64.powi(attempt as i32);
        let jitter: f64 = rand::rng().random_range(0.5..=1.0);
        Duration::from_millis((base * jitter) as u64)
    }

    /// POSTs JSON, retrying transient failures up to `max_retries` times.
    fn post_json(&self, path: &str, body: &Value, meter: &CallMeter) -> Result<Value> {
        let url = format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), path);
        let mut attempt = 0;
        loop {
            let outcome = {
                let _permit = self.in_flight.acquire();
                meter.record_upstream(1);
                let mut req = self.client.post(&url).json(body);
                if let Some(token) = &self.auth {
                    req = req.bearer_auth(token);
                }
                req.send()
            };
            let (transient, error) = match outcome {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        return serde_json::from_str(&text)
                            .map_err(|e| self.err(Some(status.as_u16()), format!("malformed response: {e}")));
                    }
                    let transient = status.is_server_error() || status.as_u16() == 429;
                    (transient, self.err(Some(status.as_u16()), format!("{path}: {}", text.trim())))
                }
                Err(e) => (
                    e.is_timeout() || e.is_connect() || e.is_request(),
                    self.err(None, format!("{path}: {e}")),
                ),
            };
            if !transient || attempt >= self.endpoint.max_retries {
                return Err(error);
            }
            log::debug!("{error}; retrying");
            std::thread::sleep(self.backoff(attempt));
            attempt += 1;
        }
    }

    fn media_input(&self, media: &MediaHandle, body: &mut serde_json::Map<String, Value>, field: &str) -> Result<()> {
        if media.is_remote() {
            body.insert(format!("{field}_uri"), json!(media.uri_or_path));
        } else {
            body.insert(format!("{field}_b64"), json!(B64.encode(media.read_bytes()?)));
        }
        Ok(())
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        let mut known = self.embed_dim.lock().unwrap();
        match *known {
            None => {
                *known = Some(dim);
                Ok(())
            }
            Some(d) if d == dim => Ok(()),
            Some(d) => Err(self.err(None, format!("embedding dimension changed from {d} to {dim}"))),
        }
    }

    fn decode_vector(&self, bytes: &[u8]) -> Result<Vec<f64>> {
        let v: Vec<f64> = serde_json::from_slice(bytes)?;
        self.check_dim(v.len())?;
        Ok(v)
    }

    fn image_response(&self, resp: &Value) -> Result<Vec<u8>> {
        let b64 = resp
            .pointer("/data/0/b64_json")
            .and_then(Value::as_str)
            .ok_or_else(|| self.err(None, "response lacks data[0].b64_json"))?;
        B64.decode(b64).map_err(|e| self.err(None, format!("bad base64 image: {e}")))
    }
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct WireFeature {
    layer_id: String,
    channels: usize,
    spatial: usize,
    values: Vec<f64>,
}

impl ChatBackend for HttpBackend {
    fn chat_complete(&self, messages: &[ChatMessage], sampling: &Sampling, meter: &CallMeter) -> Result<String> {
        if messages.is_empty() {
            return Err(Error::Contract("chat request needs at least one message".into()));
        }
        let body = json!({
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": sampling.temperature,
            "max_tokens": sampling.max_tokens,
        });
        let resp = self.post_json("/v1/chat/completions", &body, meter)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| self.err(None, "response lacks choices[0].message.content"))
    }
}

impl EmbedBackend for HttpBackend {
    fn embed_texts(&self, texts: &[String], meter: &CallMeter) -> Result<Vec<Vec<f64>>> {
        let keys: Vec<CacheKey> = texts
            .iter()
            .map(|t| CacheKey::new(Api::Embed, &self.endpoint.model, &json!({ "input": t })))
            .collect();
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        let mut missing: Vec<usize> = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            match self.cache.get(key) {
                Some(bytes) => {
                    meter.record_cache_hit(1);
                    out[i] = Some(self.decode_vector(&bytes)?);
                }
                None => {
                    // Later duplicates of a missing text reuse the first fetch.
                    if !missing.iter().any(|&j| texts[j] == texts[i]) {
                        missing.push(i);
                    }
                }
            }
        }
        for chunk in missing.chunks(self.endpoint.batch_size) {
            let inputs: Vec<&str> = chunk.iter().map(|&i| texts[i].as_str()).collect();
            let body = json!({ "model": self.endpoint.model, "input": inputs });
            let resp = self.post_json("/v1/embeddings", &body, meter)?;
            let mut items: Vec<EmbeddingItem> = serde_json::from_value(resp.get("data").cloned().unwrap_or(Value::Null))
                .map_err(|e| self.err(None, format!("malformed embeddings response: {e}")))?;
            if items.len() != chunk.len() {
                return Err(self.err(
                    None,
                    format!("asked for {} embeddings, got {}", chunk.len(), items.len()),
                ));
            }
            if items.iter().all(|it| it.index.is_some()) {
                items.sort_by_key(|it| it.index);
            }
            for (&i, item) in chunk.iter().zip(items) {
                self.check_dim(item.embedding.len())?;
                self.cache.put(&keys[i], serde_json::to_vec(&item.embedding)?);
                out[i] = Some(item.embedding);
            }
        }
        for i in 0..texts.len() {
            if out[i].is_none() {
                let j = missing.iter().copied().find(|&j| texts[j] == texts[i]).expect("fetched above");
                out[i] = out[j].clone();
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }

    fn embed_media(&self, media: &MediaHandle, frames: Option<u32>, meter: &CallMeter) -> Result<Vec<f64>> {
        let key = CacheKey::new(
            Api::Embed,
            &self.endpoint.model,
            &json!({ "kind": media.kind, "content_hash": media.content_hash, "frames": frames }),
        );
        let (bytes, hit) = self.cache.get_or_compute(&key, || {
            let mut body = serde_json::Map::new();
            body.insert("model".into(), json!(self.endpoint.model));
            body.insert("kind".into(), json!(media.kind));
            if let Some(f) = frames {
                body.insert("frames".into(), json!(f));
            }
            self.media_input(media, &mut body, "input")?;
            let resp = self.post_json("/v1/embeddings", &Value::Object(body), meter)?;
            let v = resp
                .pointer("/data/0/embedding")
                .cloned()
                .ok_or_else(|| self.err(None, "response lacks data[0].embedding"))?;
            let v: Vec<f64> = serde_json::from_value(v)?;
            Ok::<_, Error>(serde_json::to_vec(&v)?)
        })?;
        if hit {
            meter.record_cache_hit(1);
        }
        self.decode_vector(&bytes)
    }
}

impl ImageBackend for HttpBackend {
    fn generate_image(&self, prompt: &str, meter: &CallMeter) -> Result<MediaHandle> {
        if prompt.trim().is_empty() {
            return Err(Error::Contract("image prompt is empty".into()));
        }
        let key = CacheKey::new(Api::ImageGen, &self.endpoint.model, &json!({ "prompt": prompt }));
        let (bytes, hit) = self.cache.get_or_compute(&key, || {
            let body = json!({
                "model": self.endpoint.model,
                "prompt": prompt,
                "n": 1,
                "response_format": "b64_json",
            });
            let resp = self.post_json("/v1/images/generations", &body, meter)?;
            self.image_response(&resp)
        })?;
        if hit {
            meter.record_cache_hit(1);
        }
        self.media.persist(MediaKind::Image, &bytes)
    }

    fn edit_image(&self, image: &MediaHandle, instruction: &str, meter: &CallMeter) -> Result<MediaHandle> {
        if instruction.trim().is_empty() {
            return Err(Error::Contract("edit instruction is empty".into()));
        }
        let key = CacheKey::new(
            Api::ImageEdit,
            &self.endpoint.model,
            &json!({ "image": image.content_hash, "instruction": instruction }),
        );
        let (bytes, hit) = self.cache.get_or_compute(&key, || {
            let mut body = serde_json::Map::new();
            body.insert("model".into(), json!(self.endpoint.model));
            body.insert("prompt".into(), json!(instruction));
            body.insert("response_format".into(), json!("b64_json"));
            self.media_input(image, &mut body, "image")?;
            let resp = self.post_json("/v1/images/edits", &Value::Object(body), meter)?;
            self.image_response(&resp)
        })?;
        if hit {
            meter.record_cache_hit(1);
        }
        self.media.persist(MediaKind::Image, &bytes)
    }
}

impl FeatureBackend for HttpBackend {
    fn extract_features(&self, image: &MediaHandle, layer_ids: &[String], meter: &CallMeter) -> Result<Vec<FeatureMap>> {
        if layer_ids.is_empty() {
            return Err(Error::Contract("feature request needs at least one layer".into()));
        }
        let key = CacheKey::new(
            Api::Features,
            &self.endpoint.model,
            &json!({ "image": image.content_hash, "layers": layer_ids }),
        );
        let parse = |bytes: &[u8]| -> Result<Vec<FeatureMap>> {
            let resp: Value = serde_json::from_slice(bytes)?;
            let wire: Vec<WireFeature> =
                serde_json::from_value(resp.get("features").cloned().unwrap_or(Value::Null))
                    .map_err(|e| self.err(None, format!("malformed features response: {e}")))?;
            layer_ids
                .iter()
                .map(|id| {
                    let w = wire
                        .iter()
                        .find(|w| &w.layer_id == id)
                        .ok_or_else(|| self.err(None, format!("layer `{id}` missing from response")))?;
                    FeatureMap::new(w.layer_id.clone(), w.channels, w.spatial, w.values.clone())
                        .map_err(|e| self.err(None, format!("layer `{id}`: {e}")))
                })
                .collect()
        };
        if let Some(bytes) = self.cache.get(&key) {
            meter.record_cache_hit(1);
            return parse(&bytes);
        }
        let mut body = serde_json::Map::new();
        body.insert("model".into(), json!(self.endpoint.model));
        body.insert("layers".into(), json!(layer_ids));
        self.media_input(image, &mut body, "image")?;
        let resp = self.post_json("/v1/features", &Value::Object(body), meter)?;
        let bytes = serde_json::to_vec(&resp)?;
        let maps = parse(&bytes)?;
        self.cache.put(&key, bytes);
        Ok(maps)
    }
}

impl PreferenceBackend for HttpBackend {
    fn preference_scores(&self, prompt: &str, images: &[MediaHandle], meter: &CallMeter) -> Result<Vec<f64>> {
        let keys: Vec<CacheKey> = images
            .iter()
            .map(|m| {
                CacheKey::new(
                    Api::Preference,
                    &self.endpoint.model,
                    &json!({ "prompt": prompt, "image": m.content_hash }),
                )
            })
            .collect();
        let mut out: Vec<Option<f64>> = vec![None; images.len()];
        let mut missing = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            match self.cache.get(key) {
                Some(bytes) => {
                    meter.record_cache_hit(1);
                    out[i] = Some(serde_json::from_slice(&bytes)?);
                }
                None => missing.push(i),
            }
        }
        if !missing.is_empty() {
            let encoded = missing
                .iter()
                .map(|&i| Ok(B64.encode(images[i].read_bytes()?)))
                .collect::<Result<Vec<String>>>()?;
            let body = json!({ "model": self.endpoint.model, "prompt": prompt, "images_b64": encoded });
            let resp = self.post_json("/v1/preference", &body, meter)?;
            let scores: Vec<f64> = serde_json::from_value(resp.get("scores").cloned().unwrap_or(Value::Null))
                .map_err(|e| self.err(None, format!("malformed preference response: {e}")))?;
            if scores.len() != missing.len() {
                return Err(self.err(
                    None,
                    format!("asked for {} preference scores, got {}", missing.len(), scores.len()),
                ));
            }
            for (&i, s) in missing.iter().zip(scores) {
                self.cache.put(&keys[i], serde_json::to_vec(&s)?);
                out[i] = Some(s);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}
