//! Scriptable stand-in for every backend API, served over real HTTP.
//!
//! A [`MockScript`] is a JSON document describing canned behaviour per API.
//! [`MockResponder`] turns one request into one reply and logs it;
//! [`MockServer`] puts the responder behind an axum listener.
//!
//! ```json
//! {
//!   "chat": [{ "contains": "*", "responses": ["1. a cat\n2. a dog"] }],
//!   "embeddings": {
//!     "vocabulary": ["a", "cat", "dog"],
//!     "media": { "image": "a cat" }
//!   },
//!   "features": { "layers": ["conv1_1", "conv4_2"], "channels": 2, "spatial": 4 },
//!   "preference": { "mode": "constant", "value": 0.21 },
//!   "faults": [{ "path": "/v1/chat/completions", "status": 500, "count": 2 }]
//! }
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::media::ContentHash;
use crate::candidate::normalize_text;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatRule {
    /// Substring of the concatenated message contents; `*` matches anything.
    pub contains: String,
    /// Cycled through on successive matches.
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedScript {
    /// Text embeddings are token counts over this vocabulary.
    pub vocabulary: Vec<String>,
    /// Exact vectors for specific (normalized) texts.
    pub vectors: BTreeMap<String, Vec<f64>>,
    /// Media of each kind embeds like this text.
    pub media: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    #[default]
    Constant,
    /// Pseudo-random values seeded by the image bytes.
    Hash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureScript {
    pub layers: Vec<String>,
    pub channels: usize,
    pub spatial: usize,
    pub mode: FeatureMode,
    pub value: f64,
}

impl Default for FeatureScript {
    fn default() -> Self {
        Self {
            layers: Vec::new(),
            channels: 2,
            spatial: 4,
            mode: FeatureMode::Constant,
            value: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PreferenceScript {
    Constant { value: f64 },
    /// `base + per_char * len(prompt behind the mock image)`.
    Length { base: f64, per_char: f64 },
}

impl Default for PreferenceScript {
    fn default() -> Self {
        PreferenceScript::Constant { value: 0.2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditRule {
    pub contains: String,
    /// Image bytes returned when the instruction matches.
    pub b64: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub path: String,
    /// Reply with this status instead of the scripted response.
    #[serde(default)]
    pub status: Option<u16>,
    #[serde(default)]
    pub delay_ms: u64,
    /// Number of requests affected.
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub chat: Vec<ChatRule>,
    pub embeddings: EmbedScript,
    pub edits: Vec<EditRule>,
    pub features: FeatureScript,
    pub preference: PreferenceScript,
    pub faults: Vec<Fault>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Bytes the mock returns for a generated image.
pub fn mock_image_bytes(prompt: &str) -> Vec<u8> {
    format!("mock-image:{prompt}").into_bytes()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRequest {
    pub path: String,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockReply {
    pub status: u16,
    pub body: Value,
    pub delay: Duration,
}

impl MockReply {
    fn ok(body: Value) -> Self {
        Self {
            status: 200,
            body,
            delay: Duration::ZERO,
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
            delay: Duration::ZERO,
        }
    }
}

/// Request → reply logic for a script, with a request log.
pub struct MockResponder {
    script: MockScript,
    chat_cursor: Mutex<Vec<usize>>,
    fault_hits: Mutex<Vec<usize>>,
    log: Mutex<Vec<LoggedRequest>>,
    log_file: Mutex<Option<File>>,
}

impl MockResponder {
    pub fn new(script: MockScript) -> Self {
        Self {
            chat_cursor: Mutex::new(vec![0; script.chat.len()]),
            fault_hits: Mutex::new(vec![0; script.faults.len()]),
            script,
            log: Mutex::new(Vec::new()),
            log_file: Mutex::new(None),
        }
    }

    /// Also append every request as a JSON line to `path`.
    pub fn log_to(&self, path: &Path) -> Result<()> {
        let file = File::options().create(true).append(true).open(path)?;
        *self.log_file.lock().unwrap() = Some(file);
        Ok(())
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn count(&self, path: &str) -> usize {
        self.log.lock().unwrap().iter().filter(|r| r.path == path).count()
    }

    pub fn handle(&self, path: &str, raw_body: &[u8]) -> MockReply {
        let body: Value = serde_json::from_slice(raw_body).unwrap_or(Value::Null);
        self.record(path, &body);

        let (fault_status, delay) = self.fault_for(path).unwrap_or((None, Duration::ZERO));
        let mut reply = match fault_status {
            Some(status) => MockReply::error(status, "injected fault"),
            None => self.dispatch(path, &body),
        };
        reply.delay = delay;
        reply
    }

    fn dispatch(&self, path: &str, body: &Value) -> MockReply {
        if body.is_null() {
            return MockReply::error(400, "request body must be JSON");
        }
        match path {
            "/v1/chat/completions" => self.chat(body),
            "/v1/embeddings" => self.embeddings(body),
            "/v1/images/generations" => self.generate(body),
            "/v1/images/edits" => self.edit(body),
            "/v1/features" => self.features(body),
            "/v1/preference" => self.preference(body),
            _ => MockReply::error(404, format!("no mock route for {path}")),
        }
    }

    fn record(&self, path: &str, body: &Value) {
        let entry = LoggedRequest {
            path: path.to_string(),
            body: body.clone(),
        };
        if let Some(file) = self.log_file.lock().unwrap().as_mut() {
            let line = json!({ "path": path, "body": elide_long_strings(body) });
            let _ = writeln!(file, "{line}");
        }
        self.log.lock().unwrap().push(entry);
    }

    fn fault_for(&self, path: &str) -> Option<(Option<u16>, Duration)> {
        let mut hits = self.fault_hits.lock().unwrap();
        for (i, fault) in self.script.faults.iter().enumerate() {
            if fault.path == path && hits[i] < fault.count {
                hits[i] += 1;
                return Some((fault.status, Duration::from_millis(fault.delay_ms)));
            }
        }
        None
    }

    fn chat(&self, body: &Value) -> MockReply {
        let prompt: String = body
            .get("messages")
            .and_then(Value::as_array)
            .map(|ms| {
                ms.iter()
                    .filter_map(|m| m.get("content").and_then(Value::as_str))
                    .collect::<Vec<_>>()
                    .join("\n")
            })
            .unwrap_or_default();
        let mut cursor = self.chat_cursor.lock().unwrap();
        for (i, rule) in self.script.chat.iter().enumerate() {
            if rule.responses.is_empty() {
                continue;
            }
            if rule.contains == "*" || prompt.contains(&rule.contains) {
                let content = &rule.responses[cursor[i] % rule.responses.len()];
                cursor[i] += 1;
                return MockReply::ok(json!({
                    "object": "chat.completion",
                    "choices": [{
                        "index": 0,
                        "message": { "role": "assistant", "content": content },
                        "finish_reason": "stop",
                    }],
                }));
            }
        }
        MockReply::error(400, "no chat rule matches the prompt")
    }

    fn embed_text(&self, text: &str) -> Vec<f64> {
        let script = &self.script.embeddings;
        let key = normalize_text(text);
        if let Some(v) = script.vectors.get(&key) {
            return v.clone();
        }
        let mut v = vec![0.0; script.vocabulary.len()];
        for token in key.split_whitespace() {
            if let Some(i) = script.vocabulary.iter().position(|w| w == token) {
                v[i] += 1.0;
            }
        }
        v
    }

    fn embeddings(&self, body: &Value) -> MockReply {
        if let Some(kind) = body.get("kind").and_then(Value::as_str) {
            if body.get("input_b64").is_none() && body.get("input_uri").is_none() {
                return MockReply::error(400, "media embedding needs input_b64 or input_uri");
            }
            let Some(target) = self.script.embeddings.media.get(kind) else {
                return MockReply::error(400, format!("no media embedding scripted for kind `{kind}`"));
            };
            let v = self.embed_text(target);
            return MockReply::ok(json!({ "data": [{ "index": 0, "embedding": v }] }));
        }
        let inputs: Vec<String> = match body.get("input") {
            Some(Value::String(s)) => vec![s.clone()],
            Some(Value::Array(items)) => items.iter().filter_map(Value::as_str).map(str::to_string).collect(),
            _ => return MockReply::error(400, "embeddings request lacks input"),
        };
        let data: Vec<Value> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| json!({ "index": i, "embedding": self.embed_text(t) }))
            .collect();
        MockReply::ok(json!({ "data": data }))
    }

    fn generate(&self, body: &Value) -> MockReply {
        let Some(prompt) = body.get("prompt").and_then(Value::as_str) else {
            return MockReply::error(400, "image request lacks prompt");
        };
        MockReply::ok(json!({ "data": [{ "b64_json": B64.encode(mock_image_bytes(prompt)) }] }))
    }

    fn edit(&self, body: &Value) -> MockReply {
        let Some(instruction) = body.get("prompt").and_then(Value::as_str) else {
            return MockReply::error(400, "edit request lacks prompt");
        };
        let Some(image) = body.get("image_b64").and_then(Value::as_str) else {
            return MockReply::error(400, "edit request lacks image_b64");
        };
        for rule in &self.script.edits {
            if rule.contains == "*" || instruction.contains(&rule.contains) {
                return MockReply::ok(json!({ "data": [{ "b64_json": rule.b64 }] }));
            }
        }
        let source = B64.decode(image).unwrap_or_default();
        let tag = &ContentHash::of(&source).to_hex()[..16];
        let bytes = format!("mock-edit:{tag}:{instruction}").into_bytes();
        MockReply::ok(json!({ "data": [{ "b64_json": B64.encode(bytes) }] }))
    }

    fn features(&self, body: &Value) -> MockReply {
        let script = &self.script.features;
        let layers: Vec<&str> = body
            .get("layers")
            .and_then(Value::as_array)
            .map(|ls| ls.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let image = body
            .get("image_b64")
            .and_then(Value::as_str)
            .and_then(|s| B64.decode(s).ok())
            .unwrap_or_default();
        let mut maps = Vec::new();
        for layer in layers {
            if !script.layers.iter().any(|l| l == layer) {
                return MockReply::error(400, format!("unknown layer `{layer}`"));
            }
            let n = script.channels * script.spatial;
            let values: Vec<f64> = match script.mode {
                FeatureMode::Constant => vec![script.value; n],
                FeatureMode::Hash => {
                    let mut seed_material = image.clone();
                    seed_material.extend_from_slice(layer.as_bytes());
                    let h = ContentHash::of(&seed_material).0;
                    let mut rng = ChaCha8Rng::from_seed(h);
                    (0..n).map(|_| rng.random::<f64>()).collect()
                }
            };
            maps.push(json!({
                "layer_id": layer,
                "channels": script.channels,
                "spatial": script.spatial,
                "values": values,
            }));
        }
        MockReply::ok(json!({ "features": maps }))
    }

    fn preference(&self, body: &Value) -> MockReply {
        let Some(images) = body.get("images_b64").and_then(Value::as_array) else {
            return MockReply::error(400, "preference request lacks images_b64");
        };
        if body.get("prompt").and_then(Value::as_str).is_none() {
            return MockReply::error(400, "preference request lacks prompt");
        }
        let scores: Vec<f64> = images
            .iter()
            .map(|img| {
                let bytes = img.as_str().and_then(|s| B64.decode(s).ok()).unwrap_or_default();
                match &self.script.preference {
                    PreferenceScript::Constant { value } => *value,
                    PreferenceScript::Length { base, per_char } => {
                        let len = bytes
                            .strip_prefix(b"mock-image:")
                            .map(|p| String::from_utf8_lossy(p).chars().count())
                            .unwrap_or(bytes.len());
                        base + per_char * len as f64
                    }
                }
            })
            .collect();
        MockReply::ok(json!({ "scores": scores }))
    }
}

fn elide_long_strings(v: &Value) -> Value {
    match v {
        Value::String(s) if s.len() > 256 => Value::String(format!("<{} bytes>", s.len())),
        Value::Array(items) => Value::Array(items.iter().map(elide_long_strings).collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), elide_long_strings(v))).collect()),
        other => other.clone(),
    }
}

async fn route(State(responder): State<Arc<MockResponder>>, uri: Uri, body: Bytes) -> Response {
    let reply = responder.handle(uri.path(), &body);
    if !reply.delay.is_zero() {
        tokio::time::sleep(reply.delay).await;
    }
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(reply.body)).into_response()
}

/// A running mock backend. Shuts down on drop.
pub struct MockServer {
    addr: SocketAddr,
    responder: Arc<MockResponder>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `127.0.0.1:port` (0 picks a free port).
    pub fn start(script: MockScript, port: u16) -> Result<Self> {
        Self::start_on(script, SocketAddr::from(([127, 0, 0, 1], port)))
    }

    pub fn start_on(script: MockScript, addr: SocketAddr) -> Result<Self> {
        Self::with_responder(Arc::new(MockResponder::new(script)), addr)
    }

    pub fn with_responder(responder: Arc<MockResponder>, addr: SocketAddr) -> Result<Self> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = Router::new().fallback(route).with_state(responder.clone());
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => {
                        log::error!("mock server listener: {e}");
                        return;
                    }
                };
                let served = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
                if let Err(e) = served {
                    log::error!("mock server stopped: {e}");
                }
            });
        });
        Ok(Self {
            addr,
            responder,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn responder(&self) -> &Arc<MockResponder> {
        &self.responder
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) -> Result<()> {
        if let Some(t) = self.thread.take() {
            t.join().map_err(|_| Error::Contract("mock server thread panicked".into()))?;
        }
        Ok(())
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script() -> MockScript {
        serde_json::from_value(json!({
            "chat": [
                { "contains": "dogs", "responses": ["1. dog"] },
                { "contains": "*", "responses": ["1. a", "1. b"] }
            ],
            "embeddings": { "vocabulary": ["a", "cat"], "media": { "image": "a cat" } },
            "features": { "layers": ["l1"], "channels": 1, "spatial": 3, "mode": "constant", "value": 2.0 },
            "faults": [{ "path": "/v1/preference", "status": 503, "count": 1 }]
        }))
        .unwrap()
    }

    fn chat_body(content: &str) -> Vec<u8> {
        serde_json::to_vec(&json!({ "model": "m", "messages": [{ "role": "user", "content": content }] })).unwrap()
    }

    #[test]
    fn chat_rules_match_and_cycle() {
        let r = MockResponder::new(script());
        let content = |reply: MockReply| reply.body["choices"][0]["message"]["content"].as_str().unwrap().to_string();
        assert_eq!(content(r.handle("/v1/chat/completions", &chat_body("about dogs"))), "1. dog");
        assert_eq!(content(r.handle("/v1/chat/completions", &chat_body("x"))), "1. a");
        assert_eq!(content(r.handle("/v1/chat/completions", &chat_body("x"))), "1. b");
        assert_eq!(r.count("/v1/chat/completions"), 3);
    }

    #[test]
    fn token_basis_embeddings() {
        let r = MockResponder::new(script());
        let body = serde_json::to_vec(&json!({ "model": "m", "input": ["A cat.", "dog"] })).unwrap();
        let reply = r.handle("/v1/embeddings", &body);
        assert_eq!(reply.body["data"][0]["embedding"], json!([1.0, 1.0]));
        assert_eq!(reply.body["data"][1]["embedding"], json!([0.0, 0.0]));

        let media = serde_json::to_vec(&json!({ "model": "m", "kind": "image", "input_b64": "AA==" })).unwrap();
        assert_eq!(r.handle("/v1/embeddings", &media).body["data"][0]["embedding"], json!([1.0, 1.0]));
        let audio = serde_json::to_vec(&json!({ "model": "m", "kind": "audio", "input_b64": "AA==" })).unwrap();
        assert_eq!(r.handle("/v1/embeddings", &audio).status, 400);
    }

    #[test]
    fn unknown_layer_rejected() {
        let r = MockResponder::new(script());
        let body = serde_json::to_vec(&json!({ "model": "m", "image_b64": "AA==", "layers": ["l1", "l9"] })).unwrap();
        let reply = r.handle("/v1/features", &body);
        assert_eq!(reply.status, 400);
        assert!(reply.body["error"].as_str().unwrap().contains("l9"));
    }

    #[test]
    fn faults_apply_then_clear() {
        let r = MockResponder::new(script());
        let body = serde_json::to_vec(&json!({ "model": "m", "prompt": "p", "images_b64": ["AA=="] })).unwrap();
        assert_eq!(r.handle("/v1/preference", &body).status, 503);
        let ok = r.handle("/v1/preference", &body);
        assert_eq!(ok.status, 200);
        assert_eq!(ok.body["scores"], json!([0.2]));
    }
}
