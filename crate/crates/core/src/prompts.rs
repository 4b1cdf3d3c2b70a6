//! Prompt templates, the score feedback block, and numbered-list parsing.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use crate::candidate::Candidate;
use crate::error::{Error, Result};

/// Placeholders a template body may contain.
pub const PLACEHOLDERS: [&str; 6] = [
    "descriptions",
    "requested_number",
    "init_description",
    "image_caption",
    "audio_caption",
    "class_label",
];

const BUILTIN: [(&str, &str); 7] = [
    ("bootstrap_audio", include_str!("../templates/bootstrap_audio.txt")),
    ("caption_image", include_str!("../templates/caption_image.txt")),
    ("caption_video", include_str!("../templates/caption_video.txt")),
    ("caption_audio", include_str!("../templates/caption_audio.txt")),
    ("t2i_enhance", include_str!("../templates/t2i_enhance.txt")),
    ("style_transfer", include_str!("../templates/style_transfer.txt")),
    ("cross_modal_combine", include_str!("../templates/cross_modal_combine.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    /// Parses `body`; any `{identifier}` must be a known placeholder.
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let body = body.into();
        let pieces = split_pieces(&body).map_err(|message| Error::Template {
            template: name.clone(),
            message,
        })?;
        Ok(Self { name, body, pieces })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Placeholders used in the body, in order of first appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut seen = Vec::new();
        for p in &self.pieces {
            if let Piece::Slot(s) = p {
                if !seen.contains(s) {
                    seen.push(*s);
                }
            }
        }
        seen
    }

    pub fn render(&self, bindings: &HashMap<String, String>) -> Result<String> {
        render_template(self, bindings)
    }
}

fn split_pieces(body: &str) -> std::result::Result<Vec<Piece>, String> {
    let mut pieces = Vec::new();
    let mut literal = String::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let ident_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        if ident_len > 0 && after[ident_len..].starts_with('}') {
            let ident = &after[..ident_len];
            let Some(known) = PLACEHOLDERS.iter().find(|p| **p == ident) else {
                return Err(format!("unknown placeholder {{{ident}}}"));
            };
            literal.push_str(&rest[..open]);
            if !literal.is_empty() {
                pieces.push(Piece::Literal(std::mem::take(&mut literal)));
            }
            pieces.push(Piece::Slot(known));
            rest = &after[ident_len + 1..];
        } else {
            literal.push_str(&rest[..=open]);
            rest = after;
        }
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        pieces.push(Piece::Literal(literal));
    }
    Ok(pieces)
}

/// Substitutes every placeholder in one pass; bound values are not rescanned.
pub fn render_template(template: &PromptTemplate, bindings: &HashMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(template.body.len());
    for piece in &template.pieces {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Slot(name) => {
                let value = bindings.get(*name).ok_or_else(|| Error::Template {
                    template: template.name.clone(),
                    message: format!("missing binding for placeholder {{{name}}}"),
                })?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

/// Named templates, seeded with the built-in prompt set.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateStore {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateStore {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, body)| {
                let t = PromptTemplate::new(*name, *body).expect("built-in templates are well formed");
                (name.to_string(), t)
            })
            .collect();
        Self { templates }
    }

    pub fn empty() -> Self {
        Self {
            templates: BTreeMap::new(),
        }
    }

    /// Loads every regular file in `dir`; the file name is the template name.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut store = Self::empty();
        store.extend_from_dir(dir)?;
        Ok(store)
    }

    /// Adds (or replaces) templates from files in `dir`.
    pub fn extend_from_dir(&mut self, dir: &Path) -> Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_file() {
                continue;
            }
            let path = entry.path();
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let body = std::fs::read_to_string(&path)?;
            self.insert(PromptTemplate::new(name, body)?);
        }
        Ok(())
    }

    /// Writes each template to `dir/<name>.txt`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for t in self.templates.values() {
            std::fs::write(dir.join(format!("{}.txt", t.name)), &t.body)?;
        }
        Ok(())
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate> {
        self.templates.get(name).ok_or_else(|| Error::Template {
            template: name.to_string(),
            message: "no such template".into(),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackMode {
    /// `0.873: text`
    Single,
    /// `(2.000, 1.000): text` with raw objective values.
    Multi,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedbackLine {
    pub score_display: String,
    pub text: String,
}

/// Score-annotated candidates in selection order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedbackBlock {
    pub lines: Vec<FeedbackLine>,
}

impl FeedbackBlock {
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().map(|l| l.text.as_str())
    }
}

impl fmt::Display for FeedbackBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, line) in self.lines.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{}: {}", line.score_display, line.text)?;
        }
        Ok(())
    }
}

pub fn format_feedback(selected: &[Candidate], mode: FeedbackMode) -> Result<FeedbackBlock> {
    let mut lines = Vec::with_capacity(selected.len());
    for (i, cand) in selected.iter().enumerate() {
        let score = cand.score.as_ref().ok_or_else(|| {
            Error::Contract(format!("feedback candidate {i} (`{}`) is unscored", cand.text))
        })?;
        let score_display = match mode {
            FeedbackMode::Single => format!("{:.3}", score.scalar()),
            FeedbackMode::Multi => {
                let parts: Vec<String> = score
                    .objectives()
                    .iter()
                    .map(|o| format!("{:.3}", o.value))
                    .collect();
                format!("({})", parts.join(", "))
            }
        };
        lines.push(FeedbackLine {
            score_display,
            text: cand.text.clone(),
        });
    }
    Ok(FeedbackBlock { lines })
}

/// Extracts payloads of lines shaped like `12. text` or `3) text`.
pub fn parse_numbered_list(raw: &str) -> Vec<String> {
    raw.lines().filter_map(numbered_payload).map(str::to_string).collect()
}

fn numbered_payload(line: &str) -> Option<&str> {
    let line = line.trim_start();
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = line[digits..].strip_prefix(['.', ')'])?;
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let payload = rest.trim();
    (!payload.is_empty()).then_some(payload)
}
