//! Run output files. Every file is written to a temporary sibling and
//! renamed into place, so readers never see a partial file.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::solver::{SolveResult, TaskSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const CURVE_FILE: &str = "curve.csv";
pub const BEST_TEXT_FILE: &str = "best.txt";

/// What was run, recorded before the first step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    pub task: TaskSpec,
    pub engine_version: String,
    /// RFC 3339 timestamp.
    pub started_at: String,
}

/// Writes `bytes` to `path` via a temp file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_manifest(manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(&manifest.output_dir)?;
    let json = serde_json::to_vec_pretty(manifest)?;
    write_atomic(&manifest.output_dir.join(MANIFEST_FILE), &json)
}

/// Writes the trace, curve, best text, best media (if any), the stage
/// traces and the combined prompt of a composite run. Returns the paths.
pub fn write_result(dir: &Path, result: &SolveResult) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };

    let mut trace = Vec::new();
    result.trace.write_jsonl(&mut trace)?;
    put(TRACE_FILE.into(), trace)?;
    let mut curve = Vec::new();
    result.trace.write_curve_csv(&mut curve)?;
    put(CURVE_FILE.into(), curve)?;
    put(BEST_TEXT_FILE.into(), format!("{}\n", result.best.text).into_bytes())?;
    if let Some(media) = &result.best.media {
        put(format!("best_media.{}", media.extension()), media.read_bytes()?)?;
    }
    for stage in &result.stages {
        let mut t = Vec::new();
        stage.trace.write_jsonl(&mut t)?;
        put(format!("stage_{}_trace.jsonl", stage.name), t)?;
        put(format!("stage_{}_best.txt", stage.name), format!("{}\n", stage.best.text).into_bytes())?;
    }
    if let Some(prompt) = &result.combined_prompt {
        put("combined_prompt.txt".into(), format!("{prompt}\n").into_bytes())?;
    }
    Ok(written)
}
