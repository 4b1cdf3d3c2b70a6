use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use genscore::artifacts::{write_atomic, write_manifest, write_result, RunManifest};
use genscore::backends::{MediaStore, MockResponder, MockScript, MockServer, Registry, ResponseCache};
use genscore::config::load_config;
use genscore::{bleu4, Engine, Error, TemplateStore};

#[derive(Parser)]
#[command(name = "genscore", version, about = "Generator/scorer optimization loop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. `run.max_steps=3`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a task once per value of a numeric config field.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted config key, e.g. `bootstrap.limit`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        /// Run all values concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Sentence BLEU-4 of a candidate against references (one per line).
    Bleu4 {
        #[arg(long)]
        candidate: String,
        #[arg(long)]
        refs: PathBuf,
    },
    /// Serve the backend wire APIs from a mock script.
    Mockserve {
        #[arg(long)]
        port: u16,
        #[arg(long)]
        script: PathBuf,
        /// Append every request to this JSON-lines file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

/// Exit code 2 for configuration problems, 1 for everything else.
#[derive(Debug)]
enum Failure {
    Config(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Run(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Run(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Template { .. } => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn build_engine(resolved: &genscore::config::ResolvedConfig) -> Result<Engine, Failure> {
    let cache = Arc::new(ResponseCache::on_disk(&resolved.cache_dir));
    let media = Arc::new(MediaStore::new(&resolved.media_dir));
    let registry = Registry::from_endpoints(&resolved.endpoints, cache, media)?;
    let mut templates = TemplateStore::builtin();
    if let Some(dir) = &resolved.templates_dir {
        templates.extend_from_dir(dir).map_err(|e| Failure::Config(e.to_string()))?;
    }
    let mut engine = Engine::new(registry, templates);
    engine.max_in_flight = resolved.max_in_flight;
    Ok(engine)
}

/// Runs one config into `out`; returns the final best scalar.
fn run_once(config: &Path, overrides: &[String], out: &Path) -> Result<f64, Failure> {
    let (_, resolved) = load_config(config, overrides)?;
    let engine = build_engine(&resolved)?;
    write_manifest(&RunManifest {
        config_path: config.to_path_buf(),
        output_dir: out.to_path_buf(),
        task: resolved.task.clone(),
        engine_version: genscore::ENGINE_VERSION.to_string(),
        started_at: chrono::Utc::now().to_rfc3339(),
    })
    .map_err(|e| Failure::Run(format!("cannot write manifest: {e}")))?;
    let result = engine.solve(&resolved.task)?;
    write_result(out, &result).map_err(|e| Failure::Run(format!("cannot write results: {e}")))?;
    let best = result.best.scalar().unwrap_or(f64::NAN);
    log::info!(
        "stopped ({:?}) after {} steps; best {best:.4}: {}",
        result.stopped_reason,
        result.trace.steps.len().saturating_sub(1),
        result.best.text
    );
    Ok(best)
}

fn cmd_run(config: &Path, overrides: &[String], out: &Path) -> Result<(), Failure> {
    let best = run_once(config, overrides, out)?;
    println!("{best}");
    Ok(())
}

fn cmd_sweep(
    config: &Path,
    param: &str,
    values: &[String],
    overrides: &[String],
    out: &Path,
    parallel: bool,
) -> Result<(), Failure> {
    let mut numeric = Vec::with_capacity(values.len());
    for v in values {
        let x: f64 = v
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("sweep value `{v}` for `{param}` is not numeric")))?;
        numeric.push((x, v.trim().to_string()));
    }
    let one = |value: &str| {
        let mut all = overrides.to_vec();
        all.push(format!("{param}={value}"));
        let dir = out.join(format!("run_{value}"));
        let outcome = run_once(config, &all, &dir);
        if let Err(f) = &outcome {
            eprintln!("error: {param}={value}: {}", f.message());
        }
        outcome
    };
    let outcomes: Vec<Result<f64, Failure>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = numeric.iter().map(|(_, v)| s.spawn(|| one(v))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        })
    } else {
        numeric.iter().map(|(_, v)| one(v)).collect()
    };

    let mut rows: Vec<(f64, &str, f64)> = Vec::new();
    let mut worst: Option<Failure> = None;
    for ((x, v), outcome) in numeric.iter().zip(outcomes) {
        match outcome {
            Ok(best) => rows.push((*x, v, best)),
            Err(f) => {
                if worst.as_ref().is_none_or(|w| f.code() > w.code()) {
                    worst = Some(f);
                }
            }
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut csv = String::from("value,best_scalar\n");
    for (_, v, best) in &rows {
        csv.push_str(&format!("{v},{best}\n"));
    }
    write_atomic(&out.join("summary.csv"), csv.as_bytes()).map_err(|e| Failure::Run(e.to_string()))?;
    print!("{csv}");
    match worst {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn cmd_bleu4(candidate: &str, refs: &Path) -> anyhow::Result<f64> {
    let text = std::fs::read_to_string(refs).with_context(|| format!("reading {}", refs.display()))?;
    let references: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    anyhow::ensure!(!references.is_empty(), "{} has no references", refs.display());
    Ok(bleu4(candidate, &references))
}

fn cmd_mockserve(port: u16, script: &Path, log: Option<&Path>) -> anyhow::Result<()> {
    let script = MockScript::load(script).with_context(|| format!("loading {}", script.display()))?;
    let responder = Arc::new(MockResponder::new(script));
    if let Some(log) = log {
        responder.log_to(log).with_context(|| format!("opening {}", log.display()))?;
    }
    let server = MockServer::with_responder(responder, ([127, 0, 0, 1], port).into())
        .with_context(|| format!("cannot listen on port {port}"))?;
    println!("listening on {}", server.base_url());
    server.wait()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, overrides, out } => cmd_run(&config, &overrides, &out),
        Command::Sweep {
            config,
            param,
            values,
            overrides,
            out,
            parallel,
        } => cmd_sweep(&config, &param, &values, &overrides, &out, parallel),
        Command::Bleu4 { candidate, refs } => match cmd_bleu4(&candidate, &refs) {
            Ok(v) => {
                println!("{v}");
                Ok(())
            }
            Err(e) => Err(Failure::Config(format!("{e:#}"))),
        },
        Command::Mockserve { port, script, log } => {
            cmd_mockserve(port, &script, log.as_deref()).map_err(|e| Failure::Run(format!("{e:#}")))
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
