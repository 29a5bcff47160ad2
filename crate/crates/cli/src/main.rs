//! `grounder`: one-shot resolution, corpus generation, batch evaluation and
//! the HTTP service.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use grounder_core::corpus::{
    benchmark_scene, generate, read_jsonl, run_batch, write_jsonl, BatchOptions, CorpusKind, GenConfig,
    DEFAULT_WEIGHTS,
};
use grounder_core::scene_graph::{Frame, DEFAULT_RADIUS_M};
use grounder_core::{CameraPose, Engine, ObjectNode, RelationalGraph};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "grounder", version, about = "Ground spatial references against a scene graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve one utterance; exits 0 when resolved, 2 on fallback.
    Resolve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        utterance: String,
        #[arg(long)]
        camera: Option<PathBuf>,
        /// Include the stage-by-stage trace.
        #[arg(long)]
        trace: bool,
        /// Evaluation time for memory cues (RFC 3339); defaults to now.
        #[arg(long)]
        now: Option<DateTime<Utc>>,
    },
    /// Generate an oracle-verified corpus as JSON lines.
    GenCorpus {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 40)]
        n: usize,
        /// direct,relational,memory,chained
        #[arg(long, value_parser = parse_weights)]
        weights: Option<[f64; 4]>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Kind::Unambiguous)]
        kind: Kind,
        /// Ambiguous entries in a mixed corpus.
        #[arg(long, default_value_t = 0)]
        ambiguous: usize,
        /// Malformed transcripts in a mixed corpus.
        #[arg(long, default_value_t = 0)]
        malformed: usize,
        #[arg(long, default_value_t = grounder_core::corpus::generate::DEFAULT_PHRASINGS)]
        phrasings: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a corpus through the resolver and write a report.
    Batch {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Only valid for corpora without setup actions or memory cues.
        #[arg(long)]
        parallel: bool,
    },
    /// Write the eight-cube benchmark scene.
    BenchmarkScene {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the HTTP service.
    Serve {
        /// Overrides GROUNDER_PORT.
        #[arg(long)]
        port: Option<u16>,
        /// Overrides GROUNDER_DATA_DIR.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Unambiguous,
    Ambiguous,
    Mixed,
}

fn parse_weights(s: &str) -> Result<[f64; 4], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let w: [f64; 4] = parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 4 weights, got {}", v.len()))?;
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
        return Err("weights must be non-negative with a positive sum".into());
    }
    Ok(w)
}

/// Bare node list, for hand-written scenes.
#[derive(Deserialize)]
struct NodeList {
    #[serde(default = "default_scene_id")]
    session_id: String,
    #[serde(default)]
    session_started_at: DateTime<Utc>,
    nodes: Vec<ObjectNode>,
}

fn default_scene_id() -> String {
    "scene".into()
}

/// A saved graph document, or `{nodes: [...]}` whose edges get derived.
fn load_scene(path: &Path) -> Result<RelationalGraph> {
    let bytes = std::fs::read(path).with_context(|| format!("reading scene {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).with_context(|| format!("scene {} is not JSON", path.display()))?;
    if value.get("edges").is_some() {
        return RelationalGraph::load(&bytes).with_context(|| format!("loading scene {}", path.display()));
    }
    let list: NodeList = serde_json::from_value(value).with_context(|| format!("scene {}", path.display()))?;
    RelationalGraph::build(list.session_id, list.session_started_at, list.nodes, DEFAULT_RADIUS_M, Frame::default())
        .with_context(|| format!("building scene {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn resolve(scene: &Path, utterance: &str, camera: Option<&Path>, trace: bool, now: Option<DateTime<Utc>>) -> Result<ExitCode> {
    let graph = load_scene(scene)?;
    let cam = match camera {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("reading camera {}", p.display()))?;
            let c: CameraPose = serde_json::from_reader(BufReader::new(f)).context("parsing camera pose")?;
            Some(c.validated()?)
        }
        None => None,
    };
    let engine = Engine::default();
    let mut out = engine.interpret(&graph, utterance, cam.as_ref(), now.unwrap_or_else(Utc::now));
    if !trace {
        out.result.trace.clear();
    }
    let resolved = out.result.is_resolved();
    let doc = serde_json::json!({
        "resolution": out.result,
        "directive": out.directive,
        "destination": out.destination,
        "patterns": out.patterns,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(if resolved { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

#[allow(clippy::too_many_arguments)]
fn gen_corpus(
    scene: &Path,
    n: usize,
    weights: Option<[f64; 4]>,
    seed: u64,
    kind: Kind,
    ambiguous: usize,
    malformed: usize,
    phrasings: usize,
    out: Option<&Path>,
) -> Result<()> {
    let graph = load_scene(scene)?;
    let kind = match kind {
        Kind::Unambiguous => CorpusKind::Unambiguous,
        Kind::Ambiguous => CorpusKind::Ambiguous,
        Kind::Mixed => {
            if ambiguous + malformed > n {
                bail!("--ambiguous + --malformed exceeds --n");
            }
            CorpusKind::Mixed { ambiguous, malformed }
        }
    };
    if phrasings == 0 {
        bail!("--phrasings must be at least 1");
    }
    let cfg = GenConfig {
        n,
        weights: weights.unwrap_or(DEFAULT_WEIGHTS),
        seed,
        phrasings,
        kind,
        ..Default::default()
    };
    let result = generate(&graph, &cfg);
    for (i, why) in &result.skipped {
        log::warn!("entry {i} skipped: {why}");
    }
    let mut w = output(out)?;
    write_jsonl(&mut w, &result.entries)?;
    w.flush()?;
    log::info!("wrote {} entries ({} skipped)", result.entries.len(), result.skipped.len());
    Ok(())
}

fn batch(scene: &Path, corpus: &Path, report: Option<&Path>, parallel: bool) -> Result<()> {
    let graph = load_scene(scene)?;
    let f = File::open(corpus).with_context(|| format!("reading corpus {}", corpus.display()))?;
    let entries = read_jsonl(BufReader::new(f))?;
    let (rep, _) = run_batch(&Engine::default(), &graph, &entries, BatchOptions { parallel })?;
    let t = &rep.totals;
    eprintln!(
        "{} entries: {:.1}% resolved, {:.1}% fallback, {:.1}% parse error; accuracy {:.1}%",
        t.entries,
        100.0 * t.resolved_rate,
        100.0 * t.fallback_rate,
        100.0 * t.parse_error_rate,
        100.0 * t.accuracy
    );
    let mut w = output(report)?;
    serde_json::to_writer_pretty(&mut w, &rep)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Resolve {
            scene,
            utterance,
            camera,
            trace,
            now,
        } => resolve(&scene, &utterance, camera.as_deref(), trace, now),
        Command::GenCorpus {
            scene,
            n,
            weights,
            seed,
            kind,
            ambiguous,
            malformed,
            phrasings,
            out,
        } => gen_corpus(&scene, n, weights, seed, kind, ambiguous, malformed, phrasings, out.as_deref())
            .map(|_| ExitCode::SUCCESS),
        Command::Batch {
            scene,
            corpus,
            report,
            parallel,
        } => batch(&scene, &corpus, report.as_deref(), parallel).map(|_| ExitCode::SUCCESS),
        Command::BenchmarkScene { out } => {
            let mut w = output(out.as_deref())?;
            w.write_all(&benchmark_scene().save())?;
            writeln!(w)?;
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { port, data_dir } => {
            let mut cfg = grounder_server::ServerConfig::from_env().map_err(anyhow::Error::msg)?;
            if let Some(p) = port {
                cfg.port = p;
            }
            if let Some(d) = data_dir {
                cfg.data_dir = d;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(grounder_server::serve(cfg))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
