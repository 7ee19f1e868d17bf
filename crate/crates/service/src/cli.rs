//! `b2d` command line: `serve`, `run`, `analyze`, `replay`.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::http::StatusCode;
use b2d_core::analytics::{self, CorpusItem};
use b2d_core::config::{AppConfig, ProviderKind};
use b2d_core::domain::{DeliverableContext, ElementType, Orientation};
use b2d_core::events::{self, ReplaySummary};
use b2d_core::store::FsStore;
use b2d_core::{AutoConfig, Engine, PipelineConfig};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::api::{router, AppState};
use crate::error::ApiError;

#[derive(Debug, Parser)]
#[command(name = "b2d", version, about = "Brief-to-design pipeline: server, batch runs and corpus analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ProviderArgs {
    /// Provider backend; overrides `<root>/config` and `B2D_PROVIDER`.
    #[arg(long)]
    pub provider: Option<ProviderKind>,
    /// Mock provider seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the HTTP API on loopback.
    Serve {
        #[arg(long)]
        root: PathBuf,
        #[command(flatten)]
        providers: ProviderArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Run the whole pipeline on a brief file and export the session bundle.
    Run {
        #[arg(long)]
        brief: PathBuf,
        /// Take the first candidate everywhere. Required: the CLI has no
        /// interactive mode.
        #[arg(long)]
        auto: bool,
        /// Candidates per element type.
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Session store; a temporary directory when omitted.
        #[arg(long)]
        root: Option<PathBuf>,
        #[command(flatten)]
        providers: ProviderArgs,
        #[arg(long)]
        orientation: Option<Orientation>,
        #[arg(long)]
        format: Option<String>,
        #[arg(long, default_value = "English")]
        language: String,
        /// Date given to the element recommender, for reproducible runs.
        #[arg(long)]
        date: Option<NaiveDate>,
    },
    /// Mean pairwise embedding distance over a directory of files.
    Analyze {
        #[command(subcommand)]
        corpus: Corpus,
    },
    /// Rebuild a session from a bundle's event log and print a summary.
    Replay { bundle: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum Corpus {
    /// One prompt per text file.
    Prompts(AnalyzeArgs),
    /// One image per file.
    Images(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub dir: PathBuf,
    #[arg(long, default_value = "diversity_report.json")]
    pub out: PathBuf,
    /// Directory holding a `config` file for the provider settings.
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[command(flatten)]
    pub providers: ProviderArgs,
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

fn io_error(path: &Path, e: std::io::Error) -> ApiError {
    let (status, code) = match e.kind() {
        std::io::ErrorKind::NotFound => (StatusCode::NOT_FOUND, "file_not_found"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "storage_error"),
    };
    ApiError::new(status, code, format!("{}: {e}", path.display()))
}

fn load_config(root: Option<&Path>, flags: &ProviderArgs) -> Result<AppConfig, ApiError> {
    let mut config = match root {
        Some(root) => AppConfig::load(root),
        None => {
            let mut c = AppConfig::default();
            c.apply_env().map(|_| c)
        }
    }
    .map_err(|e| ApiError::invalid("invalid_config", e.to_string()))?;
    if let Some(p) = flags.provider {
        config.provider = p;
    }
    if let Some(seed) = flags.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn build_engine(root: &Path, config: &AppConfig, date: Option<NaiveDate>) -> Result<Engine, ApiError> {
    let (providers, _) = config.build_providers().map_err(|e| ApiError::invalid("invalid_config", e.to_string()))?;
    let store = Arc::new(FsStore::open(root)?);
    let pipeline = PipelineConfig { current_date: date, retry: config.providers.retry_policy(), ..Default::default() };
    Ok(Engine::new(providers, store, pipeline))
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub session_id: String,
    pub bundle: PathBuf,
    pub artifacts: usize,
    pub events: usize,
    pub element_cards: Vec<(ElementType, usize)>,
    pub integrated_prompts: Vec<String>,
    pub image_hashes: Vec<String>,
}

/// Runs one command, writing its result to `out`. `serve` blocks until
/// interrupted.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), ApiError> {
    match cli.command {
        Command::Serve { root, providers, port, host } => {
            let config = load_config(Some(&root), &providers)?;
            let engine = build_engine(&root, &config, None)?;
            let rt = tokio::runtime::Runtime::new().map_err(internal)?;
            rt.block_on(serve(AppState::new(Arc::new(engine)), SocketAddr::new(host, port)))
        }
        Command::Run { brief, auto, n, out: bundle, root, providers, orientation, format, language, date } => {
            if !auto {
                return Err(ApiError::invalid(
                    "invalid_request",
                    "run requires --auto; use `serve` for interactive sessions",
                ));
            }
            let text = std::fs::read_to_string(&brief).map_err(|e| io_error(&brief, e))?;
            let config = load_config(root.as_deref(), &providers)?;
            let temp;
            let root = match root {
                Some(r) => r,
                None => {
                    temp = tempfile::tempdir().map_err(internal)?;
                    temp.path().to_path_buf()
                }
            };
            let engine = build_engine(&root, &config, date)?;
            let auto = AutoConfig {
                output_language: language,
                deliverable_context: DeliverableContext { deliverable_format: format, orientation },
                n,
            };
            let session = engine.run_auto(&text, &auto)?;
            engine.store().export_bundle(&session.id, &bundle)?;
            let summary = RunSummary {
                session_id: session.id.to_string(),
                bundle,
                artifacts: session.history.len(),
                events: engine.events(&session.id)?.len(),
                element_cards: ElementType::ALL.into_iter().map(|t| (t, session.cards_of(t).len())).collect(),
                integrated_prompts: session.integrated_prompts.iter().map(|p| p.text.clone()).collect(),
                image_hashes: session.history.iter().map(|a| a.image_ref.content_hash.clone()).collect(),
            };
            write_json(out, &summary)
        }
        Command::Analyze { corpus } => {
            let (args, images) = match corpus {
                Corpus::Prompts(a) => (a, false),
                Corpus::Images(a) => (a, true),
            };
            let config = load_config(args.root.as_deref(), &args.providers)?;
            let (providers, _) =
                config.build_providers().map_err(|e| ApiError::invalid("invalid_config", e.to_string()))?;
            let files = corpus_files(&args.dir)?;
            let labels: Vec<String> =
                files.iter().map(|(p, _)| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect();
            let texts: Vec<String>;
            let items: Vec<CorpusItem<'_>> = if images {
                files.iter().map(|(_, b)| CorpusItem::Image(b)).collect()
            } else {
                texts = files.iter().map(|(_, b)| String::from_utf8_lossy(b).trim().to_owned()).collect();
                texts.iter().map(|t| CorpusItem::Text(t)).collect()
            };
            let report = analytics::corpus_diversity(&labels, &items, &*providers.embedder)?;
            let json = serde_json::to_vec_pretty(&report).map_err(internal)?;
            std::fs::write(&args.out, json).map_err(|e| io_error(&args.out, e))?;
            write_json(out, &report)
        }
        Command::Replay { bundle } => {
            let temp = tempfile::tempdir().map_err(internal)?;
            let store = FsStore::open(temp.path())?;
            let stored = store.import_bundle(&bundle)?;
            let records = store.load_events(&stored.id)?;
            let rebuilt = events::replay(&records)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "corrupt_record", e.to_string()))?;
            if rebuilt != stored {
                return Err(ApiError::new(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "replay_mismatch",
                    "event log does not reproduce the stored session",
                ));
            }
            write_json(out, &ReplaySummary::of(&rebuilt, records.len()))
        }
    }
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), ApiError> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(internal)?;
    writeln!(out).map_err(internal)
}

/// Regular, non-hidden files of `dir` sorted by name, with their bytes.
fn corpus_files(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, ApiError> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_error(dir, e))? {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        let hidden = path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
        if path.is_file() && !hidden {
            paths.push(path);
        }
    }
    paths.sort();
    paths.into_iter().map(|p| std::fs::read(&p).map(|b| (p.clone(), b)).map_err(|e| io_error(&p, e))).collect()
}

pub async fn serve(state: AppState, addr: SocketAddr) -> Result<(), ApiError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(internal)?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(internal)
}
