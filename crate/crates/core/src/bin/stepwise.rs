use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stepwise::eval::{load_suite, run_suite, RunOptions, RunReport};
use stepwise::kb::{load_documents, IndexOptions, KnowledgeBase, DEFAULT_K, DEFAULT_VARIANTS_PER_LANGUAGE};
use stepwise::protocol::{serve_stdio, serve_unix};
use stepwise::session::{Engine, EngineConfig};

#[derive(Parser)]
#[command(name = "stepwise", version, about = "Guidance engine for screen-reader users")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the line protocol on a local socket or on stdin/stdout.
    Serve(ServeArgs),
    /// Build or query a documentation knowledge base.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Replay scenarios and report success rates and usage.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("transport").required(true).args(["listen", "stdio"]))]
struct ServeArgs {
    /// Unix socket path to listen on.
    #[arg(long, value_name = "PATH")]
    listen: Option<PathBuf>,
    /// Serve a single session over stdin/stdout.
    #[arg(long)]
    stdio: bool,
    /// Engine config (TOML, or JSON with a .json extension).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum KbCommand {
    /// Chunk, paraphrase and embed a directory of .md/.json documents.
    Index {
        #[arg(long, value_name = "DIR")]
        docs: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "en")]
        languages: Vec<String>,
        /// Paraphrases per chunk per language.
        #[arg(long, default_value_t = DEFAULT_VARIANTS_PER_LANGUAGE)]
        variants: usize,
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Print the top-k chunks for a query.
    Search {
        #[arg(long, value_name = "DIR")]
        kb: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        /// Add a hypothetical-answer embedding to the query.
        #[arg(long)]
        hyde: bool,
        /// One JSON object per hit instead of text.
        #[arg(long)]
        json: bool,
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Run every scenario in a directory and write a JSON report.
    Run {
        #[arg(long, value_name = "DIR")]
        suite: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Override each scenario's adaptive-round limit.
        #[arg(long, value_name = "N")]
        max_adaptive: Option<u32>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Also record measured wall time per call (report is then not
        /// byte-reproducible).
        #[arg(long)]
        wall_time: bool,
    },
    /// Render a report written by `eval run`.
    Report {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig, String> {
    let mut cfg = match path {
        Some(p) => EngineConfig::from_file(p).map_err(|e| e.to_string())?,
        None => EngineConfig::default(),
    };
    cfg.gateway
        .apply_env(std::env::vars())
        .map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn serve(args: ServeArgs) -> Result<(), String> {
    let cfg = load_config(args.config.as_deref())?;
    let engine = Arc::new(Engine::from_config(cfg).map_err(|e| e.to_string())?);
    match args.listen {
        Some(path) => {
            eprintln!("listening on {}", path.display());
            serve_unix(engine, &path).map_err(|e| format!("{}: {e}", path.display()))
        }
        None => serve_stdio(engine).map_err(|e| e.to_string()),
    }
}

fn kb(cmd: KbCommand) -> Result<(), String> {
    match cmd {
        KbCommand::Index {
            docs,
            out,
            languages,
            variants,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let provider = cfg.gateway.build_completion().map_err(|e| e.to_string())?;
            let embedder = cfg.gateway.build_embedder().map_err(|e| e.to_string())?;
            let prompts = match &cfg.prompts_dir {
                Some(d) => stepwise::prompt::PromptLibrary::load_dir(d).map_err(|e| e.to_string())?,
                None => stepwise::prompt::PromptLibrary::builtin(),
            };
            let documents = load_documents(&docs).map_err(|e| e.to_string())?;
            let options = IndexOptions {
                languages,
                variants_per_language: variants,
            };
            let (kb, warnings) = KnowledgeBase::build(&documents, &options, provider.as_ref(), embedder.as_ref(), &prompts)
                .map_err(|e| e.to_string())?;
            for w in &warnings {
                eprintln!("warning: {w} (chunk indexed with its original text only)");
            }
            kb.persist(&out).map_err(|e| e.to_string())?;
            println!(
                "indexed {} chunks, {} variants ({}, dim {}) into {}",
                kb.manifest.chunk_count,
                kb.manifest.variant_count,
                kb.manifest.embedder_id,
                kb.manifest.dim,
                out.display()
            );
            Ok(())
        }
        KbCommand::Search {
            kb,
            query,
            k,
            hyde,
            json,
            config,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.kb_dir = Some(kb);
            let engine = Engine::from_config(cfg).map_err(|e| e.to_string())?;
            let hits = engine.search(&query, k, hyde).map_err(|e| e.to_string())?;
            let base = engine.kb().expect("kb loaded above");
            for (rank, h) in hits.iter().enumerate() {
                let title = base.chunk(h.chunk_id).map(|c| c.title()).unwrap_or_default();
                if json {
                    println!(
                        "{}",
                        serde_json::json!({
                            "rank": rank + 1,
                            "chunk_id": h.chunk_id,
                            "score": h.score,
                            "best_variant_id": h.best_variant_id,
                            "title": title,
                        })
                    );
                } else {
                    println!("{}. [{}] {:.6}  {}", rank + 1, h.chunk_id, h.score, title);
                }
            }
            Ok(())
        }
    }
}

fn eval(cmd: EvalCommand) -> Result<(), String> {
    match cmd {
        EvalCommand::Run {
            suite,
            parallel,
            max_adaptive,
            out,
            wall_time,
        } => {
            let scenarios = load_suite(&suite).map_err(|e| e.to_string())?;
            let report = run_suite(
                &scenarios,
                &RunOptions {
                    max_adaptive_rounds: max_adaptive,
                    parallel,
                    record_wall_time: wall_time,
                },
            )
            .map_err(|e| e.to_string())?;
            std::fs::write(&out, report.to_json()).map_err(|e| format!("{}: {e}", out.display()))?;
            let a = &report.aggregate;
            eprintln!(
                "{} tasks, {} first-try, {} succeeded; report written to {}",
                a.tasks,
                a.first_try_successes,
                a.successes,
                out.display()
            );
            Ok(())
        }
        EvalCommand::Report { input, format } => {
            let text = std::fs::read_to_string(&input).map_err(|e| format!("{}: {e}", input.display()))?;
            let report = RunReport::from_json(&text).map_err(|e| e.to_string())?;
            match format {
                Format::Table => print!("{}", report.to_table()),
                Format::Json => print!("{}", report.to_json()),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(a) => serve(a),
        Command::Kb(c) => kb(c),
        Command::Eval(c) => eval(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
