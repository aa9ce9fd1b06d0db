use clap::{Parser, Subcommand};
use mindmap_core::config::PipelineConfig;
use mindmap_core::pipeline::{cmd_curate, cmd_enrich, cmd_ingest, cmd_vectorize, EnrichProviders};
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mindmap", version, about = "Build and serve a topical mind map over a speech collection")]
struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides `corpus_root`.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Overrides `derived_root`.
    #[arg(long, global = true)]
    derived: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse transcripts and metadata, write cleaned tokens.
    Ingest,
    /// Build the vocabulary and TF-IDF vectors.
    Vectorize,
    /// Interactive clustering rounds; reads commands from stdin or a script.
    Curate {
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Topics, illustrations and the search index.
    Enrich,
    /// Serve the HTTP API over the derived store.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Box<dyn std::error::Error>> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = &cli.corpus {
        cfg.corpus_root = p.clone();
    }
    if let Some(p) = &cli.derived {
        cfg.derived_root = p.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Command::Serve { bind: Some(b) } = &cli.command {
        cfg.server.bind = b.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let cfg = load_config(&cli)?;
    let mut stdout = std::io::stdout().lock();
    match &cli.command {
        Command::Ingest => {
            let r = cmd_ingest(&cfg)?;
            writeln!(stdout, "ingested {} recordings ({} with audio, {} tokens)", r.recordings, r.with_audio, r.tokens)?;
        }
        Command::Vectorize => {
            let r = cmd_vectorize(&cfg)?;
            writeln!(stdout, "vectorized {} documents over {} terms", r.documents, r.terms)?;
        }
        Command::Curate { script } => match script {
            Some(path) => {
                let file = std::fs::File::open(path)?;
                cmd_curate(&cfg, BufReader::new(file), &mut stdout)?;
            }
            None => {
                cmd_curate(&cfg, std::io::stdin().lock(), &mut stdout)?;
            }
        },
        Command::Enrich => {
            let r = cmd_enrich(&cfg, &EnrichProviders::from_config(&cfg))?;
            writeln!(
                stdout,
                "topics: {} from provider, {} fallback; images: {} generated, {} cached",
                r.topics_llm, r.topics_fallback, r.images_generated, r.images_cached
            )?;
            if let Some(cost) = &r.cost {
                writeln!(
                    stdout,
                    "estimated image cost: {} remote images x {:.4} = {:.4}",
                    cost.remote_images, cost.price_per_image, cost.total
                )?;
            }
            if !r.failures.is_empty() {
                eprintln!("warning: {} items failed, see enrich_failures.json", r.failures.len());
                for f in &r.failures {
                    eprintln!("  {}: {}", f.target, f.error);
                }
            }
        }
        Command::Serve { .. } => {
            drop(stdout);
            tokio::runtime::Runtime::new()?.block_on(mindmap_server::serve(&cfg))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
