use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use datamarket_core::config::{EmbeddingProvider, PolicyMode};
use datamarket_core::engine::output::{resume_dir, run_to_dir};
use datamarket_core::engine::TRANSACTIONS_FILE;
use datamarket_core::ingest::{ingest, IngestFormat};
use datamarket_core::metrics::report::missing_blocks;
use datamarket_core::metrics::{compare, load_log, MetricsReport};
use datamarket_core::policies::http::{HttpCompletionService, HttpEmbedder};
use datamarket_core::policies::llm::StructuredClient;
use datamarket_core::policies::transcript::{JsonlTranscript, ReplayService};
use datamarket_core::policies::PolicySet;
use datamarket_core::vector_store::{Embedder, MockEmbedder};
use datamarket_core::SimConfig;

const TRANSCRIPT_FILE: &str = "transcript.jsonl";
const INGEST_REPORT_FILE: &str = "ingest_report.json";

#[derive(Parser)]
#[command(name = "datamarket", version, about = "Data marketplace simulator and market metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write its event and transaction logs.
    Simulate {
        /// Config file, or `default`.
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        /// mock | llm | replay (defaults to the config's policy).
        #[arg(long)]
        policy: Option<PolicyMode>,
        /// Transcript to replay (replay mode).
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Continue an aborted run from its checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metrics for a run directory, events.jsonl or transactions.csv.
    Analyze {
        log: PathBuf,
        /// Config file supplying metric settings, or `default`.
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalize raw order records into a transactions.csv log.
    Ingest {
        input: PathBuf,
        /// csv | jsonl (defaults to the file extension).
        #[arg(long)]
        format: Option<IngestFormat>,
        /// Step width, e.g. `1d` or `6h`.
        #[arg(long, default_value = "1d", value_parser = humantime::parse_duration)]
        bin_width: Duration,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate differences between two metrics.json reports.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            policy,
            transcript,
            resume,
            out,
        } => simulate(&config, seed, policy, transcript, resume, &out),
        Command::Analyze { log, config, out } => analyze(&log, &config, &out),
        Command::Ingest {
            input,
            format,
            bin_width,
            out,
        } => run_ingest(&input, format, bin_width, &out),
        Command::Compare { a, b, out } => run_compare(&a, &b, &out),
    }
}

fn load_config(source: &str) -> Result<SimConfig> {
    if source == "default" {
        return Ok(SimConfig::default());
    }
    SimConfig::load(Path::new(source)).with_context(|| format!("loading config {source}"))
}

fn build_policies(cfg: &SimConfig, transcript: Option<PathBuf>, out: &Path) -> Result<PolicySet> {
    let client = match cfg.policy {
        PolicyMode::Mock => return Ok(PolicySet::mock(cfg)),
        PolicyMode::Llm => {
            let service = HttpCompletionService::from_config(&cfg.llm)?;
            fs::create_dir_all(out)?;
            let sink = JsonlTranscript::create(&out.join(TRANSCRIPT_FILE))?;
            StructuredClient::new(Arc::new(service), &cfg.llm).with_transcript(Arc::new(sink))
        }
        PolicyMode::Replay => {
            let path = transcript.unwrap_or_else(|| out.join(TRANSCRIPT_FILE));
            let service =
                ReplayService::from_path(&path).with_context(|| format!("reading transcript {}", path.display()))?;
            StructuredClient::new(Arc::new(service), &cfg.llm)
        }
    };
    let embedder: Arc<dyn Embedder> = match cfg.embedding.provider {
        EmbeddingProvider::Mock => Arc::new(MockEmbedder::new(cfg.embedding.dim)),
        EmbeddingProvider::Http => Arc::new(HttpEmbedder::from_config(
            &cfg.embedding,
            Duration::from_secs(cfg.llm.timeout_secs),
        )?),
    };
    Ok(PolicySet::llm(cfg, Arc::new(client), embedder))
}

fn simulate(
    config: &str,
    seed: Option<u64>,
    policy: Option<PolicyMode>,
    transcript: Option<PathBuf>,
    resume: bool,
    out: &Path,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(policy) = policy {
        cfg.policy = policy;
    }
    cfg.validate()?;
    let policies = build_policies(&cfg, transcript, out)?;
    let summary = if resume {
        resume_dir(&cfg, policies, out)?
    } else {
        run_to_dir(&cfg, policies, out)?
    };
    println!(
        "{} steps, {} transactions, {} buyers, {} sellers, {} listings -> {}",
        summary.steps,
        summary.transactions,
        summary.buyers,
        summary.sellers,
        summary.listings,
        out.display()
    );
    Ok(())
}

fn analyze(log: &Path, config: &str, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let trade_log = load_log(log)?;
    let report = MetricsReport::from_log(&trade_log, &cfg.metrics).with_context(|| format!("analyzing {}", log.display()))?;
    let files = report.write_dir(out)?;
    println!("wrote {} to {}", files.join(", "), out.display());
    Ok(())
}

fn run_ingest(input: &Path, format: Option<IngestFormat>, bin_width: Duration, out: &Path) -> Result<()> {
    let format = match format {
        Some(f) => f,
        None => match input.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => IngestFormat::Jsonl,
            _ => IngestFormat::Csv,
        },
    };
    let log = ingest(input, bin_width, format)?;
    fs::create_dir_all(out)?;
    let mut writer = csv::Writer::from_path(out.join(TRANSACTIONS_FILE))?;
    for t in &log.transactions {
        writer.serialize(t)?;
    }
    writer.flush()?;
    fs::write(out.join(INGEST_REPORT_FILE), serde_json::to_string_pretty(&log.report)? + "\n")?;
    for d in &log.report.dropped {
        eprintln!("dropped line {}: {}", d.line, d.reason);
    }
    println!(
        "{} of {} rows normalized into {} steps of {} -> {}",
        log.report.valid_rows,
        log.report.rows,
        log.report.steps,
        humantime::format_duration(bin_width),
        out.display()
    );
    Ok(())
}

fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let missing = missing_blocks(&text);
    if !missing.is_empty() {
        bail!("schema mismatch: {} is missing {}", path.display(), missing.join(", "));
    }
    MetricsReport::from_json(&text).with_context(|| path.display().to_string())
}

fn run_compare(a: &Path, b: &Path, out: &Path) -> Result<()> {
    let ra = read_report(a)?;
    let rb = read_report(b)?;
    let comparison = compare(&ra, &rb, &a.display().to_string(), &b.display().to_string());
    fs::create_dir_all(out)?;
    fs::write(out.join("comparison.csv"), comparison.to_csv())?;
    fs::write(out.join("comparison.json"), comparison.to_json())?;
    println!("wrote comparison.csv, comparison.json to {}", out.display());
    Ok(())
}
