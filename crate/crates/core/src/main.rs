use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use dialprobe::parallel::with_jobs;
use dialprobe::pipeline::{cmd_generate, Command, Context, PipelineError, RunConfig};
use dialprobe::Execution;

#[derive(Parser)]
#[command(name = "dialprobe", version, about = "Probe-task evaluation of dialogue models")]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Raw training corpus (sets `train_path`).
    #[arg(long = "in", global = true)]
    input: Option<PathBuf>,
    /// Output root (sets `out`; for `generate`, the target directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Parse or generate the corpus and build the vocabulary.
    Ingest,
    /// Derive probe labels.
    Derive,
    /// Train every model and seed, keeping stage checkpoints.
    Train,
    /// Export encoder representations.
    Encode,
    /// Train and score probe classifiers.
    Probe,
    /// Difficulty buckets, evolution curves, PCA data, tie bootstrap.
    Analyze,
    /// Assemble the markdown report.
    Report,
    /// Run every stage in order.
    All,
    /// Write a synthetic corpus and its labels to `--out`.
    Generate,
    /// Print the resolved configuration and its hash.
    Config,
}

fn resolve(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut overrides = Vec::new();
    for s in &cli.set {
        let (k, v) =
            s.split_once('=').ok_or_else(|| PipelineError::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(p) = &cli.input {
        overrides.push(("train_path".into(), p.display().to_string()));
    }
    if let (Some(p), false) = (&cli.out, matches!(cli.cmd, Cmd::Generate)) {
        overrides.push(("out".into(), p.display().to_string()));
    }
    if let Some(s) = cli.seed {
        overrides.push(("seeds".into(), s.to_string()));
    }
    match &cli.config {
        Some(p) => RunConfig::load(p, &overrides),
        None => RunConfig::resolve(None, &overrides),
    }
}

fn run(cli: &Cli) -> Result<serde_json::Value, PipelineError> {
    let cfg = resolve(cli)?;
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let cmd = match cli.cmd {
        Cmd::Ingest => Command::Ingest,
        Cmd::Derive => Command::Derive,
        Cmd::Train => Command::Train,
        Cmd::Encode => Command::Encode,
        Cmd::Probe => Command::Probe,
        Cmd::Analyze => Command::Analyze,
        Cmd::Report => Command::Report,
        Cmd::All => Command::All,
        Cmd::Generate => {
            let out = cli.out.clone().ok_or_else(|| PipelineError::Config("generate needs --out".into()))?;
            let files = with_jobs(cli.jobs, || cmd_generate(&cfg, &out, exec))?;
            return Ok(json!({ "command": "generate", "files": files }));
        }
        Cmd::Config => {
            let v: serde_json::Value = serde_json::from_str(&cfg.to_json()).expect("config is JSON");
            return Ok(json!({ "config_hash": cfg.hash(), "config": v }));
        }
    };
    let ctx = Context::new(cfg, exec);
    let manifests = with_jobs(cli.jobs, || cmd.run(&ctx))?;
    Ok(json!({
        "run_dir": ctx.run.root.display().to_string(),
        "config_hash": ctx.run.hash,
        "stages": manifests.iter().map(|m| json!({ "command": m.command, "files": m.files.len() })).collect::<Vec<_>>(),
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("JSON"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
