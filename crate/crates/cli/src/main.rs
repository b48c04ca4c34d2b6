use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rfnn::config::{load_config, parse_override, read_config_source, ExperimentConfig};
use rfnn::experiment::{run, Command};
use rfnn::Error;

/// Block-by-block sampling-based training of random Fourier neural networks.
#[derive(Parser, Debug)]
#[command(name = "rfnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train one network block by block.
    Train(RunArgs),
    /// Run several training methods on the same data and join their errors.
    Compare(RunArgs),
    /// Check the optimal-density oracle on a one-dimensional target.
    Oracle(RunArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Config file, or `preset:NAME` for a shipped preset.
    config: String,
    /// `key=value`, with `key` either `section.key` or a bare key.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Independent replicates with derived seeds.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory; defaults to `experiment.out`, then `rfnn-out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), Error> {
    let text = read_config_source(&args.config).map_err(|e| match e {
        Error::Io(io) => Error::config("config", format!("cannot read `{}`: {io}", args.config)),
        other => other,
    })?;
    let mut overrides = args
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = args.seed {
        overrides.push(("experiment.seed".into(), seed.to_string()));
    }
    let mut cfg = load_config(&text, &overrides)?;
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("rfnn-out"));
    Ok((cfg, dir))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Compare(a) => (Command::Compare, a),
        Cmd::Oracle(a) => (Command::Oracle, a),
    };
    let result = resolve(args).and_then(|(cfg, dir)| run(command, &cfg, &dir, args.jobs, &mut std::io::stdout().lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = match &e {
                Error::InvalidConfig { field, .. } => format!(" field={field}"),
                Error::ChecksFailed(names) => format!(" checks={}", names.join(";")),
                _ => String::new(),
            };
            eprintln!("error: kind={}{detail} message={e}", e.kind());
            ExitCode::from(if e.is_config_error() { 2 } else { 1 })
        }
    }
}
