use std::collections::BTreeMap;
use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use kpnf_cli::{insert_entry, parse_entries, run, CliError, ExperimentConfig};

/// Spectral KP-II experiments: identity checks, trajectories, ensembles
/// and theory curves.
#[derive(Debug, Parser)]
#[command(name = "kpnf", version)]
struct Args {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<String>,
    /// verify | simulate | ensemble | remainder-scan | box-limit | theory-curves
    #[arg(long)]
    command: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<String>,
    /// csv | json
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn load(args: &Args) -> Result<ExperimentConfig, CliError> {
    let mut entries = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            parse_entries(&text)?
        }
        None => BTreeMap::new(),
    };
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or(CliError::Config {
            key: kv.clone(),
            message: "expected KEY=VALUE".into(),
        })?;
        insert_entry(&mut entries, k.trim(), v.trim())?;
    }
    let flags = [
        ("command", args.command.clone()),
        ("seed", args.seed.map(|s| s.to_string())),
        ("out", args.out.clone()),
        ("format", args.format.clone()),
        ("threads", args.threads.map(|t| t.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            insert_entry(&mut entries, k, &v)?;
        }
    }
    ExperimentConfig::from_entries(entries)
}

fn execute(args: &Args) -> Result<bool, CliError> {
    let cfg = load(args)?;
    if let Some(n) = cfg.threads {
        // a pool can only be installed once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outcome = run(&cfg)?;
    match &cfg.out {
        Some(path) => std::fs::write(path, &outcome.text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?,
        None => {
            let mut stdout = std::io::stdout().lock();
            if let Err(e) = stdout.write_all(outcome.text.as_bytes()).and_then(|_| stdout.flush()) {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(CliError::Io {
                        path: "<stdout>".into(),
                        source: e,
                    });
                }
            }
        }
    }
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("kpnf: scientific check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("kpnf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
