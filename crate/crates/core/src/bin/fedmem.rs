use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedmem::cli::{self, exit};
use fedmem::config::ExperimentConfig;
use fedmem::ledger::Cid;

#[derive(Parser)]
#[command(name = "fedmem", version, about = "Federated training ledger with memorization scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its ledger, scores, store and summary.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "FEDMEM_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Score a generated embedding set against train and test sets.
    Score {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        /// Experiment config supplying embedding, verifier and metric settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        knn_k: Option<usize>,
        #[arg(long)]
        confirm_threshold: Option<f64>,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        k_cells: Option<usize>,
        /// Also compute FLD-lite, AuthPct and C_T.
        #[arg(long)]
        baselines: bool,
        /// Write confirmed memorized pairs to this CSV.
        #[arg(long)]
        pairs_out: Option<PathBuf>,
    },
    /// Replay a ledger, check stored blobs and validate lineages.
    Verify {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Signing keys; defaults to keys.json next to the ledger.
        #[arg(long)]
        keys: Option<PathBuf>,
        /// Model or manifest CID whose lineage to check; all models if absent.
        #[arg(long)]
        lineage: Option<String>,
    },
}

fn load_config(path: Option<&PathBuf>) -> fedmem::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn execute(command: Command) -> fedmem::Result<()> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = cli::resolve_out_dir(out, &cfg, None);
            let summary = cli::cmd_run(&cfg, &dir)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Score {
            train,
            test,
            generated,
            config,
            seed,
            knn_k,
            confirm_threshold,
            bandwidth,
            k_cells,
            baselines,
            pairs_out,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let m = &mut cfg.metrics;
            m.knn_k = knn_k.unwrap_or(m.knn_k);
            m.confirm_threshold = confirm_threshold.unwrap_or(m.confirm_threshold);
            m.bandwidth = bandwidth.or(m.bandwidth);
            m.k_cells = k_cells.or(m.k_cells);
            let opts = cli::ScoreOptions {
                train,
                test,
                generated,
                config: cfg,
                baselines,
                pairs_out,
            };
            let (out, _) = cli::cmd_score(&opts)?;
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Verify {
            ledger,
            store,
            keys,
            lineage,
        } => {
            let keys = keys.unwrap_or_else(|| {
                ledger
                    .parent()
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .join(cli::KEYS_FILE)
            });
            let lineage = match lineage {
                Some(s) => Some(Cid::parse(&s).ok_or_else(|| {
                    fedmem::Error::Config(format!("--lineage `{s}` is not a CID"))
                })?),
                None => None,
            };
            let report = cli::cmd_verify(&ledger, &store, &keys, lineage.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK } as u8);
        }
    };
    match execute(parsed.command) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("fedmem: {e}");
            ExitCode::from(exit::INVALID as u8)
        }
    }
}
