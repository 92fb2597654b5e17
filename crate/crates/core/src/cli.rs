//! The `run`, `score` and `verify` commands as library functions. The
//! binary only parses arguments and maps errors to exit codes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentConfig, MetricsSection};
use crate::error::{Error, Result};
use crate::io;
use crate::ledger::{read_log, write_log, Cid, ContentStore, ContractState, EventKind};
use crate::memdetect::MemorizationReport;
use crate::metrics::ScoreBundle;
use crate::provenance::{validate_lineage, Keyring, Manifest};
use crate::simnet::{
    build_context, evaluate_embedded, mean_bundle, run_with_context, ExperimentTrace, Extras,
    NodeSummary, ReferenceSet,
};

pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const SCORES_FILE: &str = "scores.csv";
pub const STORE_DIR: &str = "manifests";
pub const KEYS_FILE: &str = "keys.json";
pub const SUMMARY_FILE: &str = "summary.json";
/// Number of latest submissions averaged in the summary.
pub const FINAL_WINDOW: usize = 10;
pub const DEFAULT_OUT_DIR: &str = "fedmem-out";

/// Exit codes shared by every command.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INVALID: i32 = 1;
    pub const USAGE: i32 = 2;
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub seed: u64,
    pub submissions: usize,
    pub final_window: usize,
    /// Means of the global scores over the final window.
    pub final_means: BTreeMap<String, f64>,
    pub qn_raw: f64,
    /// Q-N multiplied by 10⁻³, for tables.
    pub qn_e3: f64,
    pub rewarded_model: Option<Cid>,
    pub balances: BTreeMap<String, u64>,
    pub ledger_digest: String,
    pub trace_digest: String,
    pub nodes: Vec<NodeSummary>,
}

impl RunSummary {
    pub fn from_trace(cfg: &ExperimentConfig, trace: &ExperimentTrace) -> Result<Self> {
        let final_means = mean_bundle(&trace.final_bundles(FINAL_WINDOW))?;
        let qn_raw = final_means["qn"];
        Ok(RunSummary {
            format_version: io::FORMAT_VERSION,
            seed: cfg.seed,
            submissions: trace.submissions.len(),
            final_window: FINAL_WINDOW.min(trace.submissions.len()),
            qn_raw,
            qn_e3: qn_raw * 1e-3,
            final_means,
            rewarded_model: trace.rewarded_model.clone(),
            balances: trace.ledger.state().balances.clone(),
            ledger_digest: trace.ledger.digest()?,
            trace_digest: trace.digest()?,
            nodes: trace.nodes.clone(),
        })
    }
}

/// Output directory: explicit flag, then the config, then `fallback`
/// (normally taken from the environment), then [`DEFAULT_OUT_DIR`].
pub fn resolve_out_dir(
    flag: Option<PathBuf>,
    cfg: &ExperimentConfig,
    fallback: Option<PathBuf>,
) -> PathBuf {
    flag.or_else(|| cfg.output.dir.clone())
        .or(fallback)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_outputs(dir: &Path, summary: &RunSummary, trace: &ExperimentTrace) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_log(fs::File::create(dir.join(LEDGER_FILE))?, trace.ledger.events())?;
    io::write_scores(fs::File::create(dir.join(SCORES_FILE))?, &trace.rows)?;
    trace.store.save_dir(&dir.join(STORE_DIR))?;
    trace.keyring.save(&dir.join(KEYS_FILE))?;
    fs::write(
        dir.join(SUMMARY_FILE),
        serde_json::to_string_pretty(summary)? + "\n",
    )?;
    Ok(())
}

pub fn cmd_run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let ctx = build_context(cfg)?;
    let trace = run_with_context(cfg, &ctx)?;
    let summary = RunSummary::from_trace(cfg, &trace)?;
    write_outputs(dir, &summary, &trace)?;
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct ScoreOptions {
    pub train: PathBuf,
    pub test: PathBuf,
    pub generated: PathBuf,
    /// Supplies the embedding space, verifier and metric settings.
    pub config: ExperimentConfig,
    pub baselines: bool,
    pub pairs_out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreOutput {
    pub bundle: ScoreBundle,
    pub n_train: usize,
    pub n_test: usize,
    pub n_generated: usize,
    pub confirmed_pairs: usize,
    pub checked_pairs: usize,
}

pub fn cmd_score(opts: &ScoreOptions) -> Result<(ScoreOutput, MemorizationReport)> {
    opts.config.validate()?;
    let train = io::load_embeddings(&opts.train)?;
    let test = io::load_embeddings(&opts.test)?;
    let generated = io::load_embeddings(&opts.generated)?;
    let (n_train, n_test, n_generated) = (train.len(), test.len(), generated.len());
    let ctx = build_context(&opts.config)?;
    let metrics: &MetricsSection = &opts.config.metrics;
    let reference = ReferenceSet::from_embeddings(&ctx, train, test, metrics)?;
    let extras = if opts.baselines {
        Extras::ALL
    } else {
        Extras::default()
    };
    let e = evaluate_embedded(&ctx, &reference, &generated, metrics, extras)?;
    if let Some(path) = &opts.pairs_out {
        e.report.write_confirmed_csv(fs::File::create(path)?)?;
    }
    Ok((
        ScoreOutput {
            bundle: e.bundle,
            n_train,
            n_test,
            n_generated,
            confirmed_pairs: e.report.confirmed.len(),
            checked_pairs: e.report.checked.len(),
        },
        e.report,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub events: usize,
    pub digest: String,
    pub models: usize,
    pub blobs: usize,
    pub lineages_checked: usize,
    pub longest_lineage: usize,
}

/// Replays the log, checks every stored blob against its CID, and
/// validates the lineage of `lineage` (a model or manifest CID) or of
/// every submitted model.
pub fn cmd_verify(
    ledger: &Path,
    store_dir: &Path,
    keys: &Path,
    lineage: Option<&Cid>,
) -> Result<VerifyReport> {
    let file = fs::File::open(ledger)?;
    let events = read_log(std::io::BufReader::new(file))?;
    let state = ContractState::fold(&events)?;
    let store = ContentStore::load_dir(store_dir)?;
    for (cid, _) in store.iter() {
        store.get(cid)?;
    }
    let keyring = Keyring::load(keys)?;

    let submissions: Vec<(&Cid, &Cid)> = events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::ModelSubmitted {
                model_cid,
                manifest_cid,
                ..
            } => Some((model_cid, manifest_cid)),
            _ => None,
        })
        .collect();
    let targets: Vec<(&Cid, &Cid)> = match lineage {
        None => submissions,
        Some(c) => {
            let hit = submissions
                .into_iter()
                .find(|(m, man)| *m == c || *man == c)
                .ok_or_else(|| Error::lineage(c, "not a submitted model or manifest"))?;
            vec![hit]
        }
    };
    let mut longest = 0;
    for (model, manifest) in &targets {
        let chain = validate_lineage(&store, &keyring, manifest)?;
        check_head(chain.head(), model, manifest)?;
        longest = longest.max(chain.len());
    }
    Ok(VerifyReport {
        events: events.len(),
        digest: crate::ledger::log_digest(&events)?,
        models: state.models.len(),
        blobs: store.len(),
        lineages_checked: targets.len(),
        longest_lineage: longest,
    })
}

fn check_head(head: &Manifest, model: &Cid, manifest: &Cid) -> Result<()> {
    if &head.asset_cid != model {
        return Err(Error::lineage(
            manifest,
            format!("manifest asset {} is not the submitted model {model}", head.asset_cid),
        ));
    }
    Ok(())
}
