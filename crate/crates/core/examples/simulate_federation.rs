//! Runs a federation from a TOML config and prints the global memorization
//! trajectory and reward outcome.
//!
//! `cargo run --release --example simulate_federation -- configs/qn_dedup.toml`
//! (a small built-in config is used without an argument)

use fedmem::config::ExperimentConfig;
use fedmem::simnet::{mean_bundle, run_experiment};
use fedmem::Result;

const SMALL: &str = r#"
format_version = 1
seed = 3
[world]
per_class = 80
[nodes]
trainers = 3
objective = "qn_dedup"
[run]
max_submissions = 12
"#;

fn main() -> Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig::from_toml(SMALL)?,
    };
    let trace = run_experiment(&cfg)?;
    println!("{:>8} {:>10} {:>8} {:>7} {:>8}", "time", "submitter", "FID", "R_C", "qn");
    for s in &trace.submissions {
        println!(
            "{:>8} {:>10} {:>8.2} {:>7.3} {:>8.2}",
            s.confirmed_at, s.submitter, s.bundle.fid, s.bundle.r_c, s.bundle.qn
        );
    }
    let last = mean_bundle(&trace.final_bundles(5))?;
    println!("last five submissions: mean R_C {:.4}, mean qn {:.2}", last["r_c"], last["qn"]);
    for n in &trace.nodes {
        println!("node {} ({}) excluded {:.2}% of its training data", n.address, n.objective, 100.0 * n.excluded_fraction);
    }
    match &trace.rewarded_model {
        Some(cid) => println!("rewarded model {cid}; balances {:?}", trace.ledger.state().balances),
        None => println!("no model was rewarded"),
    }
    println!("trace digest {}", trace.digest()?);
    Ok(())
}
