//! Experiment configuration files (TOML, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::ledger::{SimTime, VoterFilter};
use crate::memdetect::StdevMode;
use crate::provenance::Objective;
use crate::simnet::{ToyConfig, WorldConfig};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierSection {
    /// Weight file to load; calibrated from the world seed when absent.
    pub weights: Option<PathBuf>,
    pub windows: usize,
    pub gem_p: f64,
}

impl Default for VerifierSection {
    fn default() -> Self {
        VerifierSection {
            weights: None,
            windows: 55,
            gem_p: 3.0,
        }
    }
}

/// Per-node deviations from the shared strategy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeOverride {
    pub index: usize,
    pub objective: Option<Objective>,
    pub epochs_per_round: Option<u64>,
    pub samples_per_eval: Option<usize>,
    pub alpha: Option<f64>,
    pub vote_filter: Option<VoterFilter>,
    pub wake_interval: Option<SimTime>,
    pub join_at: Option<SimTime>,
    pub leave_at: Option<SimTime>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodesSection {
    pub trainers: usize,
    pub validators: usize,
    pub objective: Objective,
    pub epochs_per_round: u64,
    pub samples_per_eval: usize,
    pub alpha: f64,
    pub vote_filter: VoterFilter,
    /// Number of most recent submissions a node considers.
    pub candidate_window: usize,
    pub wake_interval: SimTime,
    /// Relative jitter of wake intervals.
    pub wake_jitter: f64,
    #[serde(rename = "override")]
    pub overrides: Vec<NodeOverride>,
}

impl Default for NodesSection {
    fn default() -> Self {
        NodesSection {
            trainers: 4,
            validators: 0,
            objective: Objective::Qn,
            epochs_per_round: 5,
            samples_per_eval: 1000,
            alpha: 1.0,
            vote_filter: VoterFilter::All,
            candidate_window: 12,
            wake_interval: 60_000,
            wake_jitter: 0.25,
            overrides: Vec::new(),
        }
    }
}

impl NodesSection {
    pub fn total(&self) -> usize {
        self.trainers + self.validators
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub confirmation_delay: SimTime,
    pub jitter: SimTime,
    pub reward_pool: u64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            confirmation_delay: 2_000,
            jitter: 0,
            reward_pool: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub knn_k: usize,
    pub confirm_threshold: f64,
    pub percentile: f64,
    pub stdev: StdevMode,
    /// C_T cell count; defaults to `max(1, ⌊√n_train / 2⌋)`.
    pub k_cells: Option<usize>,
    /// KDE bandwidth; Scott's rule on the train set when absent.
    pub bandwidth: Option<f64>,
    /// Compute AuthPct, C_T and FLD on global evaluations.
    pub global_baselines: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            knn_k: 5,
            confirm_threshold: 0.8,
            percentile: 95.0,
            stdev: StdevMode::Population,
            k_cells: None,
            bandwidth: None,
            global_baselines: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub max_submissions: usize,
    /// Samples generated for each global evaluation.
    pub global_samples: usize,
    /// Hard stop in simulated time.
    pub max_time: SimTime,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            max_submissions: 40,
            global_samples: 1000,
            max_time: 1_000_000_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub seed: u64,
    pub world: WorldConfig,
    pub embedding: EmbeddingConfig,
    pub verifier: VerifierSection,
    pub trainer: ToyConfig,
    pub nodes: NodesSection,
    pub protocol: ProtocolSection,
    pub metrics: MetricsSection,
    pub run: RunSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            format_version: CONFIG_FORMAT_VERSION,
            seed: 0,
            world: WorldConfig::default(),
            embedding: EmbeddingConfig::default(),
            verifier: VerifierSection::default(),
            trainer: ToyConfig::default(),
            nodes: NodesSection::default(),
            protocol: ProtocolSection::default(),
            metrics: MetricsSection::default(),
            run: RunSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.format_version != CONFIG_FORMAT_VERSION {
            return fail(format!(
                "format_version {} is not supported (expected {CONFIG_FORMAT_VERSION})",
                self.format_version
            ));
        }
        self.world.validate(self.nodes.total())?;
        self.embedding.validate()?;
        self.trainer.validate()?;
        if self.embedding.latent_dim != self.world.latent_dim {
            return fail(format!(
                "embedding.latent_dim = {} but world.latent_dim = {}",
                self.embedding.latent_dim, self.world.latent_dim
            ));
        }
        let n = &self.nodes;
        if n.trainers == 0 {
            return fail("nodes.trainers must be at least 1".into());
        }
        if n.candidate_window == 0 || n.wake_interval == 0 {
            return fail("nodes.candidate_window and nodes.wake_interval must be positive".into());
        }
        if !(0.0..1.0).contains(&n.wake_jitter) {
            return fail("nodes.wake_jitter must lie in [0, 1)".into());
        }
        let classes = self.world.classes;
        let check_node = |what: &str, epochs: u64, samples: usize, alpha: f64| -> Result<()> {
            if epochs == 0 {
                return fail(format!("{what}: epochs_per_round must be at least 1"));
            }
            if samples < classes.max(2) {
                return fail(format!(
                    "{what}: samples_per_eval must be at least the class count"
                ));
            }
            if !(0.0..=1.0).contains(&alpha) {
                return fail(format!("{what}: alpha must lie in [0, 1]"));
            }
            Ok(())
        };
        check_node("nodes", n.epochs_per_round, n.samples_per_eval, n.alpha)?;
        let mut seen = std::collections::BTreeSet::new();
        for o in &n.overrides {
            let what = format!("nodes.override[index = {}]", o.index);
            if o.index >= n.total() {
                return fail(format!("{what}: no such node (there are {})", n.total()));
            }
            if !seen.insert(o.index) {
                return fail(format!("{what}: duplicate override"));
            }
            check_node(
                &what,
                o.epochs_per_round.unwrap_or(n.epochs_per_round),
                o.samples_per_eval.unwrap_or(n.samples_per_eval),
                o.alpha.unwrap_or(n.alpha),
            )?;
            if let (Some(j), Some(l)) = (o.join_at, o.leave_at) {
                if l <= j {
                    return fail(format!("{what}: leave_at must come after join_at"));
                }
            }
            if o.wake_interval == Some(0) {
                return fail(format!("{what}: wake_interval must be positive"));
            }
        }
        let m = &self.metrics;
        if m.knn_k == 0 || !(m.confirm_threshold > 0.0 && m.confirm_threshold < 1.0) {
            return fail("metrics.knn_k must be positive and confirm_threshold in (0, 1)".into());
        }
        if !(m.percentile > 0.0 && m.percentile < 100.0) {
            return fail("metrics.percentile must lie in (0, 100)".into());
        }
        if m.k_cells == Some(0) || m.bandwidth.is_some_and(|b| !(b > 0.0)) {
            return fail("metrics.k_cells and metrics.bandwidth must be positive".into());
        }
        if self.run.max_submissions == 0 || self.run.global_samples < classes {
            return fail("run.max_submissions must be positive and run.global_samples at least the class count".into());
        }
        if self.verifier.windows == 0 || !(self.verifier.gem_p >= 1.0) {
            return fail("verifier.windows must be positive and verifier.gem_p at least 1".into());
        }
        Ok(())
    }
}
