//! Quality and novelty scores over embedding sets.

mod baselines;
mod fid;
mod stats;

pub use baselines::{authpct, ct_score, default_k_cells, fld_lite, scott_bandwidth};
pub use fid::{fid, psd_sqrt, FidReference, GaussianSummary};
pub use stats::{kmeans, mann_whitney_z};

use serde::{Deserialize, Serialize};

use crate::memdetect::MemorizationReport;

/// `V_C · V_A · R_C · 1000`.
pub fn novelty_term(v_c: f64, v_a: f64, r_c: f64) -> f64 {
    v_c * v_a * r_c * 1000.0
}

/// Quality-novelty score `(FID + V_C·V_A·R_C·1000) / 2`; lower is better.
pub fn qn_score(fid: f64, v_c: f64, v_a: f64, r_c: f64) -> f64 {
    (fid + novelty_term(v_c, v_a, r_c)) / 2.0
}

/// `(FID + FLD·100) / 2`.
pub fn blended_fld_fid(fid: f64, fld: f64) -> f64 {
    (fid + fld * 100.0) / 2.0
}

/// Scores of one generated set. Baselines that were not computed are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub qn: f64,
    pub fid: f64,
    pub fld: Option<f64>,
    pub authpct: Option<f64>,
    pub ct: Option<f64>,
    pub v_a: f64,
    pub v_c: f64,
    pub r_c: f64,
}

impl ScoreBundle {
    pub fn new(fid: f64, report: &MemorizationReport) -> Self {
        ScoreBundle {
            qn: qn_score(fid, report.v_c, report.v_a, report.r_c),
            fid,
            fld: None,
            authpct: None,
            ct: None,
            v_a: report.v_a,
            v_c: report.v_c,
            r_c: report.r_c,
        }
    }

    pub fn novelty(&self) -> f64 {
        novelty_term(self.v_c, self.v_a, self.r_c)
    }
}
