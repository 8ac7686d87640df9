//! Seeded experiments with CSV output.
//!
//! Every CSV starts with one comment line recording the experiment, the
//! configuration hash, the master seed and the crate version, followed by
//! a header row. Seed-level work runs in parallel, rows are always written
//! in grid-then-seed order, so the output is byte-identical for identical
//! configurations.

mod config;
mod runs;

pub use config::{ExperimentConfig, ExperimentKind, MdpSource, ResolvedMdp};
pub use runs::{
    lemma_audit, lower_bound, pac_audit, scaling_beta, scaling_n, BetaScaling, LemmaAudit,
    NScaling, PacAudit, PAC_CONFIDENCE, SCALING_BETA_RANGE, SCALING_N_RANGE,
};

use std::fmt::Write as _;

use crate::error::Result;

/// Rendered experiment result.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub csv: String,
    /// Pass/fail of the experiment's built-in check, where it has one.
    pub verdict: Option<bool>,
    /// Short human-readable summary.
    pub summary: String,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match cfg.experiment {
        ExperimentKind::ScalingN => scaling_n(cfg).map(|r| r.output),
        ExperimentKind::ScalingBeta => scaling_beta(cfg).map(|r| r.output),
        ExperimentKind::PacAudit => pac_audit(cfg).map(|r| r.output),
        ExperimentKind::LemmaAudit => lemma_audit(cfg).map(|r| r.output),
        ExperimentKind::LowerBound => lower_bound(cfg),
    }
}

/// Accumulates CSV text with the provenance comment in front.
pub(crate) struct CsvWriter {
    text: String,
}

impl CsvWriter {
    pub(crate) fn new(cfg: &ExperimentConfig, header: &str) -> Self {
        let mut text = String::new();
        let _ = writeln!(
            text,
            "# experiment={} config_hash={} master_seed={} version={}",
            cfg.experiment.name(),
            cfg.hash(),
            cfg.master_seed,
            env!("CARGO_PKG_VERSION")
        );
        text.push_str(header);
        text.push('\n');
        CsvWriter { text }
    }

    pub(crate) fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub(crate) fn comment(&mut self, line: &str) {
        let _ = writeln!(self.text, "# {line}");
    }

    pub(crate) fn finish(self) -> String {
        self.text
    }
}

/// Formats an optional float; empty when absent.
pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
