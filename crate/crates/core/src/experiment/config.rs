use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hard::{build_hard_mdp, HardFamilyParams};
use crate::mdp::{load_mdp, Mdp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ScalingN,
    ScalingBeta,
    PacAudit,
    LemmaAudit,
    LowerBound,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ScalingN => "scaling-n",
            ExperimentKind::ScalingBeta => "scaling-beta",
            ExperimentKind::PacAudit => "pac-audit",
            ExperimentKind::LemmaAudit => "lemma-audit",
            ExperimentKind::LowerBound => "lower-bound",
        }
    }
}

/// Where the experiment's MDP comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MdpSource {
    File {
        path: PathBuf,
    },
    Random {
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        seed: u64,
        /// Successor states per row; all states when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        branching: Option<usize>,
    },
    /// Hard-family instance; `p` defaults to the adversarial (4γ−1)/(3γ).
    Hard {
        k: usize,
        l: usize,
        gamma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
    },
}

/// A resolved MDP plus the pair count N to use inside formulas.
#[derive(Debug, Clone)]
pub struct ResolvedMdp {
    pub mdp: Mdp,
    pub formula_pairs: usize,
}

impl MdpSource {
    pub fn resolve(&self) -> Result<ResolvedMdp> {
        self.resolve_with_discount(None)
    }

    /// Resolves the source, replacing its discount when `gamma` is given.
    /// Hard instances without an explicit `p` recompute the adversarial p.
    pub fn resolve_with_discount(&self, gamma: Option<f64>) -> Result<ResolvedMdp> {
        match self {
            MdpSource::File { path } => {
                let mdp = load_mdp(path)?;
                let mdp = match gamma {
                    Some(g) => mdp.with_discount(g)?,
                    None => mdp,
                };
                let formula_pairs = mdp.num_pairs();
                Ok(ResolvedMdp { mdp, formula_pairs })
            }
            MdpSource::Random {
                num_states,
                num_actions,
                gamma: g,
                seed,
                branching,
            } => {
                let mdp = Mdp::random_sparse(
                    *num_states,
                    *num_actions,
                    gamma.unwrap_or(*g),
                    branching.unwrap_or(*num_states),
                    *seed,
                )?;
                let formula_pairs = mdp.num_pairs();
                Ok(ResolvedMdp { mdp, formula_pairs })
            }
            MdpSource::Hard { k, l, gamma: g, p } => {
                let g = gamma.unwrap_or(*g);
                let params = match p {
                    Some(p) => HardFamilyParams::new(*k, *l, g, *p)?,
                    None => HardFamilyParams::adversarial(*k, *l, g)?,
                };
                Ok(ResolvedMdp {
                    mdp: build_hard_mdp(&params)?,
                    formula_pairs: params.logical_pairs(),
                })
            }
        }
    }
}

fn default_seeds() -> u64 {
    50
}

/// One experiment run, read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdp: Option<MdpSource>,
    /// Target accuracy: sets the iteration count, the PAC target or the
    /// lower-bound separation, depending on the experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Discount for the lower-bound experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_grid: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t_grid: Vec<u64>,
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    #[serde(default)]
    pub master_seed: u64,
    /// Refuse PAC audits whose per-run budget exceeds this many samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_cap: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn new(experiment: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment,
            mdp: None,
            epsilon: None,
            delta: None,
            gamma: None,
            n_grid: Vec::new(),
            gamma_grid: Vec::new(),
            t_grid: Vec::new(),
            seeds: default_seeds(),
            master_seed: 0,
            budget_cap: None,
            output: None,
        }
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form, with
    /// the output path left out so it does not affect the result files.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = None;
        let json = serde_json::to_string(&canonical).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    pub(crate) fn require_mdp(&self) -> Result<&MdpSource> {
        self.mdp
            .as_ref()
            .ok_or_else(|| self.missing("mdp"))
    }

    pub(crate) fn require_epsilon(&self) -> Result<f64> {
        self.epsilon.ok_or_else(|| self.missing("epsilon"))
    }

    pub(crate) fn require_delta(&self) -> Result<f64> {
        self.delta.ok_or_else(|| self.missing("delta"))
    }

    pub(crate) fn require_seeds(&self) -> Result<u64> {
        if self.seeds == 0 {
            return Err(Error::invalid("seeds must be at least 1"));
        }
        Ok(self.seeds)
    }

    fn missing(&self, field: &str) -> Error {
        Error::invalid(format!(
            "experiment {} requires field `{field}`",
            self.experiment.name()
        ))
    }
}
