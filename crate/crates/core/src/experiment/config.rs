//! TOML experiment configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{GridworldConfig, PolicyMode};
use crate::learners::{Decay, WeightMode, ALPHA_GRID, DEFAULT_MAX_PRESENTATIONS, DEFAULT_THRESHOLD};
use crate::lstd::{LstdMode, EPSILON_GRID};
use crate::sampling::DEFAULT_MAX_STEPS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    DataEfficiency,
    CeeConvergence,
    StochasticitySweep,
    OffPolicy,
    LstdCompare,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::DataEfficiency => "data-efficiency",
            ExperimentKind::CeeConvergence => "cee-convergence",
            ExperimentKind::StochasticitySweep => "stochasticity-sweep",
            ExperimentKind::OffPolicy => "off-policy",
            ExperimentKind::LstdCompare => "lstd-compare",
        }
    }
}

/// Values each trial's estimate is scored against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    True,
    MdpCee,
    PsecCee,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Mrp,
    Mdp,
    Psec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub mode: PolicyMode,
    /// Seed of the softmax preferences of the off-policy evaluation policy.
    #[serde(default)]
    pub eval_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Td {
        label: String,
        weight_mode: WeightMode,
        /// Step sizes to sweep; defaults to `sweep.alphas`.
        #[serde(default)]
        alphas: Option<Vec<f64>>,
        #[serde(default = "default_threshold")]
        threshold: f64,
        #[serde(default = "default_max_presentations")]
        max_presentations: usize,
        #[serde(default)]
        decay: Option<Decay>,
    },
    Lstd {
        label: String,
        mode: LstdMode,
        /// Regularizers to sweep; defaults to `sweep.epsilons`.
        #[serde(default)]
        epsilons: Option<Vec<f64>>,
        #[serde(default)]
        weight_reward: bool,
    },
    Oracle {
        label: String,
        which: OracleKind,
    },
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_max_presentations() -> usize {
    DEFAULT_MAX_PRESENTATIONS
}

impl AlgorithmSpec {
    pub fn label(&self) -> &str {
        match self {
            AlgorithmSpec::Td { label, .. } | AlgorithmSpec::Lstd { label, .. } | AlgorithmSpec::Oracle { label, .. } => {
                label
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub slip_ps: Vec<f64>,
    /// `[numerator, denominator]` labels of the per-slip MSVE ratio.
    #[serde(default)]
    pub ratio: Option<[String; 2]>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { alphas: default_alphas(), epsilons: default_epsilons(), slip_ps: Vec::new(), ratio: None }
    }
}

fn default_alphas() -> Vec<f64> {
    ALPHA_GRID.to_vec()
}

fn default_epsilons() -> Vec<f64> {
    EPSILON_GRID.to_vec()
}

fn default_confidence() -> f64 {
    0.95
}

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Experiment id written to the CSVs; defaults to the kind name.
    #[serde(default)]
    pub id: Option<String>,
    pub environment: GridworldConfig,
    pub policy: PolicyConfig,
    pub batch_sizes: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub reference: Option<Reference>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Measure wall time per trial. Off by default so CSVs are reproducible
    /// byte for byte.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = ExperimentConfig::from_toml(&text)?;
        if let Some(dir) = &cfg.output_dir {
            if dir.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                cfg.output_dir = Some(base.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn id(&self) -> String {
        self.id.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn reference(&self) -> Reference {
        self.reference.unwrap_or(match self.kind {
            ExperimentKind::CeeConvergence => Reference::PsecCee,
            _ => Reference::True,
        })
    }

    pub fn alphas_for<'a>(&'a self, spec: &'a AlgorithmSpec) -> &'a [f64] {
        match spec {
            AlgorithmSpec::Td { alphas: Some(a), .. } => a,
            _ => &self.sweep.alphas,
        }
    }

    pub fn epsilons_for<'a>(&'a self, spec: &'a AlgorithmSpec) -> &'a [f64] {
        match spec {
            AlgorithmSpec::Lstd { epsilons: Some(e), .. } => e,
            _ => &self.sweep.epsilons,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return err("trials must be at least 1".into());
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return err("batch_sizes must be a non-empty list of positive counts".into());
        }
        if self.algorithms.is_empty() {
            return err("at least one algorithm is required".into());
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return err(format!("confidence {} is outside (0, 1)", self.confidence));
        }
        if self.max_steps == 0 {
            return err("max_steps must be at least 1".into());
        }
        let mut labels = std::collections::BTreeSet::new();
        for a in &self.algorithms {
            if a.label().is_empty() || a.label().contains([',', '"', '\n']) {
                return err(format!("algorithm label `{}` must be non-empty and CSV-safe", a.label()));
            }
            if !labels.insert(a.label()) {
                return err(format!("duplicate algorithm label `{}`", a.label()));
            }
            match a {
                AlgorithmSpec::Td { threshold, max_presentations, .. } => {
                    let grid = self.alphas_for(a);
                    if grid.is_empty() || grid.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                        return err(format!("`{}` needs a non-empty grid of positive step sizes", a.label()));
                    }
                    if !(*threshold > 0.0) || *max_presentations == 0 {
                        return err(format!("`{}` needs threshold > 0 and max_presentations >= 1", a.label()));
                    }
                }
                AlgorithmSpec::Lstd { .. } => {
                    let grid = self.epsilons_for(a);
                    if grid.is_empty() || grid.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                        return err(format!("`{}` needs a non-empty grid of non-negative epsilons", a.label()));
                    }
                }
                AlgorithmSpec::Oracle { .. } => {}
            }
        }
        match self.kind {
            ExperimentKind::StochasticitySweep => {
                if self.sweep.slip_ps.is_empty() || self.sweep.slip_ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return err("stochasticity-sweep needs sweep.slip_ps within [0, 1]".into());
                }
                if self.batch_sizes.len() != 1 {
                    return err("stochasticity-sweep uses exactly one batch size".into());
                }
            }
            ExperimentKind::OffPolicy if self.policy.mode != PolicyMode::OffPolicy => {
                return err("off-policy experiments need policy.mode = \"off-policy\"".into());
            }
            ExperimentKind::LstdCompare if !self.algorithms.iter().any(|a| matches!(a, AlgorithmSpec::Lstd { .. })) => {
                return err("lstd-compare needs at least one lstd algorithm".into());
            }
            _ => {}
        }
        if let Some([num, den]) = &self.sweep.ratio {
            for l in [num, den] {
                if !labels.contains(l.as_str()) {
                    return err(format!("ratio names unknown algorithm `{l}`"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
kind = "data-efficiency"
batch_sizes = [1, 2]
trials = 3

[environment]
slip_p = 1.0

[policy]
mode = "on-policy"

[[algorithms]]
kind = "td"
label = "TD"
weight_mode = "none"
alphas = [0.01]

[[algorithms]]
kind = "lstd"
label = "LSTD"
mode = "none"
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(BASIC).unwrap();
        assert_eq!(cfg.id(), "data-efficiency");
        assert_eq!(cfg.environment.discount, 1.0);
        assert_eq!(cfg.sweep.alphas, ALPHA_GRID.to_vec());
        assert_eq!(cfg.epsilons_for(&cfg.algorithms[1]), &EPSILON_GRID[..]);
        assert_eq!(cfg.alphas_for(&cfg.algorithms[0]), &[0.01]);
        assert_eq!(cfg.reference(), Reference::True);
    }

    #[test]
    fn unknown_keys_are_errors() {
        for bad in [
            format!("{BASIC}\ntypo = 1\n"),
            BASIC.replace("alphas = [0.01]", "alpha = [0.01]"),
            BASIC.replace("slip_p = 1.0", "slip_p = 1.0\nslip = 2"),
        ] {
            assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn invariants_are_checked() {
        assert!(ExperimentConfig::from_toml(&BASIC.replace("trials = 3", "trials = 0")).is_err());
        assert!(ExperimentConfig::from_toml(&BASIC.replace("[1, 2]", "[]")).is_err());
        assert!(ExperimentConfig::from_toml(&BASIC.replace("data-efficiency", "off-policy")).is_err());
        assert!(ExperimentConfig::from_toml(&BASIC.replace("data-efficiency", "stochasticity-sweep")).is_err());
        assert!(ExperimentConfig::from_toml(&BASIC.replace("label = \"LSTD\"", "label = \"TD\"")).is_err());
    }
}
