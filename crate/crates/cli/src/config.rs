use std::path::PathBuf;

use regid::pipeline::RegimeConfig;
use regid::spd::MetricKind;
use regid::var::{GrangerOptions, OrderSpec};
use serde::{Deserialize, Serialize};

use crate::exit;

/// Settings for `regid run`. Exactly one of `input`, `spec` and
/// `default_paper` names the data source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub spec: Option<PathBuf>,
    #[serde(default)]
    pub default_paper: bool,
    /// Only read when the source is a CSV file.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub metric: MetricKind,
    /// `null` or absent selects k automatically.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_k_range")]
    pub k_range: [usize; 2],
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub order: OrderSpec,
    #[serde(default)]
    pub bonferroni: bool,
    #[serde(default = "default_shrinkage")]
    pub shrinkage: f64,
    #[serde(default = "default_min_run")]
    pub min_run: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
}

fn default_window() -> usize {
    60
}

fn default_k_range() -> [usize; 2] {
    [2, 8]
}

fn default_alpha() -> f64 {
    regid::var::DEFAULT_ALPHA
}

fn default_shrinkage() -> f64 {
    regid::windows::DEFAULT_SHRINKAGE
}

fn default_min_run() -> usize {
    1
}

impl PipelineConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        let sources = [self.input.is_some(), self.spec.is_some(), self.default_paper]
            .iter()
            .filter(|&&b| b)
            .count();
        if sources != 1 {
            return Err(exit::usage(
                "config must set exactly one of `input`, `spec` or `default_paper`",
            ));
        }
        if self.truth.is_some() && self.input.is_none() {
            return Err(exit::usage("`truth` only applies to a CSV `input`"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(exit::usage(format!("`alpha` must lie in (0, 1), got {}", self.alpha)));
        }
        if let OrderSpec::Fixed(0) | OrderSpec::Auto { p_max: 0, .. } = self.order {
            return Err(exit::usage("`order` must be positive"));
        }
        self.regime_config().validate()?;
        Ok(())
    }

    pub fn regime_config(&self) -> RegimeConfig {
        RegimeConfig {
            window: self.window,
            metric: self.metric,
            k: self.k,
            k_min: self.k_range[0],
            k_max: self.k_range[1],
            dim: self.dim,
            shrinkage: self.shrinkage,
            min_run: self.min_run,
            seed: self.seed,
        }
    }

    pub fn granger(&self) -> GrangerOptions {
        GrangerOptions {
            alpha: self.alpha,
            order: self.order,
            bonferroni: self.bonferroni,
        }
    }
}
