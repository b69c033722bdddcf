//! Configuration of a `fit` run, read from JSON and then overridden by
//! command-line flags.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use effectfuse::{CategoricalColumn, ColumnSpec, PriorConfig, RefitConfig, SamplerConfig};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult, FitArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StrategyChoice {
    Most,
    Pam,
    #[default]
    Both,
}

impl StrategyChoice {
    pub fn most(self) -> bool {
        matches!(self, StrategyChoice::Most | StrategyChoice::Both)
    }

    pub fn pam(self) -> bool {
        matches!(self, StrategyChoice::Pam | StrategyChoice::Both)
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("effectfuse-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Input CSV. A relative path is taken relative to the configuration
    /// file.
    pub input: PathBuf,
    pub response: String,
    #[serde(default)]
    pub categorical: Vec<CategoricalColumn>,
    #[serde(default)]
    pub continuous: Vec<String>,
    #[serde(default)]
    pub prior: PriorConfig,
    /// Further prior resolutions fitted after `prior.nu`, each into its own
    /// subdirectory.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_nu: Vec<f64>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub refit: RefitConfig,
    #[serde(default)]
    pub strategy: StrategyChoice,
    /// Largest PAM cluster count (per-covariate default when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl RunConfig {
    pub fn columns(&self) -> ColumnSpec {
        ColumnSpec {
            response: self.response.clone(),
            categorical: self.categorical.clone(),
            continuous: self.continuous.clone(),
        }
    }

    /// Every prior resolution of the run, `prior.nu` first.
    pub fn nus(&self) -> Vec<f64> {
        std::iter::once(self.prior.nu).chain(self.extra_nu.iter().copied()).collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.categorical.is_empty() {
            return bad("at least one categorical column is required".into());
        }
        if let Some(nu) = self.nus().into_iter().find(|&nu| !(nu > 0.0 && nu.is_finite())) {
            return bad(format!("nu must be positive, got {nu}"));
        }
        if self.refit.iterations < effectfuse::refit::MIN_HPD_DRAWS {
            return bad(format!(
                "refit.iterations must be at least {}",
                effectfuse::refit::MIN_HPD_DRAWS
            ));
        }
        if self.sampler.iterations < effectfuse::refit::MIN_HPD_DRAWS {
            return bad(format!(
                "sampler.iterations must be at least {}",
                effectfuse::refit::MIN_HPD_DRAWS
            ));
        }
        self.sampler.validate()?;
        Ok(())
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn parse_categorical(spec: &str) -> CategoricalColumn {
    match spec.split_once('=') {
        Some((name, baseline)) => CategoricalColumn {
            name: name.trim().to_string(),
            baseline: Some(baseline.trim().to_string()),
        },
        None => CategoricalColumn {
            name: spec.trim().to_string(),
            baseline: None,
        },
    }
}

/// Loads the configuration file, if any, and applies the flags on top.
pub fn resolve_fit_config(args: &FitArgs) -> CliResult<RunConfig> {
    let mut config = match &args.common.config {
        Some(path) => {
            let mut c: RunConfig = read_json(path)?;
            if c.input.is_relative() {
                if let Some(dir) = path.parent() {
                    c.input = dir.join(&c.input);
                }
            }
            c
        }
        None => {
            let (Some(input), Some(response)) = (&args.input, &args.response) else {
                return Err(CliError::Config(
                    "either --config or both --input and --response are required".into(),
                ));
            };
            RunConfig {
                input: input.clone(),
                response: response.clone(),
                categorical: vec![],
                continuous: vec![],
                prior: PriorConfig::default(),
                extra_nu: vec![],
                sampler: SamplerConfig::default(),
                refit: RefitConfig::default(),
                strategy: StrategyChoice::default(),
                k_max: None,
                out: default_out(),
            }
        }
    };
    if let Some(input) = &args.input {
        config.input = input.clone();
    }
    if let Some(response) = &args.response {
        config.response = response.clone();
    }
    if let Some(cats) = &args.categorical {
        config.categorical = cats.iter().map(|s| parse_categorical(s)).collect();
    }
    if let Some(conts) = &args.continuous {
        config.continuous = conts.clone();
    }
    let c = &args.common;
    if let Some(seed) = c.seed {
        config.sampler.seed = seed;
        config.refit.seed = seed;
    }
    if let Some(nus) = &c.nu {
        let (first, rest) = nus
            .split_first()
            .ok_or_else(|| CliError::Config("--nu needs at least one value".into()))?;
        config.prior.nu = *first;
        config.extra_nu = rest.to_vec();
    }
    if let Some(mode) = c.psi_mode {
        config.prior.psi_mode = mode;
    }
    if let Some(n) = c.iterations {
        config.sampler.iterations = n;
    }
    if let Some(n) = c.burnin {
        config.sampler.burn_in = n;
    }
    if let Some(out) = &c.out {
        config.out = out.clone();
    }
    if let Some(s) = args.strategy {
        config.strategy = s;
    }
    if let Some(p) = args.progress {
        config.sampler.progress_interval = p;
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categorical_flag_syntax() {
        assert_eq!(parse_categorical("a").baseline, None);
        let c = parse_categorical("grade = B");
        assert_eq!((c.name.as_str(), c.baseline.as_deref()), ("grade", Some("B")));
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let c: RunConfig = serde_json::from_str(
            r#"{"input": "d.csv", "response": "y", "categorical": [{"name": "a"}]}"#,
        )
        .unwrap();
        assert_eq!(c.strategy, StrategyChoice::Both);
        assert_eq!(c.nus(), vec![1e3]);
        assert!(c.validate().is_ok());
        let bad: Result<RunConfig, _> = serde_json::from_str(r#"{"input": "d.csv", "response": "y", "typo": 1}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn nonpositive_nu_is_rejected() {
        let mut c: RunConfig =
            serde_json::from_str(r#"{"input": "d.csv", "response": "y", "categorical": [{"name": "a"}]}"#).unwrap();
        c.extra_nu = vec![0.0];
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }
}
