//! Run configuration: a flat `key = value` file, environment overrides, range checks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query_bank::{BankOptions, Selection};
use crate::track::PropagationParams;

pub const ENV_PREFIX: &str = "CHARAD_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub u: f64,
    pub theta: f64,
    pub mu: usize,
    pub k_clusters: usize,
    pub k_ctx: usize,
    pub k_prompt: usize,
    pub alpha: f64,
    pub tau_assoc: f64,
    pub n_ads: usize,
    pub min_gap_s: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub stride: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            u: crate::recognition::DEFAULT_THRESHOLD,
            theta: crate::redundancy::DEFAULT_THETA,
            mu: crate::token_merge::DEFAULT_MU,
            k_clusters: 2,
            k_ctx: crate::track::DEFAULT_K_CTX,
            k_prompt: crate::track::DEFAULT_K_PROMPT,
            alpha: crate::track::DEFAULT_ALPHA,
            tau_assoc: crate::track::DEFAULT_TAU_ASSOC,
            n_ads: crate::prompt::DEFAULT_N_ADS,
            min_gap_s: crate::segment::DEFAULT_MIN_GAP_S,
            seed: 0,
            epsilon: crate::query_bank::DEFAULT_EPSILON,
            stride: crate::segment::DEFAULT_STRIDE,
        }
    }
}

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn check(ok: bool, field: &str, rule: &str, value: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config_error(field, format!("must be {rule}, got {value}")))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.u.is_finite() && self.u >= 0.0, "u", "finite and >= 0", self.u)?;
        check(self.theta > 0.0 && self.theta <= 1.0, "theta", "in (0, 1]", self.theta)?;
        check(self.mu >= 1, "mu", ">= 1", self.mu)?;
        check(self.k_clusters >= 1, "k_clusters", ">= 1", self.k_clusters)?;
        check(self.k_ctx >= 1, "k_ctx", ">= 1", self.k_ctx)?;
        check(self.k_prompt >= 1, "k_prompt", ">= 1", self.k_prompt)?;
        check((0.0..=1.0).contains(&self.alpha), "alpha", "in [0, 1]", self.alpha)?;
        check((0.0..=1.0).contains(&self.tau_assoc), "tau_assoc", "in [0, 1]", self.tau_assoc)?;
        check(self.min_gap_s.is_finite() && self.min_gap_s > 0.0, "min_gap_s", "finite and > 0", self.min_gap_s)?;
        check(self.epsilon.is_finite() && self.epsilon > 0.0, "epsilon", "finite and > 0", self.epsilon)?;
        check(self.stride >= 1, "stride", ">= 1", self.stride)?;
        // the file format stores integers as signed 64-bit
        check(self.seed <= i64::MAX as u64, "seed", "<= 2^63 - 1", self.seed)
    }

    /// Parses and validates a config file. Missing keys take their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let field = e.message().split('`').nth(1).unwrap_or("config").to_string();
            config_error(&field, e.message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Config { field, message } => Error::parse(path, 0, field, message),
            other => other,
        })
    }

    /// Applies `key = value` overrides, then validates. Keys are config field names.
    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| config_error("config", e.to_string()))?;
        for (key, raw) in overrides {
            if !table.contains_key(key) {
                return Err(config_error(key, "unknown key"));
            }
            let parsed: toml::Table = toml::from_str(&format!("v = {raw}"))
                .map_err(|_| config_error(key, format!("cannot parse '{raw}'")))?;
            table.insert(key.to_string(), parsed["v"].clone());
        }
        let cfg: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| config_error("config", e.message().trim()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides from `CHARAD_<FIELD>` variables in `vars`.
    pub fn with_env(&self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let key = k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
                // process-level knobs share the prefix but are not config fields
                if matches!(key.as_str(), "log" | "threads") {
                    None
                } else {
                    Some((key, v))
                }
            })
            .collect();
        self.with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    /// The fully resolved config in the file format; loading it reproduces `self`.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn bank_options(&self) -> BankOptions {
        BankOptions {
            k_clusters: self.k_clusters,
            seed: self.seed,
            epsilon: self.epsilon,
            selection: Selection::Auto,
        }
    }

    pub fn propagation_params(&self) -> PropagationParams {
        PropagationParams {
            k_ctx: self.k_ctx,
            k_prompt: self.k_prompt,
            alpha: self.alpha,
            tau_assoc: self.tau_assoc,
        }
    }
}
