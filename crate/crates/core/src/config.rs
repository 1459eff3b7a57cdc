//! Runtime configuration shared by the CLI and the HTTP service.
//!
//! A single TOML file, every field optional, followed by `CLAIMGUARD_*`
//! environment overrides:
//!
//! | variable                 | field              |
//! |--------------------------|--------------------|
//! | `CLAIMGUARD_BIND`        | `bind`             |
//! | `CLAIMGUARD_STORE`       | `store_dir`        |
//! | `CLAIMGUARD_THRESHOLD`   | `policy.threshold` |
//! | `CLAIMGUARD_TOP_K`       | `policy.top_k`     |
//! | `CLAIMGUARD_MODE`        | `policy.mode`      |
//! | `CLAIMGUARD_PROVIDER`    | `provider.kind`    |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    EmbeddingProvider, EmbeddingTable, FeatureError, FusionConfig, LookupProvider, ToyProvider,
    DEFAULT_TOY_DIM,
};
use crate::matcher::{FraudMode, FraudPolicy};
use crate::pipeline::HistSource;

pub const DEFAULT_MAX_IMAGE_BYTES: usize = 10 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{var}={value:?}: {message}")]
    Env {
        var: String,
        value: String,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Embedding backend selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    /// Deterministic luminance-pooling embedder.
    Toy {
        #[serde(default = "toy_dim")]
        local_dim: usize,
        #[serde(default = "toy_dim")]
        global_dim: usize,
    },
    /// Precomputed vectors from `CGE1` sidecars; `global_table` defaults to
    /// `local_table`.
    Lookup {
        local_table: PathBuf,
        #[serde(default)]
        global_table: Option<PathBuf>,
    },
}

fn toy_dim() -> usize {
    DEFAULT_TOY_DIM
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Toy {
            local_dim: DEFAULT_TOY_DIM,
            global_dim: DEFAULT_TOY_DIM,
        }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>, ConfigError> {
        Ok(match self {
            ProviderConfig::Toy {
                local_dim,
                global_dim,
            } => Box::new(ToyProvider {
                local_dim: *local_dim,
                global_dim: *global_dim,
            }),
            ProviderConfig::Lookup {
                local_table,
                global_table,
            } => {
                let local = EmbeddingTable::load(local_table)?;
                match global_table {
                    Some(g) => {
                        Box::new(LookupProvider::with_tables(local, EmbeddingTable::load(g)?))
                    }
                    None => Box::new(LookupProvider::new(local)),
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub bind: String,
    pub store_dir: PathBuf,
    pub policy: FraudPolicy,
    pub fusion: FusionConfig,
    pub hist_source: HistSource,
    pub provider: ProviderConfig,
    /// Per-image cap on decoded upload size.
    pub max_image_bytes: usize,
    /// Base directory for relative `content_ref` paths; the working
    /// directory when unset.
    pub content_root: Option<PathBuf>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            store_dir: PathBuf::from("claimguard-store"),
            policy: FraudPolicy::default(),
            fusion: FusionConfig::default(),
            hist_source: HistSource::default(),
            provider: ProviderConfig::default(),
            max_image_bytes: DEFAULT_MAX_IMAGE_BYTES,
            content_root: None,
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })
    }

    /// Reads `path` (defaults when `None`), applies the process environment
    /// and validates.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text, &p.display().to_string())?
            }
            None => Self::default(),
        };
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `CLAIMGUARD_*` overrides; other variables are ignored.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in vars {
            let (var, value) = (k.as_ref(), v.as_ref());
            let bad = |message: &str| ConfigError::Env {
                var: var.to_string(),
                value: value.to_string(),
                message: message.to_string(),
            };
            match var {
                "CLAIMGUARD_BIND" => self.bind = value.to_string(),
                "CLAIMGUARD_STORE" => self.store_dir = PathBuf::from(value),
                "CLAIMGUARD_THRESHOLD" => {
                    self.policy.threshold = value.parse().map_err(|_| bad("expected a number"))?
                }
                "CLAIMGUARD_TOP_K" => {
                    self.policy.top_k = value
                        .parse()
                        .map_err(|_| bad("expected a positive integer"))?
                }
                "CLAIMGUARD_MODE" => {
                    self.policy.mode = match value {
                        "cross_vehicle" => FraudMode::CrossVehicle,
                        "same_vehicle" => FraudMode::SameVehicle,
                        _ => return Err(bad("expected cross_vehicle or same_vehicle")),
                    }
                }
                "CLAIMGUARD_PROVIDER" => match value {
                    "toy" => {
                        if !matches!(self.provider, ProviderConfig::Toy { .. }) {
                            self.provider = ProviderConfig::default();
                        }
                    }
                    "lookup" => {
                        if !matches!(self.provider, ProviderConfig::Lookup { .. }) {
                            return Err(bad(
                                "lookup needs provider.local_table in the config file",
                            ));
                        }
                    }
                    _ => return Err(bad("expected toy or lookup")),
                },
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.policy
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.fusion.validate()?;
        if self.max_image_bytes == 0 {
            return Err(ConfigError::Invalid(
                "max_image_bytes must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Resolves a `content_ref` against `content_root`.
    pub fn resolve_content(&self, content_ref: &str) -> PathBuf {
        match &self.content_root {
            Some(root) => root.join(content_ref),
            None => PathBuf::from(content_ref),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(AppConfig::from_toml("", "t").unwrap(), AppConfig::default());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = AppConfig::from_toml(
            "bind = \"0.0.0.0:9000\"\n[policy]\nthreshold = 0.9\n[fusion]\nhist_bins = 16\n",
            "t",
        )
        .unwrap();
        assert_eq!(cfg.bind, "0.0.0.0:9000");
        assert_eq!(cfg.policy.threshold, 0.9);
        assert_eq!(cfg.policy.top_k, FraudPolicy::default().top_k);
        assert_eq!(cfg.fusion.hist_bins, 16);
        assert_eq!(cfg.fusion.local_dim, DEFAULT_TOY_DIM);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(AppConfig::from_toml("bnd = 1", "t").is_err());
    }

    #[test]
    fn provider_variants() {
        let cfg = AppConfig::from_toml(
            "[provider]\nkind = \"lookup\"\nlocal_table = \"e.cge\"\n",
            "t",
        )
        .unwrap();
        assert_eq!(
            cfg.provider,
            ProviderConfig::Lookup {
                local_table: "e.cge".into(),
                global_table: None
            }
        );
        assert!(cfg.provider.build().is_err());
        let toy = ProviderConfig::default().build().unwrap();
        assert_eq!(
            toy.dim(crate::features::EmbedKind::LocalRoi),
            DEFAULT_TOY_DIM
        );
    }

    #[test]
    fn env_overrides() {
        let mut cfg = AppConfig::default();
        cfg.apply_env([
            ("CLAIMGUARD_BIND", "0.0.0.0:1"),
            ("CLAIMGUARD_STORE", "/tmp/s"),
            ("CLAIMGUARD_THRESHOLD", "0.5"),
            ("CLAIMGUARD_TOP_K", "3"),
            ("CLAIMGUARD_MODE", "same_vehicle"),
            ("PATH", "ignored"),
        ])
        .unwrap();
        assert_eq!(cfg.bind, "0.0.0.0:1");
        assert_eq!(cfg.store_dir, PathBuf::from("/tmp/s"));
        assert_eq!(
            cfg.policy,
            FraudPolicy {
                mode: FraudMode::SameVehicle,
                threshold: 0.5,
                top_k: 3
            }
        );
        for bad in [
            ("CLAIMGUARD_THRESHOLD", "x"),
            ("CLAIMGUARD_MODE", "any"),
            ("CLAIMGUARD_PROVIDER", "lookup"),
        ] {
            assert!(
                matches!(cfg.apply_env([bad]), Err(ConfigError::Env { .. })),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn validation() {
        let mut cfg = AppConfig::default();
        cfg.policy.top_k = 0;
        assert!(cfg.validate().is_err());
        let cfg = AppConfig {
            max_image_bytes: 0,
            ..AppConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(AppConfig::default().validate().is_ok());
    }
}
