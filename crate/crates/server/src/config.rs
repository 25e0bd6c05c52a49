//! Server configuration: a TOML file, then `ANONREPORT_*` environment
//! variables on top. Command-line flags are applied by the caller last.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anonreport_core::release::ReleasePolicy;
use anonreport_core::simulate::KSetting;
use anonreport_core::Granularity;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{AuthConfig, AuthConfigError};

pub const ENV_PREFIX: &str = "ANONREPORT_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("{var}: {reason}")]
    Env { var: String, reason: String },
    #[error("shared_key is not configured")]
    MissingKey,
    #[error(transparent)]
    Auth(#[from] AuthConfigError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    /// Store directory; in-memory when unset.
    pub store: Option<PathBuf>,
    /// Catalog file; the bundled catalog when unset.
    pub catalog: Option<PathBuf>,
    pub shared_key: Option<String>,
    pub replay_window_secs: u64,
    pub nonce_cache_capacity: usize,
    pub k: KSetting,
    pub granularity: Granularity,
    pub escalation_after: Option<u32>,
    /// How often the escalation pass runs, in seconds.
    pub maintenance_interval_secs: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            store: None,
            catalog: None,
            shared_key: None,
            replay_window_secs: 300,
            nonce_cache_capacity: 100_000,
            k: KSetting::Uniform(5),
            granularity: Granularity::DAY,
            escalation_after: None,
            maintenance_interval_secs: 60,
        }
    }
}

fn env_parse<T: FromStr>(var: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Env { var: var.to_owned(), reason: e.to_string() })
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::from_toml(&text)
    }

    /// Applies `ANONREPORT_<FIELD>` overrides from `vars`; unrelated
    /// variables are ignored.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (name, value) in vars {
            let Some(field) = name.strip_prefix(ENV_PREFIX) else { continue };
            match field {
                "LISTEN" => self.listen = env_parse(&name, &value)?,
                "STORE" => self.store = Some(PathBuf::from(value)),
                "CATALOG" => self.catalog = Some(PathBuf::from(value)),
                "SHARED_KEY" => self.shared_key = Some(value),
                "REPLAY_WINDOW_SECS" => self.replay_window_secs = env_parse(&name, &value)?,
                "NONCE_CACHE_CAPACITY" => self.nonce_cache_capacity = env_parse(&name, &value)?,
                "K" => self.k = KSetting::Uniform(env_parse(&name, &value)?),
                "GRANULARITY" => self.granularity = env_parse(&name, &value)?,
                "ESCALATION_AFTER" => {
                    self.escalation_after = if value.is_empty() { None } else { Some(env_parse(&name, &value)?) }
                }
                "MAINTENANCE_INTERVAL_SECS" => self.maintenance_interval_secs = env_parse(&name, &value)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn policy(&self) -> ReleasePolicy {
        ReleasePolicy { k: self.k.into(), granularity: self.granularity, escalation_after: self.escalation_after }
    }

    pub fn auth(&self) -> Result<AuthConfig, ConfigError> {
        let key = self.shared_key.as_deref().ok_or(ConfigError::MissingKey)?;
        Ok(AuthConfig::new(key.as_bytes().to_vec(), self.replay_window_secs, self.nonce_cache_capacity)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anonreport_core::release::LevelThresholds;

    #[test]
    fn toml_then_env() {
        let mut c = ServerConfig::from_toml(
            r#"
            listen = "0.0.0.0:9000"
            shared_key = "from-file"
            k = { country = 3, province = 4, city = 5 }
            granularity = "hour"
            "#,
        )
        .unwrap();
        assert_eq!(c.policy().k, LevelThresholds { country: 3, province: 4, city: 5 });
        assert_eq!(c.granularity, Granularity::HOUR);
        c.apply_env([
            ("ANONREPORT_SHARED_KEY".to_string(), "from-env".to_string()),
            ("ANONREPORT_K".into(), "7".into()),
            ("ANONREPORT_ESCALATION_AFTER".into(), "3".into()),
            ("PATH".into(), "/bin".into()),
        ])
        .unwrap();
        assert_eq!(c.shared_key.as_deref(), Some("from-env"));
        assert_eq!(c.policy().k, LevelThresholds::uniform(7));
        assert_eq!(c.escalation_after, Some(3));
        assert_eq!(c.listen.port(), 9000);
    }

    #[test]
    fn bad_values_are_reported() {
        assert!(ServerConfig::from_toml("bogus = 1").is_err());
        let mut c = ServerConfig::default();
        let err = c.apply_env([("ANONREPORT_K".to_string(), "many".to_string())]).unwrap_err();
        assert!(err.to_string().starts_with("ANONREPORT_K"));
        assert!(matches!(c.auth(), Err(ConfigError::MissingKey)));
        c.shared_key = Some(String::new());
        assert!(matches!(c.auth(), Err(ConfigError::Auth(AuthConfigError::EmptyKey))));
    }
}
