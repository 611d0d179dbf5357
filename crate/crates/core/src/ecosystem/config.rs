//! Ecosystem configuration file (TOML): policy rules, AML settings, the
//! identity fixture, participant endpoints and API keys.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::aml::AmlConfig;
use super::identity::IdentityFixture;
use super::policy::PolicyRule;
use super::EcoConfig;
use crate::api::Role;
use crate::ids::BankId;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// A static API key and the caller identity it authenticates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiKey {
    pub key: String,
    pub caller: String,
    pub role: Role,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core: Option<String>,
    #[serde(default)]
    pub banks: BTreeMap<BankId, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcosystemFile {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub policy: Vec<PolicyRule>,
    #[serde(default)]
    pub aml: AmlConfig,
    #[serde(default)]
    pub identity: IdentityFixture,
    #[serde(default)]
    pub step_attempts: Option<usize>,
    #[serde(default)]
    pub endpoints: Endpoints,
    #[serde(default)]
    pub api_keys: Vec<ApiKey>,
}

fn default_name() -> String {
    "eco:ECO1".to_string()
}

impl EcosystemFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let file: EcosystemFile = toml::from_str(text)?;
        let mut seen = BTreeMap::new();
        for k in &file.api_keys {
            if seen.insert(k.key.as_str(), k.caller.as_str()).is_some() {
                return Err(ConfigError::Invalid(format!("duplicate api key for {}", k.caller)));
            }
        }
        let mut rules = BTreeMap::new();
        for r in &file.policy {
            if rules.insert(r.rule_id.as_str(), ()).is_some() {
                return Err(ConfigError::Invalid(format!("duplicate policy rule {}", r.rule_id)));
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn eco_config(&self) -> EcoConfig {
        let mut cfg = EcoConfig::new(self.name.clone());
        cfg.policy = self.policy.clone();
        cfg.aml = self.aml.clone();
        cfg.identity = self.identity.clone();
        if let Some(n) = self.step_attempts {
            cfg.step_attempts = n;
        }
        for k in &self.api_keys {
            cfg.callers.insert(k.caller.clone(), k.role);
        }
        cfg
    }

    /// Caller identity for a presented key.
    pub fn caller_for(&self, key: &str) -> Option<&ApiKey> {
        self.api_keys.iter().find(|k| k.key == key)
    }
}
