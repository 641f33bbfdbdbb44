//! Service configuration file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use rowlight_core::agent::{AgentClient, ScriptedAgent, Tape};
use rowlight_core::device::{Device, SerialDevice, SimDevice, VirtualFixture};
use serde::Deserialize;

use crate::remote::RemoteAgent;

/// Environment variable holding the remote agent credential.
pub const AGENT_KEY_VAR: &str = "ROWLIGHT_AGENT_KEY";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DeviceConfig {
    /// Simulated board driven by a fixture file.
    Sim { fixture: PathBuf },
    /// Serial device node or other file-like endpoint.
    Serial { path: PathBuf },
    /// Board bridged over TCP, `host:port`.
    Tcp { addr: String },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentConfig {
    Scripted { tape: PathBuf },
    Remote { endpoint: String, model: String },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub device: DeviceConfig,
    pub agent: AgentConfig,
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    pub log_dir: PathBuf,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{0}")]
    Backend(String),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Unreadable { .. } => "config_unreadable",
            ConfigError::Invalid(_) => "config_invalid",
            ConfigError::Backend(_) => "backend_unavailable",
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Unreadable { path: path.display().to_string(), reason: e.to_string() })
}

impl Config {
    /// Parses the YAML form; relative paths are taken from the config file's directory.
    pub fn from_yaml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let yaml: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let json = serde_json::to_value(yaml).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut config: Config = serde_json::from_value(json).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut config.device {
            DeviceConfig::Sim { fixture } => rebase(fixture),
            DeviceConfig::Serial { path } => rebase(path),
            DeviceConfig::Tcp { .. } => {}
        }
        if let AgentConfig::Scripted { tape } = &mut config.agent {
            rebase(tape);
        }
        rebase(&mut config.log_dir);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_yaml(&read(path)?, base)
    }

    pub fn open_device(&self) -> Result<Box<dyn Device>, ConfigError> {
        let backend = |e: rowlight_core::DeviceError| ConfigError::Backend(format!("device: {e}"));
        Ok(match &self.device {
            DeviceConfig::Sim { fixture } => {
                let fixture = VirtualFixture::from_yaml(&read(fixture)?).map_err(backend)?;
                Box::new(SimDevice::open(&fixture).map_err(backend)?)
            }
            DeviceConfig::Serial { path } => Box::new(SerialDevice::open_path(path).map_err(backend)?),
            DeviceConfig::Tcp { addr } => Box::new(SerialDevice::connect_tcp(addr).map_err(backend)?),
        })
    }

    /// Builds the agent for one session.
    pub fn open_agent(&self) -> Result<Box<dyn AgentClient>, ConfigError> {
        Ok(match &self.agent {
            AgentConfig::Scripted { tape } => {
                let tape = Tape::from_yaml(&read(tape)?).map_err(|e| ConfigError::Backend(format!("tape: {e}")))?;
                tape.check().map_err(|e| ConfigError::Backend(format!("tape: {e}")))?;
                Box::new(ScriptedAgent::new(tape))
            }
            AgentConfig::Remote { endpoint, model } => {
                let key = std::env::var(AGENT_KEY_VAR).ok();
                Box::new(RemoteAgent::new(endpoint.clone(), model.clone(), key))
            }
        })
    }
}
