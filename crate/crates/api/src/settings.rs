use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const SETTINGS_FILE: &str = "node.json";

/// Per-node service configuration, read from `GL_NODE_CONFIG`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSettings {
    pub node_id: String,
    pub listen_addr: String,
    /// Network root holding `topology.json` and every node directory.
    /// Defaults to the parent of the directory holding the settings file.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    pub default_channel: String,
    /// Static console bundle served under /ui.
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
    /// Base URL the console should call; defaults to `http://<listen_addr>`.
    #[serde(default)]
    pub api_base_url: Option<String>,
    #[serde(default = "default_ttl")]
    pub session_ttl_ms: u64,
    #[serde(default = "default_tick")]
    pub tick_ms: u64,
}

fn default_ttl() -> u64 {
    8 * 60 * 60 * 1000
}

fn default_tick() -> u64 {
    10
}

#[derive(Debug, thiserror::Error)]
pub enum SettingsError {
    #[error("GL_NODE_CONFIG is not set")]
    Missing,
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
}

impl NodeSettings {
    pub fn new(node_id: &str, listen_addr: &str, default_channel: &str) -> Self {
        NodeSettings {
            node_id: node_id.to_string(),
            listen_addr: listen_addr.to_string(),
            data_dir: None,
            default_channel: default_channel.to_string(),
            ui_dir: None,
            api_base_url: None,
            session_ttl_ms: default_ttl(),
            tick_ms: default_tick(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, SettingsError> {
        let err = |message: String| SettingsError::Read { path: path.to_path_buf(), message };
        let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
        let mut s: NodeSettings = serde_json::from_slice(&bytes).map_err(|e| err(e.to_string()))?;
        if s.data_dir.is_none() {
            let abs = std::path::absolute(path).map_err(|e| err(e.to_string()))?;
            s.data_dir = abs.parent().and_then(Path::parent).map(Path::to_path_buf);
        }
        Ok(s)
    }

    /// `GL_NODE_CONFIG`, then `GL_LISTEN_ADDR` and `GL_DATA_DIR` overrides.
    pub fn from_env() -> Result<Self, SettingsError> {
        let path = std::env::var_os("GL_NODE_CONFIG").ok_or(SettingsError::Missing)?;
        let mut s = Self::load(Path::new(&path))?;
        if let Ok(addr) = std::env::var("GL_LISTEN_ADDR") {
            s.listen_addr = addr;
        }
        if let Some(dir) = std::env::var_os("GL_DATA_DIR") {
            s.data_dir = Some(PathBuf::from(dir));
        }
        Ok(s)
    }

    pub fn api_base_url(&self) -> String {
        self.api_base_url.clone().unwrap_or_else(|| format!("http://{}", self.listen_addr))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_dir_defaults_to_network_root() {
        let dir = tempfile::tempdir().unwrap();
        let node = dir.path().join("coop-node");
        std::fs::create_dir(&node).unwrap();
        let s = NodeSettings::new("coop-node", "127.0.0.1:0", "gebn-main");
        s.save(&node.join(SETTINGS_FILE)).unwrap();
        let loaded = NodeSettings::load(&node.join(SETTINGS_FILE)).unwrap();
        assert_eq!(loaded.data_dir.as_deref(), Some(std::path::absolute(dir.path()).unwrap().as_path()));
        assert_eq!(loaded.session_ttl_ms, 8 * 3_600_000);
    }
}
