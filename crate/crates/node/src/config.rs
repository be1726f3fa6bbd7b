//! Node configuration.
//!
//! The file is a flat list of `key = value` pairs (TOML syntax, values as
//! strings or integers). Every key can be overridden by an environment
//! variable named `AUDIOCHAIN_` + the upper-cased key.
//!
//! | key             | meaning                                             |
//! |-----------------|-----------------------------------------------------|
//! | `role`          | comma-separated subset of `server,recorder,player`  |
//! | `bind`          | listen address, e.g. `127.0.0.1:5000`               |
//! | `advertise_url` | URL peers use to reach this node (default `http://<bind>`) |
//! | `peers`         | comma-separated seed peer URLs                      |
//! | `difficulty`    | leading zero hex digits required of block hashes    |
//! | `storage_dir`   | directory for `chain.json` and the `cas/` store     |
//! | `device_maker`  | recorder manufacturer                               |
//! | `device_model`  | recorder model                                      |
//! | `device_mac`    | recorder MAC address `XX:XX:XX:XX:XX:XX`            |
//! | `device_gps`    | optional `latitude,longitude` in decimal degrees    |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use audiochain_core::ledger::{is_mac_address, DEFAULT_DIFFICULTY};
use thiserror::Error;

pub const ENV_PREFIX: &str = "AUDIOCHAIN_";

const KEYS: [&str; 10] = [
    "role",
    "bind",
    "advertise_url",
    "peers",
    "difficulty",
    "storage_dir",
    "device_maker",
    "device_model",
    "device_mac",
    "device_gps",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config is not flat key = value TOML: {0}")]
    Syntax(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Server,
    Recorder,
    Player,
}

impl FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "server" => Ok(Role::Server),
            "recorder" => Ok(Role::Recorder),
            "player" => Ok(Role::Player),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Server => "server",
            Role::Recorder => "recorder",
            Role::Player => "player",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceIdentity {
    pub maker: String,
    pub model: String,
    pub mac: String,
    pub gps: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub roles: BTreeSet<Role>,
    pub bind: String,
    pub advertise_url: String,
    pub peers: Vec<String>,
    pub difficulty: u32,
    pub storage_dir: PathBuf,
    pub device: Option<DeviceIdentity>,
}

impl NodeConfig {
    pub fn has_role(&self, role: Role) -> bool {
        self.roles.contains(&role)
    }

    pub fn load(path: &Path) -> Result<NodeConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        NodeConfig::from_str_with_env(&text, std::env::vars())
    }

    /// Parses `text`, then applies overrides from `env` (pairs of variable
    /// name and value).
    pub fn from_str_with_env(
        text: &str,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<NodeConfig, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let mut values = BTreeMap::new();
        for (key, value) in table {
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey(key));
            }
            let text = match value {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => return Err(ConfigError::Syntax(format!("`{key}` must be a plain value, got {other}"))),
            };
            values.insert(key, text);
        }
        for (name, value) in env {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                let key = key.to_ascii_lowercase();
                if KEYS.contains(&key.as_str()) {
                    values.insert(key, value);
                }
            }
        }
        NodeConfig::from_values(&values)
    }

    fn from_values(values: &BTreeMap<String, String>) -> Result<NodeConfig, ConfigError> {
        let get = |k: &str| values.get(k).map(|s| s.trim()).filter(|s| !s.is_empty());
        let invalid = |key: &'static str, message: String| ConfigError::Invalid { key, message };

        let roles = get("role")
            .unwrap_or("server")
            .split(',')
            .map(Role::from_str)
            .collect::<Result<BTreeSet<_>, _>>()
            .map_err(|m| invalid("role", m))?;
        if roles.is_empty() {
            return Err(invalid("role", "at least one role is required".into()));
        }
        let bind = get("bind").unwrap_or("127.0.0.1:5000").to_string();
        let advertise_url = get("advertise_url")
            .map(|s| s.trim_end_matches('/').to_string())
            .unwrap_or_else(|| format!("http://{bind}"));
        let peers = get("peers")
            .map(|s| s.split(',').map(|p| p.trim().trim_end_matches('/').to_string()).filter(|p| !p.is_empty()).collect())
            .unwrap_or_default();
        let difficulty = match get("difficulty") {
            Some(d) => d.parse::<u32>().map_err(|e| invalid("difficulty", e.to_string()))?,
            None => DEFAULT_DIFFICULTY,
        };
        if difficulty == 0 {
            return Err(invalid("difficulty", "must be at least 1".into()));
        }
        let storage_dir = PathBuf::from(get("storage_dir").unwrap_or("audiochain-data"));

        let device = match (get("device_maker"), get("device_model"), get("device_mac")) {
            (Some(maker), Some(model), Some(mac)) => {
                if !is_mac_address(mac) {
                    return Err(invalid("device_mac", format!("`{mac}` is not XX:XX:XX:XX:XX:XX")));
                }
                let gps = get("device_gps").map(parse_gps).transpose().map_err(|m| invalid("device_gps", m))?;
                Some(DeviceIdentity { maker: maker.into(), model: model.into(), mac: mac.into(), gps })
            }
            (None, None, None) => None,
            _ => {
                return Err(invalid("device_maker", "device_maker, device_model and device_mac go together".into()))
            }
        };
        if roles.contains(&Role::Recorder) && device.is_none() {
            return Err(invalid("role", "a recorder needs device_maker, device_model and device_mac".into()));
        }
        Ok(NodeConfig { roles, bind, advertise_url, peers, difficulty, storage_dir, device })
    }

    /// Renders the config back into the file format.
    pub fn to_toml(&self) -> String {
        let roles: Vec<String> = self.roles.iter().map(Role::to_string).collect();
        let mut out = format!(
            "role = {:?}\nbind = {:?}\nadvertise_url = {:?}\npeers = {:?}\ndifficulty = {}\nstorage_dir = {:?}\n",
            roles.join(","),
            self.bind,
            self.advertise_url,
            self.peers.join(","),
            self.difficulty,
            self.storage_dir.display().to_string(),
        );
        if let Some(d) = &self.device {
            out.push_str(&format!("device_maker = {:?}\ndevice_model = {:?}\ndevice_mac = {:?}\n", d.maker, d.model, d.mac));
            if let Some((lat, lon)) = d.gps {
                out.push_str(&format!("device_gps = \"{lat},{lon}\"\n"));
            }
        }
        out
    }
}

fn parse_gps(text: &str) -> Result<(f64, f64), String> {
    let (lat, lon) = text.split_once(',').ok_or("expected `latitude,longitude`")?;
    let lat: f64 = lat.trim().parse().map_err(|e| format!("latitude: {e}"))?;
    let lon: f64 = lon.trim().parse().map_err(|e| format!("longitude: {e}"))?;
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err("coordinates out of range".into());
    }
    Ok((lat, lon))
}
