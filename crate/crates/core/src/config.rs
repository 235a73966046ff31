//! Runtime configuration, loaded from TOML. Absent keys take defaults and
//! every value is range-checked at load.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::DEFAULT_REPLY_WINDOW_SECS;
use crate::engine::{BandThresholds, Catalog, TrackerConfig, DEFAULT_EMA_ALPHA, DEFAULT_MIN_NOTIFY_GAP_SECS};
use crate::relay::{RelayConfig, DEFAULT_TTL_SECS};
use crate::simulator::BehaviorModel;

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "ANIMO_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{field}: {message}")]
    Range { field: &'static str, message: String },
    #[error("catalog {path}: {message}")]
    Catalog { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: String,
    /// Newline-delimited protocol frames over TCP.
    pub port: u16,
    /// WebSocket endpoint for browser watch faces.
    pub ws_port: u16,
    pub ttl_secs: i64,
    pub reply_window_secs: i64,
    pub loss: f64,
    pub band_thresholds: BandThresholds,
    pub ema_alpha: f64,
    pub min_notify_gap_secs: i64,
    pub catalog_path: Option<PathBuf>,
    pub log_path: PathBuf,
    /// Defaults to `<log_path>.registry.json`.
    pub registry_path: Option<PathBuf>,
    pub seed: u64,
    /// Local time offset used for hour-of-day bucketing and active hours.
    pub utc_offset_secs: i64,
    pub model: BehaviorModel,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 7878,
            ws_port: 7879,
            ttl_secs: DEFAULT_TTL_SECS,
            reply_window_secs: DEFAULT_REPLY_WINDOW_SECS,
            loss: 0.0,
            band_thresholds: BandThresholds::default(),
            ema_alpha: DEFAULT_EMA_ALPHA,
            min_notify_gap_secs: DEFAULT_MIN_NOTIFY_GAP_SECS,
            catalog_path: None,
            log_path: PathBuf::from("animo-events.jsonl"),
            registry_path: None,
            seed: 0,
            utc_offset_secs: 0,
            model: BehaviorModel::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_owned(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |field, message: String| Err(ConfigError::Range { field, message });
        if self.ttl_secs < 1 {
            return range("ttl_secs", format!("{} must be >= 1", self.ttl_secs));
        }
        if self.reply_window_secs < 2 {
            return range("reply_window_secs", format!("{} must be >= 2", self.reply_window_secs));
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return range("loss", format!("{} outside [0, 1]", self.loss));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return range("ema_alpha", format!("{} outside (0, 1]", self.ema_alpha));
        }
        if self.min_notify_gap_secs < 0 {
            return range(
                "min_notify_gap_secs",
                format!("{} is negative", self.min_notify_gap_secs),
            );
        }
        if self.utc_offset_secs.abs() > 14 * 3600 {
            return range("utc_offset_secs", format!("{} beyond +/-14h", self.utc_offset_secs));
        }
        self.band_thresholds.validate().map_err(|e| ConfigError::Range {
            field: "band_thresholds",
            message: e.to_string(),
        })?;
        self.model.validate().map_err(|e| ConfigError::Range {
            field: "model",
            message: e.to_string(),
        })?;
        Ok(())
    }

    pub fn relay_config(&self) -> RelayConfig {
        RelayConfig {
            ttl_secs: self.ttl_secs,
            loss: self.loss,
            seed: self.seed,
        }
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            alpha: self.ema_alpha,
            thresholds: self.band_thresholds,
            min_notify_gap_secs: self.min_notify_gap_secs,
        }
    }

    pub fn registry_path(&self) -> PathBuf {
        self.registry_path.clone().unwrap_or_else(|| {
            let mut p = self.log_path.as_os_str().to_owned();
            p.push(".registry.json");
            PathBuf::from(p)
        })
    }

    /// The configured catalog file, or the built-in catalog.
    pub fn catalog(&self) -> Result<Catalog, ConfigError> {
        let Some(path) = &self.catalog_path else {
            return Ok(Catalog::builtin());
        };
        let err = |message: String| ConfigError::Catalog {
            path: path.clone(),
            message,
        };
        let file = fs::File::open(path).map_err(|e| err(e.to_string()))?;
        Catalog::parse(BufReader::new(file)).map_err(|e| err(e.to_string()))
    }
}
