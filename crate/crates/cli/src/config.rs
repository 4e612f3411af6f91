//! Run configuration and its three layers: built-in defaults, an optional
//! JSON file, and command-line overrides, merged in that order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fusion_core::sampler::build_schedule;
use fusion_core::{FusionParams, NormalizationBounds, SamplerConfig, SearchConfig, Strategies};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

/// World used by the toy backend when none is configured.
pub const DEFAULT_WORLD: &str = "builtin:default";

/// Where velocities and similarities come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    #[default]
    Toy,
    /// `host:port` of a server speaking the line protocol.
    Remote(String),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "toy" => Ok(BackendSpec::Toy),
            _ => match s.strip_prefix("remote:") {
                Some(addr) if !addr.is_empty() => Ok(BackendSpec::Remote(addr.to_string())),
                _ => Err(format!("backend must be `toy` or `remote:ADDR`, got `{s}`")),
            },
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        b.to_string()
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Toy => f.write_str("toy"),
            BackendSpec::Remote(addr) => write!(f, "remote:{addr}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendSpec,
    /// Toy world: a JSON file or `builtin:NAME`. Only meaningful with the toy backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world: Option<String>,
    pub pair: [String; 2],
    pub strategies: Strategies,
    /// Explicit parameters for `fuse` and the sweep defaults.
    pub params: FusionParams,
    pub sampler: SamplerConfig,
    pub search: SearchConfig,
    pub bounds: NormalizationBounds,
    /// Left out of serialized snapshots so a replay into another directory
    /// writes the same trace.
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendSpec::Toy,
            world: None,
            pair: ["A".into(), "B".into()],
            strategies: Strategies::default(),
            params: FusionParams::default(),
            sampler: SamplerConfig::default(),
            search: SearchConfig::default(),
            bounds: NormalizationBounds::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Merges `file` and then `overrides` over the defaults, fills in the
    /// default world and validates the result.
    pub fn layered(file: Option<Value>, overrides: Value) -> Result<Self, CliError> {
        let mut merged = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        if let Some(file) = file {
            if !file.is_object() {
                return Err(CliError::usage("configuration must be a JSON object"));
            }
            merge(&mut merged, file);
        }
        merge(&mut merged, overrides);
        let mut cfg: RunConfig = serde_json::from_value(merged)
            .map_err(|e| CliError::usage(format!("invalid configuration: {e}")))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    fn resolve(&mut self) -> Result<(), CliError> {
        match (&self.backend, &self.world) {
            (BackendSpec::Toy, None) => self.world = Some(DEFAULT_WORLD.to_string()),
            (BackendSpec::Remote(_), Some(_)) => {
                return Err(CliError::usage(
                    "a world and a remote backend are mutually exclusive",
                ))
            }
            _ => {}
        }
        if self.pair.iter().any(String::is_empty) {
            return Err(CliError::usage("concept ids must be non-empty"));
        }
        let invalid = |e: fusion_core::FusionError| CliError::usage(e);
        self.params.validate().map_err(invalid)?;
        self.search.validate().map_err(invalid)?;
        self.bounds.validate().map_err(invalid)?;
        build_schedule(&self.sampler).map_err(invalid)?;
        Ok(())
    }

    /// The configuration as recorded in trace headers.
    pub fn snapshot(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Recursive merge: objects merge key by key, anything else replaces.
pub fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(base), Value::Object(overlay)) => {
            for (key, value) in overlay {
                merge(base.entry(key).or_insert(Value::Null), value);
            }
        }
        (slot, value) => *slot = value,
    }
}

/// Sets `path` inside `root`, creating intermediate objects.
pub fn set_path(root: &mut Value, path: &[&str], value: Value) {
    let mut node = root;
    for key in path {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        node = node
            .as_object_mut()
            .expect("object")
            .entry(key.to_string())
            .or_insert(Value::Null);
    }
    *node = value;
}

/// Reads a configuration file. A trace file is accepted too, in which case
/// the configuration recorded in its header is used.
pub fn load_config_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if let Ok(Value::Object(head)) = serde_json::from_str::<Value>(first) {
        if head.get("kind").and_then(Value::as_str) == Some("header") {
            return head
                .get("config")
                .cloned()
                .ok_or_else(|| CliError::usage("trace header has no config"));
        }
    }
    serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("invalid JSON in {}: {e}", path.display())))
}
