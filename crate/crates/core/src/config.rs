//! Run configuration: defaults, then a TOML file, then `key=value`
//! overrides, then command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::editor::{DEFAULT_DISTANCE_THRESHOLD, PAINT_LR_GAP};
use crate::error::{Result, UvaError};
use crate::model::ModelConfig;
use crate::renderer::RenderSettings;
use crate::synth_data::SceneSpec;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditorConfig {
    pub distance_threshold: f64,
    pub dilation: u32,
    pub paint_iterations: u64,
    pub code_lr: f64,
    /// Decoder rate is `code_lr / lr_gap`.
    pub lr_gap: f64,
    pub freeze_decoder: bool,
    pub paint_batch_rays: usize,
}

impl Default for EditorConfig {
    fn default() -> Self {
        Self {
            distance_threshold: DEFAULT_DISTANCE_THRESHOLD,
            dilation: 3,
            paint_iterations: 2000,
            code_lr: 5e-3,
            lr_gap: PAINT_LR_GAP,
            freeze_decoder: true,
            paint_batch_rays: 256,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub train: TrainConfig,
    pub render: RenderSettings,
    pub model: ModelConfig,
    pub editor: EditorConfig,
}

fn defaults_tree() -> Value {
    Value::try_from(RunConfig::default()).expect("defaults serialise")
}

/// Reports the first key of `given` that has no counterpart in `known`.
fn check_keys(given: &Value, known: &Value, prefix: &str) -> Result<()> {
    if let (Value::Table(g), Value::Table(k)) = (given, known) {
        for (key, v) in g {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            match k.get(key) {
                Some(sub) => check_keys(v, sub, &path)?,
                None => return Err(UvaError::Config(format!("unknown key `{path}`"))),
            }
        }
    }
    Ok(())
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn from_tree(tree: Value) -> Result<RunConfig> {
    tree.try_into().map_err(|e: toml::de::Error| UvaError::Config(e.message().to_string()))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let given: Value = text
            .parse::<toml::Table>()
            .map(Value::Table)
            .map_err(|e| UvaError::Config(e.to_string()))?;
        let mut tree = defaults_tree();
        check_keys(&given, &tree, "")?;
        merge(&mut tree, given);
        from_tree(tree)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UvaError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            UvaError::Config(m) => UvaError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// Sets one dotted key, e.g. `train.lr_start=1e-3`. The value is read as
    /// a TOML literal, falling back to a bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut tree = Value::try_from(&*self).expect("config serialises");
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = match slot {
                Value::Table(t) => t
                    .get_mut(part)
                    .ok_or_else(|| UvaError::Config(format!("unknown key `{key}`")))?,
                _ => return Err(UvaError::Config(format!("unknown key `{key}`"))),
            };
        }
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(value.to_string()));
        *slot = match (&*slot, parsed) {
            (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
            (_, v) => v,
        };
        *self = from_tree(tree).map_err(|e| match e {
            UvaError::Config(m) => UvaError::Config(format!("`{key}`: {m}")),
            other => other,
        })?;
        Ok(())
    }

    /// Applies `key=value` strings in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| UvaError::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.train.validate()?;
        self.render.validate()?;
        let e = &self.editor;
        if !(e.code_lr > 0.0 && e.lr_gap >= 1.0 && e.distance_threshold > 0.0 && e.paint_batch_rays > 0) {
            return Err(UvaError::Config("editor settings out of range".into()));
        }
        Ok(())
    }
}
