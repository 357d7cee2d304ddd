//! On-disk JSON form of a configuration set.

use serde::{Deserialize, Serialize};

use super::ladder::LADDER_VERSION;
use super::types::{LayerQuantConfig, ModelQuantConfig};
use crate::error::{invalid, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSetMeta {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(rename = "N")]
    pub num_layers: usize,
    pub layer_shapes: Vec<(usize, usize)>,
    pub ladder_version: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub layers: Vec<LayerQuantConfig>,
    pub avg_bits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSetFile {
    pub meta: ConfigSetMeta,
    pub configs: Vec<ConfigEntry>,
}

impl ConfigSetFile {
    pub fn new(seed: u64, layer_shapes: Vec<(usize, usize)>, configs: &[ModelQuantConfig]) -> Result<Self> {
        let mut entries = Vec::with_capacity(configs.len());
        for c in configs {
            if c.layer_shapes != layer_shapes {
                return Err(invalid("config layer shapes differ from the set's shapes"));
            }
            entries.push(ConfigEntry {
                layers: c.layers.clone(),
                avg_bits: c.avg_bits(),
            });
        }
        Ok(Self {
            meta: ConfigSetMeta {
                schema_version: CONFIG_SCHEMA_VERSION,
                seed,
                num_layers: layer_shapes.len(),
                layer_shapes,
                ladder_version: LADDER_VERSION,
            },
            configs: entries,
        })
    }

    /// Validates the file and rebuilds the model configurations.
    pub fn to_configs(&self) -> Result<Vec<ModelQuantConfig>> {
        if self.meta.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported config schema version {}",
                self.meta.schema_version
            )));
        }
        if self.meta.num_layers != self.meta.layer_shapes.len() {
            return Err(invalid("N does not match the number of layer shapes"));
        }
        self.configs
            .iter()
            .map(|e| {
                let c = ModelQuantConfig::new(e.layers.clone(), self.meta.layer_shapes.clone())?;
                if (c.avg_bits() - e.avg_bits).abs() > 1e-9 {
                    return Err(invalid(format!(
                        "stored avg_bits {} disagrees with recomputed {}",
                        e.avg_bits,
                        c.avg_bits()
                    )));
                }
                Ok(c)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(s)?;
        f.to_configs()?;
        Ok(f)
    }
}
