use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Allowed code widths for the weights (`b0`) and for the block absmax
/// values (`b1`).
pub const CODE_BITS: [u8; 4] = [2, 3, 4, 8];
/// Allowed first-level block sizes (`B0`).
pub const BLOCK0_SIZES: [u32; 3] = [16, 32, 64];
/// Allowed second-level group sizes (`B1`).
pub const BLOCK1_SIZES: [u32; 3] = [16, 64, 256];
/// Number of distinct layer configurations.
pub const LATTICE_SIZE: usize = 432;

/// Storage format of the second-level (group) absmax values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbsmaxFormat {
    Bf16,
    Fp16,
    Fp32,
}

impl AbsmaxFormat {
    pub const ALL: [AbsmaxFormat; 3] = [AbsmaxFormat::Bf16, AbsmaxFormat::Fp16, AbsmaxFormat::Fp32];

    pub fn bits(self) -> u32 {
        match self {
            AbsmaxFormat::Bf16 | AbsmaxFormat::Fp16 => 16,
            AbsmaxFormat::Fp32 => 32,
        }
    }

    /// Rounds `x` to the nearest representable value of this format.
    pub fn round(self, x: f64) -> f64 {
        match self {
            AbsmaxFormat::Bf16 => half::bf16::from_f64(x).to_f64(),
            AbsmaxFormat::Fp16 => half::f16::from_f64(x).to_f64(),
            AbsmaxFormat::Fp32 => x as f32 as f64,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AbsmaxFormat::Bf16 => "bf16",
            AbsmaxFormat::Fp16 => "fp16",
            AbsmaxFormat::Fp32 => "fp32",
        }
    }
}

/// The five NormalFloat parameters of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawLayerConfig", into = "RawLayerConfig")]
pub struct LayerQuantConfig {
    /// Bits per weight code.
    pub b0: u8,
    /// Bits per block-absmax code.
    pub b1: u8,
    /// Storage format of the per-group absmax.
    pub b2: AbsmaxFormat,
    /// Weights per first-level block.
    pub block0: u32,
    /// Blocks per second-level group.
    pub block1: u32,
}

#[derive(Serialize, Deserialize)]
struct RawLayerConfig {
    b0: u8,
    b1: u8,
    b2: AbsmaxFormat,
    #[serde(rename = "B0")]
    block0: u32,
    #[serde(rename = "B1")]
    block1: u32,
}

impl TryFrom<RawLayerConfig> for LayerQuantConfig {
    type Error = Error;
    fn try_from(r: RawLayerConfig) -> Result<Self> {
        LayerQuantConfig::new(r.b0, r.b1, r.b2, r.block0, r.block1)
    }
}

impl From<LayerQuantConfig> for RawLayerConfig {
    fn from(c: LayerQuantConfig) -> Self {
        RawLayerConfig {
            b0: c.b0,
            b1: c.b1,
            b2: c.b2,
            block0: c.block0,
            block1: c.block1,
        }
    }
}

impl LayerQuantConfig {
    pub fn new(b0: u8, b1: u8, b2: AbsmaxFormat, block0: u32, block1: u32) -> Result<Self> {
        let cfg = Self {
            b0,
            b1,
            b2,
            block0,
            block1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !CODE_BITS.contains(&self.b0) {
            return Err(invalid(format!("b0 = {} not in {CODE_BITS:?}", self.b0)));
        }
        if !CODE_BITS.contains(&self.b1) {
            return Err(invalid(format!("b1 = {} not in {CODE_BITS:?}", self.b1)));
        }
        if !BLOCK0_SIZES.contains(&self.block0) {
            return Err(invalid(format!("B0 = {} not in {BLOCK0_SIZES:?}", self.block0)));
        }
        if !BLOCK1_SIZES.contains(&self.block1) {
            return Err(invalid(format!("B1 = {} not in {BLOCK1_SIZES:?}", self.block1)));
        }
        Ok(())
    }

    /// Every lattice point, in (b0, b1, b2, B0, B1) lexicographic order.
    pub fn all() -> Vec<LayerQuantConfig> {
        let mut out = Vec::with_capacity(LATTICE_SIZE);
        for &b0 in &CODE_BITS {
            for &b1 in &CODE_BITS {
                for b2 in AbsmaxFormat::ALL {
                    for &block0 in &BLOCK0_SIZES {
                        for &block1 in &BLOCK1_SIZES {
                            out.push(LayerQuantConfig {
                                b0,
                                b1,
                                b2,
                                block0,
                                block1,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Index of each field within its value domain, in the order
    /// (b0, b1, b2, B0, B1).
    pub fn value_indices(&self) -> [usize; 5] {
        let pos = |xs: &[u8], x: u8| xs.iter().position(|&v| v == x).expect("validated");
        let pos32 = |xs: &[u32], x: u32| xs.iter().position(|&v| v == x).expect("validated");
        [
            pos(&CODE_BITS, self.b0),
            pos(&CODE_BITS, self.b1),
            self.b2.index(),
            pos32(&BLOCK0_SIZES, self.block0),
            pos32(&BLOCK1_SIZES, self.block1),
        ]
    }

    /// Number of first-level blocks and second-level groups for a tensor of
    /// `numel` weights. Trailing partial blocks and groups count in full.
    pub fn block_counts(&self, numel: usize) -> (usize, usize) {
        let blocks = numel.div_ceil(self.block0 as usize);
        let groups = blocks.div_ceil(self.block1 as usize);
        (blocks, groups)
    }

    /// Exact storage of a `d × n` tensor in bits.
    pub fn storage_bits(&self, d: usize, n: usize) -> u64 {
        let numel = d * n;
        let (blocks, groups) = self.block_counts(numel);
        numel as u64 * self.b0 as u64
            + blocks as u64 * self.b1 as u64
            + groups as u64 * self.b2.bits() as u64
    }
}

impl fmt::Display for LayerQuantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(b0={}, b1={}, b2={}, B0={}, B1={})",
            self.b0,
            self.b1,
            self.b2.name(),
            self.block0,
            self.block1
        )
    }
}

/// Storage bits divided by weight count for one layer.
pub fn effective_bits(cfg: &LayerQuantConfig, d: usize, n: usize) -> f64 {
    cfg.storage_bits(d, n) as f64 / (d * n) as f64
}

/// A per-layer configuration for a whole model, together with the layer
/// shapes needed to weigh the layers by size.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawModelConfig", into = "RawModelConfig")]
pub struct ModelQuantConfig {
    pub layers: Vec<LayerQuantConfig>,
    pub layer_shapes: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct RawModelConfig {
    layers: Vec<LayerQuantConfig>,
    layer_shapes: Vec<(usize, usize)>,
}

impl TryFrom<RawModelConfig> for ModelQuantConfig {
    type Error = Error;
    fn try_from(r: RawModelConfig) -> Result<Self> {
        ModelQuantConfig::new(r.layers, r.layer_shapes)
    }
}

impl From<ModelQuantConfig> for RawModelConfig {
    fn from(c: ModelQuantConfig) -> Self {
        RawModelConfig {
            layers: c.layers,
            layer_shapes: c.layer_shapes,
        }
    }
}

impl ModelQuantConfig {
    pub fn new(layers: Vec<LayerQuantConfig>, layer_shapes: Vec<(usize, usize)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("model configuration needs at least one layer"));
        }
        if layers.len() != layer_shapes.len() {
            return Err(invalid(format!(
                "{} layer configs for {} layer shapes",
                layers.len(),
                layer_shapes.len()
            )));
        }
        if layer_shapes.iter().any(|&(d, n)| d == 0 || n == 0) {
            return Err(invalid("layer shapes must be positive"));
        }
        for c in &layers {
            c.validate()?;
        }
        Ok(Self {
            layers,
            layer_shapes,
        })
    }

    pub fn uniform(cfg: LayerQuantConfig, layer_shapes: Vec<(usize, usize)>) -> Result<Self> {
        Self::new(vec![cfg; layer_shapes.len()], layer_shapes)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn total_weights(&self) -> u64 {
        self.layer_shapes.iter().map(|&(d, n)| (d * n) as u64).sum()
    }

    pub fn storage_bits(&self) -> u64 {
        self.layers
            .iter()
            .zip(&self.layer_shapes)
            .map(|(c, &(d, n))| c.storage_bits(d, n))
            .sum()
    }

    /// Size-weighted average of the per-layer effective bits.
    pub fn avg_bits(&self) -> f64 {
        self.storage_bits() as f64 / self.total_weights() as f64
    }
}

/// Free-function form of [`ModelQuantConfig::avg_bits`].
pub fn avg_bits(cfg: &ModelQuantConfig) -> f64 {
    cfg.avg_bits()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_has_432_distinct_points() {
        let all = LayerQuantConfig::all();
        assert_eq!(all.len(), LATTICE_SIZE);
        let set: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), LATTICE_SIZE);
    }

    #[test]
    fn rejects_out_of_domain_fields() {
        assert!(LayerQuantConfig::new(5, 2, AbsmaxFormat::Bf16, 64, 256).is_err());
        assert!(LayerQuantConfig::new(2, 2, AbsmaxFormat::Bf16, 128, 256).is_err());
        assert!(LayerQuantConfig::new(2, 2, AbsmaxFormat::Bf16, 64, 32).is_err());
    }

    #[test]
    fn json_uses_upper_case_block_keys() {
        let c = LayerQuantConfig::new(4, 8, AbsmaxFormat::Fp16, 32, 64).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"b0":4,"b1":8,"b2":"fp16","B0":32,"B1":64}"#);
        let back: LayerQuantConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<LayerQuantConfig>(
            r#"{"b0":4,"b1":8,"b2":"fp16","B0":33,"B1":64}"#
        )
        .is_err());
    }

    #[test]
    fn model_config_validates_lengths() {
        let c = LayerQuantConfig::all()[0];
        assert!(ModelQuantConfig::new(vec![c], vec![(2, 2), (2, 2)]).is_err());
        assert!(ModelQuantConfig::new(vec![], vec![]).is_err());
    }
}
