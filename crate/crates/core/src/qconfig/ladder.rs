use super::types::{LayerQuantConfig, ModelQuantConfig};
use crate::error::{invalid, Result};
use std::collections::HashMap;
use std::sync::OnceLock;

/// Shape at which the canonical ladder is ordered. Its 16384 weights are a
/// multiple of every `B0·B1`, so per-weight cost is exactly
/// `b0 + b1/B0 + bits(b2)/(B0·B1)` for every lattice point.
pub const CANONICAL_SHAPE: (usize, usize) = (128, 128);
/// Bumped whenever the ladder ordering changes.
pub const LADDER_VERSION: u32 = 1;

/// Layer configurations sorted by storage cost at a reference shape; the
/// position in this order (the rank) is the per-layer search coordinate.
#[derive(Clone, Debug)]
pub struct LayerLadder {
    shape: (usize, usize),
    entries: Vec<LayerQuantConfig>,
    bits: Vec<f64>,
    rank_of: HashMap<LayerQuantConfig, usize>,
}

fn sort_key(c: &LayerQuantConfig, shape: (usize, usize)) -> (u64, u8, u8, u32, usize, u32, u32) {
    (
        c.storage_bits(shape.0, shape.1),
        c.b0,
        c.b1,
        c.b2.bits(),
        c.b2.index(),
        c.block0,
        c.block1,
    )
}

/// The full 432-entry ladder ordered at `layer_shape`.
pub fn ladder_build(layer_shape: (usize, usize)) -> LayerLadder {
    LayerLadder::from_configs(LayerQuantConfig::all(), layer_shape)
        .expect("the lattice is non-empty")
}

/// Process-wide ladder at [`CANONICAL_SHAPE`].
pub fn canonical_ladder() -> &'static LayerLadder {
    static LADDER: OnceLock<LayerLadder> = OnceLock::new();
    LADDER.get_or_init(|| ladder_build(CANONICAL_SHAPE))
}

impl LayerLadder {
    /// Ladder over an arbitrary subset of the lattice (duplicates removed).
    pub fn from_configs(
        configs: impl IntoIterator<Item = LayerQuantConfig>,
        shape: (usize, usize),
    ) -> Result<Self> {
        if shape.0 == 0 || shape.1 == 0 {
            return Err(invalid("ladder shape must be positive"));
        }
        let mut entries: Vec<LayerQuantConfig> = configs.into_iter().collect();
        for c in &entries {
            c.validate()?;
        }
        entries.sort_by_key(|c| sort_key(c, shape));
        entries.dedup();
        if entries.is_empty() {
            return Err(invalid("ladder needs at least one configuration"));
        }
        let bits = entries
            .iter()
            .map(|c| super::types::effective_bits(c, shape.0, shape.1))
            .collect();
        let rank_of = entries.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        Ok(Self {
            shape,
            entries,
            bits,
            rank_of,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_rank(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[LayerQuantConfig] {
        &self.entries
    }

    pub fn entry(&self, rank: usize) -> LayerQuantConfig {
        self.entries[rank]
    }

    /// Effective bits of `entry(rank)` at the ladder's reference shape.
    pub fn bits(&self, rank: usize) -> f64 {
        self.bits[rank]
    }

    pub fn min_bits(&self) -> f64 {
        self.bits[0]
    }

    pub fn max_bits(&self) -> f64 {
        self.bits[self.max_rank()]
    }

    pub fn rank_of(&self, c: &LayerQuantConfig) -> Option<usize> {
        self.rank_of.get(c).copied()
    }

    pub fn ranks(&self, cfg: &ModelQuantConfig) -> Result<Vec<usize>> {
        cfg.layers
            .iter()
            .map(|c| {
                self.rank_of(c)
                    .ok_or_else(|| invalid(format!("config {c} is not on this ladder")))
            })
            .collect()
    }

    pub fn config_from_ranks(
        &self,
        ranks: &[usize],
        layer_shapes: &[(usize, usize)],
    ) -> Result<ModelQuantConfig> {
        if let Some(&r) = ranks.iter().find(|&&r| r >= self.len()) {
            return Err(invalid(format!("rank {r} beyond ladder end {}", self.max_rank())));
        }
        ModelQuantConfig::new(
            ranks.iter().map(|&r| self.entries[r]).collect(),
            layer_shapes.to_vec(),
        )
    }

    /// Ranks scaled to `[0, 1]` by the top rank.
    pub fn normalized(&self, ranks: &[usize]) -> Vec<f64> {
        let top = self.max_rank().max(1) as f64;
        ranks.iter().map(|&r| r as f64 / top).collect()
    }
}
