use super::types::{LayerQuantConfig, BLOCK0_SIZES, BLOCK1_SIZES, CODE_BITS};
use crate::error::{invalid, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Width of every individual embedding table row.
pub const EMBED_DIM: usize = 4;
/// Five value tables, one layer-name table, one block-index table.
pub const NUM_TABLES: usize = 7;
/// Length of the concatenated layer embedding `[z, m, b]`.
pub const LAYER_EMBED_DIM: usize = NUM_TABLES * EMBED_DIM;

/// Learned lookup tables that turn a layer configuration, its layer name and
/// its block index into a fixed-length vector.
///
/// Tables `0..5` hold one row per value of (b0, b1, b2, B0, B1); table 5 is
/// indexed by layer-name id and table 6 by block index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct EmbeddingTables<T> {
    pub tables: Vec<Mat<T>>,
}

impl<T: Scalar> EmbeddingTables<T> {
    fn row_counts(num_names: usize, num_blocks: usize) -> [usize; NUM_TABLES] {
        [
            CODE_BITS.len(),
            CODE_BITS.len(),
            3,
            BLOCK0_SIZES.len(),
            BLOCK1_SIZES.len(),
            num_names,
            num_blocks,
        ]
    }

    pub fn zeros(num_names: usize, num_blocks: usize) -> Self {
        Self {
            tables: Self::row_counts(num_names, num_blocks)
                .iter()
                .map(|&r| Mat::zeros(r, EMBED_DIM))
                .collect(),
        }
    }

    pub fn random(num_names: usize, num_blocks: usize, scale: f64, rng: &mut impl rand::Rng) -> Self {
        Self {
            tables: Self::row_counts(num_names, num_blocks)
                .iter()
                .map(|&r| Mat::randn(r, EMBED_DIM, scale, rng))
                .collect(),
        }
    }

    pub fn num_names(&self) -> usize {
        self.tables[5].rows()
    }

    pub fn num_blocks(&self) -> usize {
        self.tables[6].rows()
    }

    /// Row index into each of the seven tables.
    pub fn row_indices(
        &self,
        c: &LayerQuantConfig,
        layer_name_id: usize,
        block_idx: usize,
    ) -> Result<[usize; NUM_TABLES]> {
        c.validate()?;
        if layer_name_id >= self.num_names() {
            return Err(invalid(format!(
                "layer name id {layer_name_id} outside table of {}",
                self.num_names()
            )));
        }
        if block_idx >= self.num_blocks() {
            return Err(invalid(format!(
                "block index {block_idx} outside table of {}",
                self.num_blocks()
            )));
        }
        let v = c.value_indices();
        Ok([v[0], v[1], v[2], v[3], v[4], layer_name_id, block_idx])
    }

    /// Concatenated embedding `[z, m, b]` of one layer.
    pub fn embed_layer(
        &self,
        c: &LayerQuantConfig,
        layer_name_id: usize,
        block_idx: usize,
    ) -> Result<Vec<T>> {
        let rows = self.row_indices(c, layer_name_id, block_idx)?;
        let mut out = Vec::with_capacity(LAYER_EMBED_DIM);
        for (t, &r) in self.tables.iter().zip(&rows) {
            out.extend_from_slice(t.row(r));
        }
        Ok(out)
    }

    /// True if all 432 configurations embed to pairwise distinct vectors for
    /// the given name and block.
    pub fn is_injective(&self, layer_name_id: usize, block_idx: usize) -> bool {
        let all = LayerQuantConfig::all();
        let mut seen: Vec<Vec<u64>> = all
            .iter()
            .map(|c| {
                self.embed_layer(c, layer_name_id, block_idx)
                    .map(|v| v.iter().map(|x| x.as_f64().to_bits()).collect())
                    .unwrap_or_default()
            })
            .collect();
        seen.sort();
        seen.windows(2).all(|w| w[0] != w[1])
    }
}

/// Free-function form of [`EmbeddingTables::embed_layer`].
pub fn embed_layer<T: Scalar>(
    c: &LayerQuantConfig,
    layer_name_id: usize,
    block_idx: usize,
    tables: &EmbeddingTables<T>,
) -> Result<Vec<T>> {
    tables.embed_layer(c, layer_name_id, block_idx)
}
