//! Quantization configuration space: layer and model configurations, the
//! storage-ordered ladder used as the search coordinate, configuration
//! embeddings, initial configuration sets and budget-driven selection.

mod embed;
mod format;
mod init;
mod ladder;
pub mod mckp;
mod select;
mod types;

pub use embed::{embed_layer, EmbeddingTables, EMBED_DIM, LAYER_EMBED_DIM, NUM_TABLES};
pub use format::{ConfigEntry, ConfigSetFile, ConfigSetMeta, CONFIG_SCHEMA_VERSION};
pub use init::{
    budget_grid, init_config_set, init_config_set_with, layer_config_error, layer_error_table,
    solve_budget, LayerErrorTable,
};
pub use ladder::{canonical_ladder, ladder_build, LayerLadder, CANONICAL_SHAPE, LADDER_VERSION};
pub use select::{
    adjust_to_budget, adjust_to_budget_on, random_config_at_bits, select_for_budget,
    select_for_budget_on, Selection, DEFAULT_BITS_TOL,
};
pub use types::{
    avg_bits, effective_bits, AbsmaxFormat, LayerQuantConfig, ModelQuantConfig, BLOCK0_SIZES,
    BLOCK1_SIZES, CODE_BITS, LATTICE_SIZE,
};
