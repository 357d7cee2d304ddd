//! Initial configuration sets: per-layer reconstruction error after
//! quantization plus a rank-`r` SVD correction, then an exact knapsack over
//! layers for each storage budget.

use rayon::prelude::*;

use super::ladder::{canonical_ladder, LayerLadder};
use super::mckp::{self, Item};
use super::types::{LayerQuantConfig, ModelQuantConfig};
use crate::error::{invalid, Result};
use crate::linalg::{truncated_svd, Mat};
use crate::nfquant::fake_quantize;
use crate::scalar::Scalar;

/// `‖R − R_r‖_F` where `R = W − W̃` and `R_r` is its best rank-`r`
/// approximation. Returns 0 when `r ≥ min(d, n)`, since the residual is then
/// captured exactly.
pub fn layer_config_error<T: Scalar>(w: &Mat<T>, c: &LayerQuantConfig, r: usize) -> Result<f64> {
    let residual = w.sub(&fake_quantize(w, c)?);
    if r >= w.rows().min(w.cols()) {
        return Ok(0.0);
    }
    let svd = truncated_svd(&residual, r)?;
    Ok(residual.sub(&svd.reconstruct()).frobenius_norm().as_f64())
}

/// Reconstruction error and exact storage for every candidate of one layer.
#[derive(Clone, Debug)]
pub struct LayerErrorTable {
    pub shape: (usize, usize),
    pub candidates: Vec<LayerQuantConfig>,
    pub errors: Vec<f64>,
    pub storage_bits: Vec<u64>,
}

/// Evaluates `layer_config_error` for each candidate (in parallel).
pub fn layer_error_table<T: Scalar>(
    w: &Mat<T>,
    candidates: &[LayerQuantConfig],
    r: usize,
) -> Result<LayerErrorTable> {
    if candidates.is_empty() {
        return Err(invalid("no candidate configurations"));
    }
    let errors = candidates
        .par_iter()
        .map(|c| layer_config_error(w, c, r))
        .collect::<Result<Vec<_>>>()?;
    let (d, n) = w.shape();
    Ok(LayerErrorTable {
        shape: (d, n),
        candidates: candidates.to_vec(),
        errors,
        storage_bits: candidates.iter().map(|c| c.storage_bits(d, n)).collect(),
    })
}

/// Minimum-error configuration with `avg_bits ≤ budget`.
pub fn solve_budget(tables: &[LayerErrorTable], budget: f64) -> Result<ModelQuantConfig> {
    if !budget.is_finite() || budget <= 0.0 {
        return Err(invalid(format!("budget {budget} must be positive")));
    }
    let total: u64 = tables.iter().map(|t| (t.shape.0 * t.shape.1) as u64).sum();
    let capacity = (budget * total as f64 + 1e-9).floor() as u64;
    let classes: Vec<Vec<Item>> = tables
        .iter()
        .map(|t| {
            t.storage_bits
                .iter()
                .zip(&t.errors)
                .map(|(&weight, &cost)| Item { weight, cost })
                .collect()
        })
        .collect();
    let sol = mckp::solve(&classes, capacity)?;
    ModelQuantConfig::new(
        sol.choice
            .iter()
            .zip(tables)
            .map(|(&i, t)| t.candidates[i])
            .collect(),
        tables.iter().map(|t| t.shape).collect(),
    )
}

/// One configuration per budget over the full ladder.
pub fn init_config_set<T: Scalar>(
    weights: &[Mat<T>],
    budgets: &[f64],
    r: usize,
) -> Result<Vec<ModelQuantConfig>> {
    init_config_set_with(weights, budgets, r, canonical_ladder())
}

/// [`init_config_set`] restricted to the configurations on `ladder`.
pub fn init_config_set_with<T: Scalar>(
    weights: &[Mat<T>],
    budgets: &[f64],
    r: usize,
    ladder: &LayerLadder,
) -> Result<Vec<ModelQuantConfig>> {
    if weights.is_empty() {
        return Err(invalid("no layers given"));
    }
    let tables = weights
        .iter()
        .map(|w| layer_error_table(w, ladder.entries(), r))
        .collect::<Result<Vec<_>>>()?;
    budgets.iter().map(|&b| solve_budget(&tables, b)).collect()
}

/// `start, start + step, …` up to `stop` (inclusive, with slack for
/// rounding), truncated to `max` values. Values are rounded to 1e-9 so that
/// grids written as decimals compare equal to their literals.
pub fn budget_grid(start: f64, stop: f64, step: f64, max: usize) -> Result<Vec<f64>> {
    if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 || stop < start {
        return Err(invalid(format!("bad grid {start}:{stop}:{step}")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count.min(max))
        .map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9)
        .collect())
}
