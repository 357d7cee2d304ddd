//! Picking a configuration for a target average bit-width: start from the
//! closest member of a trained set and walk single layers along the ladder
//! until the storage lands within a tolerance window.

use rand::Rng;

use super::ladder::{canonical_ladder, LayerLadder};
use super::types::ModelQuantConfig;
use crate::error::{invalid, Error, Result};

/// Default half-width of the accepted bit window.
pub const DEFAULT_BITS_TOL: f64 = 0.05;

const MAX_WALK_STEPS: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub config: ModelQuantConfig,
    /// Set member the walk started from.
    pub member_index: usize,
    /// Smallest total rank distance to any member of the set.
    pub distance: usize,
}

/// Exact per-rank storage for each layer, so moves cost O(1) to evaluate.
struct Walker<'a> {
    ladder: &'a LayerLadder,
    storage: Vec<Vec<u64>>,
    total_weights: f64,
    target: f64,
    tol: f64,
}

impl<'a> Walker<'a> {
    fn new(ladder: &'a LayerLadder, shapes: &[(usize, usize)], target: f64, tol: f64) -> Self {
        let storage = shapes
            .iter()
            .map(|&(d, n)| ladder.entries().iter().map(|c| c.storage_bits(d, n)).collect())
            .collect();
        let total_weights = shapes.iter().map(|&(d, n)| (d * n) as f64).sum();
        Self {
            ladder,
            storage,
            total_weights,
            target,
            tol,
        }
    }

    fn avg(&self, bits: u64) -> f64 {
        bits as f64 / self.total_weights
    }

    fn in_window(&self, bits: u64) -> bool {
        (self.avg(bits) - self.target).abs() <= self.tol
    }

    fn total(&self, ranks: &[usize]) -> u64 {
        ranks.iter().enumerate().map(|(i, &r)| self.storage[i][r]).sum()
    }

    fn shifted(&self, r: usize, delta: isize) -> Option<usize> {
        let nr = r as isize + delta;
        (nr >= 0 && nr <= self.ladder.max_rank() as isize).then_some(nr as usize)
    }

    /// Best configuration in the window reachable with at most two unit
    /// moves: fewest moves first, then closest to the target.
    fn search_near(&self, ranks: &[usize]) -> Option<Vec<usize>> {
        let base = self.total(ranks);
        if self.in_window(base) {
            return Some(ranks.to_vec());
        }
        let n = ranks.len();
        let mut best: Option<(f64, Vec<usize>)> = None;
        let consider = |bits: u64, moves: &[(usize, usize)], best: &mut Option<(f64, Vec<usize>)>| {
            if !self.in_window(bits) {
                return;
            }
            let gap = (self.avg(bits) - self.target).abs();
            if best.as_ref().is_none_or(|(g, _)| gap < *g) {
                let mut r = ranks.to_vec();
                for &(i, nr) in moves {
                    r[i] = nr;
                }
                *best = Some((gap, r));
            }
        };
        for i in 0..n {
            for d in [-1isize, 1] {
                if let Some(nr) = self.shifted(ranks[i], d) {
                    let bits = base - self.storage[i][ranks[i]] + self.storage[i][nr];
                    consider(bits, &[(i, nr)], &mut best);
                }
            }
        }
        if best.is_some() {
            return best.map(|(_, r)| r);
        }
        for i in 0..n {
            for d in [-2isize, 2] {
                if let Some(nr) = self.shifted(ranks[i], d) {
                    let bits = base - self.storage[i][ranks[i]] + self.storage[i][nr];
                    consider(bits, &[(i, nr)], &mut best);
                }
            }
            for j in i + 1..n {
                for di in [-1isize, 1] {
                    for dj in [-1isize, 1] {
                        let (Some(ni), Some(nj)) =
                            (self.shifted(ranks[i], di), self.shifted(ranks[j], dj))
                        else {
                            continue;
                        };
                        let bits = base - self.storage[i][ranks[i]] + self.storage[i][ni]
                            - self.storage[j][ranks[j]]
                            + self.storage[j][nj];
                        consider(bits, &[(i, ni), (j, nj)], &mut best);
                    }
                }
            }
        }
        best.map(|(_, r)| r)
    }

    /// One move toward the target that does not jump past the window. Each
    /// layer moves to the nearest rank that strictly changes its storage
    /// (neighbouring ranks can tie, e.g. bf16 and fp16 absmax); the move
    /// with the largest storage change per rank step wins, lowest layer
    /// index on ties.
    fn greedy_move(&self, ranks: &[usize]) -> Option<(usize, usize)> {
        let base = self.total(ranks);
        let lo = (self.target - self.tol) * self.total_weights;
        let hi = (self.target + self.tol) * self.total_weights;
        let dir: isize = if base as f64 > hi { -1 } else { 1 };
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, &r) in ranks.iter().enumerate() {
            let cur = self.storage[i][r];
            let mut k = 1;
            let found = loop {
                let Some(nr) = self.shifted(r, dir * k as isize) else {
                    break None;
                };
                let next = self.storage[i][nr];
                if (dir < 0 && next < cur) || (dir > 0 && next > cur) {
                    break Some((nr, next));
                }
                k += 1;
            };
            let Some((nr, next)) = found else {
                continue;
            };
            let after = (base - cur + next) as f64;
            if (dir < 0 && after < lo) || (dir > 0 && after > hi) {
                continue;
            }
            let rate = cur.abs_diff(next) as f64 / k as f64;
            if best.is_none_or(|(g, _, _)| rate > g) {
                best = Some((rate, i, nr));
            }
        }
        best.map(|(_, i, nr)| (i, nr))
    }

    fn walk(&self, start: &[usize]) -> Result<Vec<usize>> {
        let mut ranks = start.to_vec();
        for _ in 0..MAX_WALK_STEPS {
            if let Some(found) = self.search_near(&ranks) {
                return Ok(found);
            }
            match self.greedy_move(&ranks) {
                Some((i, nr)) => ranks[i] = nr,
                None => break,
            }
        }
        Err(Error::Infeasible(format!(
            "cannot reach {:.4} ± {} bits (stuck at {:.4})",
            self.target,
            self.tol,
            self.avg(self.total(&ranks))
        )))
    }
}

fn check_target(b: f64, tol: f64) -> Result<()> {
    if !b.is_finite() || !tol.is_finite() || tol < 0.0 {
        return Err(invalid(format!("bad target {b} ± {tol}")));
    }
    Ok(())
}

/// Moves `cfg` along the canonical ladder until `|avg_bits − b| ≤ tol`.
pub fn adjust_to_budget(cfg: &ModelQuantConfig, b: f64, tol: f64) -> Result<ModelQuantConfig> {
    adjust_to_budget_on(canonical_ladder(), cfg, b, tol)
}

/// [`adjust_to_budget`] over an arbitrary ladder.
pub fn adjust_to_budget_on(
    ladder: &LayerLadder,
    cfg: &ModelQuantConfig,
    b: f64,
    tol: f64,
) -> Result<ModelQuantConfig> {
    check_target(b, tol)?;
    let start = ladder.ranks(cfg)?;
    let walker = Walker::new(ladder, &cfg.layer_shapes, b, tol);
    let ranks = walker.walk(&start)?;
    ladder.config_from_ranks(&ranks, &cfg.layer_shapes)
}

/// Configuration for budget `b` close (in total ladder-rank distance) to a
/// member of `set`; see [`select_for_budget_on`].
pub fn select_for_budget(set: &[ModelQuantConfig], b: f64, tol: f64) -> Result<Selection> {
    select_for_budget_on(canonical_ladder(), set, b, tol)
}

/// Returns the member closest to `b` if it already lies in the window,
/// otherwise walks from the member nearest in bits.
pub fn select_for_budget_on(
    ladder: &LayerLadder,
    set: &[ModelQuantConfig],
    b: f64,
    tol: f64,
) -> Result<Selection> {
    check_target(b, tol)?;
    let first = set.first().ok_or_else(|| invalid("configuration set is empty"))?;
    if set.iter().any(|c| c.layer_shapes != first.layer_shapes) {
        return Err(invalid("set members have different layer shapes"));
    }
    let member_ranks = set
        .iter()
        .map(|c| ladder.ranks(c))
        .collect::<Result<Vec<_>>>()?;
    let mut member_index = 0;
    let mut best_gap = f64::INFINITY;
    for (k, c) in set.iter().enumerate() {
        let gap = (c.avg_bits() - b).abs();
        if gap < best_gap {
            best_gap = gap;
            member_index = k;
        }
    }
    let walker = Walker::new(ladder, &first.layer_shapes, b, tol);
    let ranks = walker.walk(&member_ranks[member_index])?;
    let distance = member_ranks
        .iter()
        .map(|m| m.iter().zip(&ranks).map(|(&a, &b)| a.abs_diff(b)).sum::<usize>())
        .min()
        .expect("non-empty set");
    Ok(Selection {
        config: ladder.config_from_ranks(&ranks, &first.layer_shapes)?,
        member_index,
        distance,
    })
}

/// Random configuration with `|avg_bits − b| ≤ tol`: the best of a few
/// uniform rank draws, then adjusted into the window. A start the walk
/// cannot adjust is rejected and the draw repeated.
pub fn random_config_at_bits(
    layer_shapes: &[(usize, usize)],
    b: f64,
    tol: f64,
    rng: &mut impl Rng,
) -> Result<ModelQuantConfig> {
    check_target(b, tol)?;
    if layer_shapes.is_empty() {
        return Err(invalid("no layers"));
    }
    let ladder = canonical_ladder();
    let walker = Walker::new(ladder, layer_shapes, b, tol);
    let mut last = None;
    for _ in 0..RANDOM_ATTEMPTS {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for _ in 0..64 {
            let ranks: Vec<usize> = layer_shapes
                .iter()
                .map(|_| rng.random_range(0..ladder.len()))
                .collect();
            let gap = (walker.avg(walker.total(&ranks)) - b).abs();
            if best.as_ref().is_none_or(|(g, _)| gap < *g) {
                best = Some((gap, ranks));
            }
        }
        let (_, start) = best.expect("at least one draw");
        match walker.walk(&start) {
            Ok(ranks) => return ladder.config_from_ranks(&ranks, layer_shapes),
            Err(e @ Error::Infeasible(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

const RANDOM_ATTEMPTS: usize = 32;
