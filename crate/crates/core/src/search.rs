//! Surrogate-guided coordinate search over ladder ranks and the cyclic
//! train-then-search loop.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Mat;
use crate::pareto::{normalize, ParetoArchive, DEFAULT_SEGMENTS};
use crate::qconfig::{canonical_ladder, LayerLadder, ModelQuantConfig};
use crate::surrogate::{ehvi, gp_fit_with, GpModel, GpOptions};
use crate::tinynet::{forward_loss, init_stack, AdapterStack, Dataset, QuantCache, TargetNet, TrainOptions, Trainer};

/// Default number of coordinate steps per configuration and epoch.
pub const DEFAULT_FD_STEPS: usize = 3;
/// Finite-difference step, in ladder ranks.
pub const FD_DELTA: usize = 1;
/// Gradients below this magnitude count as zero.
pub const GRAD_TOL: f64 = 1e-12;

/// EHVI as a function of ladder ranks, against a fixed GP and front.
pub struct Acquisition<'a> {
    pub gp: &'a GpModel<f64>,
    pub front: Vec<(f64, f64)>,
    pub reference: (f64, f64),
    pub loss_max: f64,
    pub bits_max: f64,
    pub ladder: &'a LayerLadder,
    pub layer_shapes: &'a [(usize, usize)],
}

impl<'a> Acquisition<'a> {
    pub fn from_archive(gp: &'a GpModel<f64>, archive: &ParetoArchive, ladder: &'a LayerLadder, layer_shapes: &'a [(usize, usize)]) -> Self {
        let all: Vec<usize> = (0..archive.len()).collect();
        Self {
            gp,
            front: archive.front(&all),
            reference: archive.reference,
            loss_max: archive.loss_max,
            bits_max: archive.bits_max,
            ladder,
            layer_shapes,
        }
    }

    pub fn alpha(&self, ranks: &[usize]) -> Result<f64> {
        let cfg = self.ladder.config_from_ranks(ranks, self.layer_shapes)?;
        let (mu, var) = self.gp.predict(&self.ladder.normalized(ranks));
        let (_, f2) = normalize(0.0, self.loss_max, cfg.avg_bits(), self.bits_max)?;
        ehvi(
            mu / self.loss_max,
            var / (self.loss_max * self.loss_max),
            f2,
            &self.front,
            self.reference,
        )
    }
}

/// Central differences of the acquisition along each layer's rank, one-sided
/// at the ladder ends.
pub fn fd_gradient(ranks: &[usize], acq: &Acquisition) -> Result<Vec<f64>> {
    let top = acq.ladder.max_rank();
    let centre = acq.alpha(ranks)?;
    let mut g = Vec::with_capacity(ranks.len());
    for i in 0..ranks.len() {
        let at = |r: usize| -> Result<f64> {
            let mut p = ranks.to_vec();
            p[i] = r;
            acq.alpha(&p)
        };
        let r = ranks[i];
        let up = (r + FD_DELTA <= top).then(|| at(r + FD_DELTA)).transpose()?;
        let down = (r >= FD_DELTA).then(|| at(r - FD_DELTA)).transpose()?;
        let d = FD_DELTA as f64;
        g.push(match (up, down) {
            (Some(u), Some(l)) => (u - l) / (2.0 * d),
            (Some(u), None) => (u - centre) / d,
            (None, Some(l)) => (centre - l) / d,
            (None, None) => 0.0,
        });
    }
    Ok(g)
}

/// Moves the layer with the largest `|g_i|` (lowest index on ties) one rank
/// against the sign of its gradient, or along it when `ascend` is set.
/// Returns `None` when every component is below [`GRAD_TOL`].
pub fn step_ranks(ranks: &[usize], g: &[f64], top: usize, ascend: bool) -> Option<Vec<usize>> {
    let mut best: Option<usize> = None;
    for (i, v) in g.iter().enumerate() {
        if v.abs() >= GRAD_TOL && best.is_none_or(|b| v.abs() > g[b].abs()) {
            best = Some(i);
        }
    }
    let i = best?;
    let up = (g[i] < 0.0) != ascend;
    let mut out = ranks.to_vec();
    out[i] = if up { (ranks[i] + 1).min(top) } else { ranks[i].saturating_sub(1) };
    Some(out)
}

/// [`step_ranks`] on a configuration, descending the gradient sign.
pub fn coordinate_step(ladder: &LayerLadder, cfg: &ModelQuantConfig, g: &[f64]) -> Result<ModelQuantConfig> {
    let ranks = ladder.ranks(cfg)?;
    if g.len() != ranks.len() {
        return Err(invalid(format!("{} gradient entries for {} layers", g.len(), ranks.len())));
    }
    match step_ranks(&ranks, g, ladder.max_rank(), false) {
        Some(r) => ladder.config_from_ranks(&r, &cfg.layer_shapes),
        None => Ok(cfg.clone()),
    }
}

/// One line of the per-epoch history log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub hv: f64,
    pub set_size: usize,
    pub mean_f1: f64,
    pub wall_ms: u64,
}

pub fn write_history(records: &[EpochRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_history(text: &str) -> Result<Vec<EpochRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Archive, surrogate and search settings carried across epochs.
pub struct SearchState<'a> {
    pub archive: ParetoArchive,
    pub gp: GpModel<f64>,
    pub ladder: &'a LayerLadder,
    pub layer_shapes: Vec<(usize, usize)>,
    pub fd_steps: usize,
    pub ascend: bool,
    pub gp_options: GpOptions,
}

impl<'a> SearchState<'a> {
    /// Evaluates `configs` under snapshot 0, fixes `loss_max` to the largest
    /// of those losses, and fits the first surrogate. Returns the state and
    /// the segment-filtered ids of the distinct initial configurations.
    pub fn init(
        ladder: &'a LayerLadder,
        configs: &[ModelQuantConfig],
        segments: usize,
        fd_steps: usize,
        gp_options: GpOptions,
        eval: impl Fn(&ModelQuantConfig) -> Result<f64> + Sync,
    ) -> Result<(Self, Vec<usize>)> {
        let first = configs.first().ok_or_else(|| invalid("initial configuration set is empty"))?;
        let shapes = first.layer_shapes.clone();
        let mut unique: Vec<ModelQuantConfig> = Vec::new();
        for c in configs {
            if c.layer_shapes != shapes {
                return Err(invalid("initial configurations disagree on layer shapes"));
            }
            ladder.ranks(c)?;
            if !unique.contains(c) {
                unique.push(c.clone());
            }
        }
        let losses: Vec<f64> = unique.par_iter().map(&eval).collect::<Result<_>>()?;
        let loss_max = losses.iter().copied().fold(0.0, f64::max);
        if !(loss_max > 0.0) {
            return Err(Error::Numeric("initial losses are all zero".into()));
        }
        let mut archive = ParetoArchive::new(loss_max, ladder.max_bits(), segments)?;
        let mut ids = Vec::new();
        for (c, l) in unique.into_iter().zip(losses) {
            ids.push(archive.push(c, l, 0)?);
        }
        let gp = fit_archive(&archive, ladder, &gp_options)?;
        let set = archive.filter(&ids);
        Ok((
            Self {
                archive,
                gp,
                ladder,
                layer_shapes: shapes,
                fd_steps,
                ascend: false,
                gp_options,
            },
            set,
        ))
    }

    /// Normalized rank coordinates and losses of every archived point.
    pub fn training_data(&self) -> Result<(Mat<f64>, Vec<f64>)> {
        archive_data(&self.archive, self.ladder)
    }
}

fn archive_data(archive: &ParetoArchive, ladder: &LayerLadder) -> Result<(Mat<f64>, Vec<f64>)> {
    let n = archive.entries[0].config.num_layers();
    let mut xs = Vec::with_capacity(archive.len() * n);
    for e in &archive.entries {
        xs.extend(ladder.normalized(&ladder.ranks(&e.config)?));
    }
    let y = archive.entries.iter().map(|e| e.loss).collect();
    Ok((Mat::from_vec(archive.len(), n, xs)?, y))
}

fn fit_archive(archive: &ParetoArchive, ladder: &LayerLadder, opts: &GpOptions) -> Result<GpModel<f64>> {
    let (x, y) = archive_data(archive, ladder)?;
    gp_fit_with(&x, &y, opts)
}

/// Runs `fd_steps` coordinate steps from every member of `set`, evaluates
/// the new configurations under `snapshot`, merges, filters by segment and
/// refits the surrogate on the whole archive. Returns the new set.
pub fn run_search_epoch(
    state: &mut SearchState,
    set: &[usize],
    snapshot: usize,
    eval: impl Fn(&ModelQuantConfig) -> Result<f64> + Sync,
) -> Result<Vec<usize>> {
    let acq = Acquisition::from_archive(&state.gp, &state.archive, state.ladder, &state.layer_shapes);
    let top = state.ladder.max_rank();
    let moved: Vec<Vec<usize>> = set
        .par_iter()
        .map(|&id| {
            let mut ranks = state.ladder.ranks(&state.archive.entries[id].config)?;
            for _ in 0..state.fd_steps {
                let g = fd_gradient(&ranks, &acq)?;
                match step_ranks(&ranks, &g, top, state.ascend) {
                    Some(r) => ranks = r,
                    None => break,
                }
            }
            Ok(ranks)
        })
        .collect::<Result<_>>()?;

    let mut fresh: Vec<Vec<usize>> = Vec::new();
    let mut merged: Vec<usize> = set.to_vec();
    for ranks in moved {
        let cfg = state.ladder.config_from_ranks(&ranks, &state.layer_shapes)?;
        match state.archive.find(&cfg) {
            Some(id) => merged.push(id),
            None if !fresh.contains(&ranks) => fresh.push(ranks),
            None => {}
        }
    }
    fresh.sort();
    let configs: Vec<ModelQuantConfig> = fresh
        .iter()
        .map(|r| state.ladder.config_from_ranks(r, &state.layer_shapes))
        .collect::<Result<_>>()?;
    let losses: Vec<f64> = configs.par_iter().map(&eval).collect::<Result<_>>()?;
    for (c, l) in configs.into_iter().zip(losses) {
        merged.push(state.archive.push(c, l, snapshot)?);
    }
    merged.sort_unstable();
    merged.dedup();
    let out = state.archive.filter(&merged);
    state.gp = fit_archive(&state.archive, state.ladder, &state.gp_options)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoaOptions {
    pub epochs: usize,
    pub fd_steps: usize,
    pub segments: usize,
    pub rank: usize,
    /// Step budget, learning rate, batch size and seed for θ training; the
    /// step count applies per epoch.
    pub train: TrainOptions,
    pub gp: GpOptions,
    /// Disable to train on the frozen initial set.
    pub search: bool,
    pub ascend: bool,
}

impl Default for CoaOptions {
    fn default() -> Self {
        Self {
            epochs: 5,
            fd_steps: DEFAULT_FD_STEPS,
            segments: DEFAULT_SEGMENTS,
            rank: crate::tinynet::DEFAULT_RANK,
            train: TrainOptions::default(),
            gp: GpOptions::default(),
            search: true,
            ascend: false,
        }
    }
}

/// Outcome of [`run_coa`]. `snapshots[k]` holds the parameters that
/// archive entries with `snapshot == k` were scored under; snapshot 0 is
/// the initialization.
#[derive(Clone, Debug)]
pub struct CoaResult {
    pub stack: AdapterStack,
    pub set: Vec<ModelQuantConfig>,
    pub set_ids: Vec<usize>,
    pub archive: ParetoArchive,
    pub history: Vec<EpochRecord>,
    pub snapshots: Vec<AdapterStack>,
    pub gp: GpModel<f64>,
}

/// Calibration loss of `cfg` under `stack` with the hypernetwork active.
pub fn calib_loss(net: &TargetNet, data: &Dataset, stack: &AdapterStack, cfg: &ModelQuantConfig, cache: &QuantCache) -> Result<f64> {
    let (x, y) = data.calib_batch();
    forward_loss(net, cfg, stack, true, &x, &y, cache)
}

/// Cyclic training: each epoch trains θ on the current set, then expands
/// and filters the set by surrogate-guided search.
pub fn run_coa(
    net: &TargetNet,
    data: &Dataset,
    init_set: &[ModelQuantConfig],
    opts: &CoaOptions,
    cache: &QuantCache,
) -> Result<CoaResult> {
    let ladder = canonical_ladder();
    let stack = init_stack(net, opts.rank, true, opts.train.seed)?;
    let mut snapshots = vec![stack.clone()];
    let (mut state, mut set) = SearchState::init(ladder, init_set, opts.segments, opts.fd_steps, opts.gp.clone(), |c| {
        calib_loss(net, data, &snapshots[0], c, cache)
    })?;
    state.ascend = opts.ascend;
    let mut trainer = Trainer::new(net, data, cache, stack, true, opts.train.seed, opts.train.batch_size)?;
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        let start = Instant::now();
        let wrap = |e: Error| Error::Epoch {
            epoch,
            source: Box::new(e),
        };
        let configs: Vec<ModelQuantConfig> = set.iter().map(|&i| state.archive.entries[i].config.clone()).collect();
        trainer.train(&configs, opts.train.steps, opts.train.lr).map_err(wrap)?;
        snapshots.push(trainer.stack.clone());
        if opts.search {
            let snap = &snapshots[epoch];
            set = run_search_epoch(&mut state, &set, epoch, |c| calib_loss(net, data, snap, c, cache)).map_err(wrap)?;
        }
        let losses: Vec<f64> = set.iter().map(|&i| state.archive.entries[i].loss).collect();
        history.push(EpochRecord {
            epoch,
            hv: state.archive.hypervolume(&set),
            set_size: set.len(),
            mean_f1: losses.iter().sum::<f64>() / losses.len() as f64,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        log::info!(
            "epoch {epoch}: hv {:.6} set {} mean f1 {:.6}",
            history[epoch - 1].hv,
            set.len(),
            history[epoch - 1].mean_f1
        );
    }
    Ok(CoaResult {
        stack: trainer.into_stack(),
        set: set.iter().map(|&i| state.archive.entries[i].config.clone()).collect(),
        set_ids: set,
        archive: state.archive,
        history,
        snapshots,
        gp: state.gp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_picks_largest_magnitude() {
        assert_eq!(step_ranks(&[5, 5, 5], &[0.1, -0.4, 0.2], 431, false), Some(vec![5, 6, 5]));
        assert_eq!(step_ranks(&[5, 5, 5], &[0.1, -0.4, 0.2], 431, true), Some(vec![5, 4, 5]));
        assert_eq!(step_ranks(&[5, 5], &[0.3, -0.3], 431, false), Some(vec![4, 5]));
        assert_eq!(step_ranks(&[5, 5], &[0.0, 1e-13], 431, false), None);
        assert_eq!(step_ranks(&[431], &[-1.0], 431, false), Some(vec![431]));
        assert_eq!(step_ranks(&[0], &[1.0], 431, false), Some(vec![0]));
    }

    #[test]
    fn coordinate_step_on_configs() {
        let l = canonical_ladder();
        let shapes = vec![(16, 32), (32, 32), (32, 1)];
        let cfg = l.config_from_ranks(&[10, 20, 431], &shapes).unwrap();
        let out = coordinate_step(l, &cfg, &[0.1, -0.4, 0.2]).unwrap();
        assert_eq!(l.ranks(&out).unwrap(), vec![10, 21, 431]);
        assert_eq!(coordinate_step(l, &cfg, &[0.0; 3]).unwrap(), cfg);
        let out = coordinate_step(l, &cfg, &[0.0, 0.0, -2.0]).unwrap();
        assert_eq!(l.ranks(&out).unwrap(), vec![10, 20, 431]);
        assert!(coordinate_step(l, &cfg, &[0.0; 2]).is_err());
    }

    #[test]
    fn history_round_trip() {
        let h = vec![
            EpochRecord {
                epoch: 1,
                hv: 0.25,
                set_size: 7,
                mean_f1: 0.1,
                wall_ms: 12,
            },
            EpochRecord {
                epoch: 2,
                hv: 0.3,
                set_size: 9,
                mean_f1: 0.05,
                wall_ms: 8,
            },
        ];
        let mut buf = Vec::new();
        write_history(&h, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"epoch\":1,\"hv\":0.25,\"set_size\":7,\"mean_f1\":0.1,\"wall_ms\":12}"));
        assert_eq!(read_history(&text).unwrap(), h);
    }
}
