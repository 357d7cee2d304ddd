use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use qadapt::pareto::{hypervolume_2d, normalize};
use qadapt::qconfig::{
    budget_grid, canonical_ladder, layer_error_table, random_config_at_bits, select_for_budget, solve_budget,
    ConfigSetFile, ModelQuantConfig,
};
use qadapt::search::{run_coa, write_history, CoaOptions};
use qadapt::surrogate::{GpOptions, GpParams};
use qadapt::tinynet::{
    forward_loss, read_data, stream_rng, train_lora_per_config, train_shared, write_data, AdapterStack, Checkpoint,
    Dataset, QuantCache, Stream, TargetNet, TrainOptions,
};
use qadapt::{Error, Result};

use crate::args::*;
use crate::fsio::{read_text, write_atomic};
use crate::manifest::{sidecar, DatasetInfo, RunManifest};

pub const CURVE_HEADER: [&str; 4] = ["bits", "loss_seen", "loss_unseen", "config_id"];
pub const REPORT_VERSION: u32 = 1;

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Parses `start:stop:step`.
pub fn parse_range(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(invalid(format!("expected start:stop:step, got {s:?}")));
    }
    let v: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| invalid(format!("bad number {p:?} in {s:?}"))))
        .collect::<Result<_>>()?;
    Ok((v[0], v[1], v[2]))
}

fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| invalid(format!("bad reference point {s:?}"))))
        .collect::<Result<_>>()?;
    match v[..] {
        [a, b] => Ok((a, b)),
        _ => Err(invalid(format!("reference point needs two values, got {s:?}"))),
    }
}

pub fn load_data(path: &Path) -> Result<(TargetNet, Dataset)> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    read_data(&mut std::io::BufReader::new(f))
}

pub fn load_configs(path: &Path) -> Result<(ConfigSetFile, Vec<ModelQuantConfig>)> {
    let file = ConfigSetFile::from_json(&read_text(path)?)?;
    let configs = file.to_configs()?;
    Ok((file, configs))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(v)?.as_bytes())
}

fn dataset_info(path: &Path, data: &Dataset) -> DatasetInfo {
    DatasetInfo {
        path: path.to_path_buf(),
        seed: data.seed,
        samples: data.len(),
        noise_std: data.noise_std,
    }
}

fn with_net(mut m: RunManifest, net: &TargetNet) -> RunManifest {
    m.num_layers = Some(net.num_layers());
    m.layer_shapes = Some(net.layer_shapes());
    m
}

pub fn gen_data(a: &GenDataArgs, raw: &[String]) -> Result<()> {
    let start = Instant::now();
    let (net, data) = qadapt::tinynet::gen_teacher_student(a.seed, a.samples, a.noise)?;
    let mut buf = Vec::new();
    write_data(&mut buf, &net, &data)?;
    write_atomic(&a.out, &buf)?;
    log::info!(
        "{} samples: train {}, calib {}, val {}",
        data.len(),
        data.train.len(),
        data.calib.len(),
        data.val.len()
    );
    let mut m = with_net(RunManifest::new("gen-data", raw), &net);
    m.seed = Some(a.seed);
    m.dataset = Some(dataset_info(&a.out, &data));
    m.outputs = vec![a.out.clone()];
    m.summary = Some(json!({
        "train": data.train.len(),
        "calib": data.calib.len(),
        "val": data.val.len(),
    }));
    m.wall_ms = start.elapsed().as_millis() as u64;
    m.write(&sidecar(&a.out))
}

pub fn init_configs(a: &InitConfigsArgs, raw: &[String]) -> Result<()> {
    let start = Instant::now();
    let (net, data) = load_data(&a.data)?;
    let (lo, hi, step) = parse_range(&a.budgets)?;
    let budgets = budget_grid(lo, hi, step, a.max_budgets)?;
    let ladder = canonical_ladder();
    let tables = net
        .layers
        .iter()
        .map(|w| layer_error_table(w, ladder.entries(), a.rank))
        .collect::<Result<Vec<_>>>()?;
    let mut configs: Vec<ModelQuantConfig> = Vec::new();
    let mut skipped = Vec::new();
    for &b in &budgets {
        match solve_budget(&tables, b) {
            Ok(c) => {
                if !configs.contains(&c) {
                    configs.push(c);
                }
            }
            Err(Error::Infeasible(msg)) => {
                log::warn!("budget {b} skipped: {msg}");
                skipped.push(b);
            }
            Err(e) => return Err(e),
        }
    }
    log::info!("{} configurations from {} budgets ({} infeasible)", configs.len(), budgets.len(), skipped.len());
    let file = ConfigSetFile::new(data.seed, net.layer_shapes(), &configs)?;
    write_atomic(&a.out, file.to_json()?.as_bytes())?;
    let mut m = with_net(RunManifest::new("init-configs", raw), &net);
    m.seed = Some(data.seed);
    m.rank = Some(a.rank);
    m.dataset = Some(dataset_info(&a.data, &data));
    m.outputs = vec![a.out.clone()];
    m.summary = Some(json!({ "budgets": budgets, "skipped": skipped, "configs": configs.len() }));
    m.wall_ms = start.elapsed().as_millis() as u64;
    m.write(&sidecar(&a.out))
}

/// Hyperparameters and size of the final surrogate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpDump {
    pub params: GpParams,
    pub jitter: f64,
    pub num_points: usize,
}

/// Archive with the ids of the final set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveDump {
    pub archive: qadapt::pareto::ParetoArchive,
    pub set_ids: Vec<usize>,
}

pub fn member_dir(run: &Path, k: usize) -> PathBuf {
    run.join(format!("config_{k}"))
}

fn check_train_flags(a: &TrainArgs) -> Result<()> {
    let per_config = matches!(a.mode, Mode::PerConfig | Mode::PerConfigSvd);
    if per_config {
        if a.bits.is_empty() == a.config.is_none() {
            return Err(invalid("per-config modes need exactly one of --bits or --config"));
        }
    } else if !a.bits.is_empty() || a.config.is_some() {
        return Err(invalid("--bits and --config apply only to per-config modes"));
    }
    if (a.no_search || a.ascend) && a.mode != Mode::Coa {
        return Err(invalid("--no-search and --ascend apply only to --mode coa"));
    }
    if a.rank == 0 || a.batch_size == 0 || a.segments == 0 {
        return Err(invalid("rank, batch size and segment count must be positive"));
    }
    if !a.lr.is_finite() || a.lr < 0.0 {
        return Err(invalid(format!("learning rate {} must be finite and non-negative", a.lr)));
    }
    Ok(())
}

pub fn train(a: &TrainArgs, raw: &[String]) -> Result<()> {
    check_train_flags(a)?;
    let start = Instant::now();
    let (net, data) = load_data(&a.data)?;
    let (set_file, set) = load_configs(&a.configs)?;
    if set_file.meta.layer_shapes != net.layer_shapes() {
        return Err(invalid("configuration set does not match the network's layer shapes"));
    }
    std::fs::create_dir_all(&a.out)?;
    let cache = QuantCache::new();
    let mut m = with_net(RunManifest::new("train", raw), &net);
    m.seed = Some(a.seed);
    m.mode = Some(a.mode);
    m.rank = Some(a.rank);
    m.lr = Some(a.lr);
    m.epochs = Some(a.epochs);
    m.steps = Some(a.steps);
    m.batch_size = Some(a.batch_size);
    m.dataset = Some(dataset_info(&a.data, &data));
    let total = TrainOptions {
        steps: a.epochs * a.steps,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let seed = set_file.meta.seed;
    let shapes = net.layer_shapes();
    let mut outputs = Vec::new();
    match a.mode {
        Mode::Coa => {
            m.fd_steps = Some(a.fd_steps);
            m.segments = Some(a.segments);
            let opts = CoaOptions {
                epochs: a.epochs,
                fd_steps: a.fd_steps,
                segments: a.segments,
                rank: a.rank,
                train: TrainOptions { steps: a.steps, ..total },
                gp: GpOptions {
                    seed: a.seed,
                    ..GpOptions::default()
                },
                search: !a.no_search,
                ascend: a.ascend,
            };
            let res = run_coa(&net, &data, &set, &opts, &cache)?;
            let ck = Checkpoint::new(a.seed, (a.epochs * a.steps) as u64, res.stack.clone());
            write_atomic(&a.out.join("checkpoint.json"), ck.to_json()?.as_bytes())?;
            let snaps: Vec<Checkpoint> = res
                .snapshots
                .iter()
                .enumerate()
                .map(|(k, s)| Checkpoint::new(a.seed, (k * a.steps) as u64, s.clone()))
                .collect();
            write_atomic(&a.out.join("snapshots.json"), serde_json::to_string(&snaps)?.as_bytes())?;
            let fin = ConfigSetFile::new(seed, shapes.clone(), &res.set)?;
            write_atomic(&a.out.join("final_configs.json"), fin.to_json()?.as_bytes())?;
            let mut hist = Vec::new();
            write_history(&res.history, &mut hist)?;
            write_atomic(&a.out.join("history.jsonl"), &hist)?;
            let all: Vec<usize> = (0..res.archive.len()).collect();
            let mut csv = Vec::new();
            res.archive.write_csv(&all, &mut csv)?;
            write_atomic(&a.out.join("archive.csv"), &csv)?;
            write_json(
                &a.out.join("archive.json"),
                &ArchiveDump {
                    archive: res.archive.clone(),
                    set_ids: res.set_ids.clone(),
                },
            )?;
            write_json(
                &a.out.join("gp.json"),
                &GpDump {
                    params: res.gp.params,
                    jitter: res.gp.jitter,
                    num_points: res.gp.num_points(),
                },
            )?;
            for f in [
                "checkpoint.json",
                "snapshots.json",
                "final_configs.json",
                "history.jsonl",
                "archive.csv",
                "archive.json",
                "gp.json",
            ] {
                outputs.push(a.out.join(f));
            }
            m.summary = Some(json!({
                "final_set": res.set.len(),
                "archive": res.archive.len(),
                "hv": res.history.iter().map(|h| h.hv).collect::<Vec<_>>(),
            }));
        }
        Mode::Shared => {
            let t = train_shared(&net, &data, &set, a.rank, &total, &cache)?;
            let ck = Checkpoint::new(a.seed, total.steps as u64, t.stack);
            write_atomic(&a.out.join("checkpoint.json"), ck.to_json()?.as_bytes())?;
            write_atomic(&a.out.join("final_configs.json"), set_file.to_json()?.as_bytes())?;
            outputs.push(a.out.join("checkpoint.json"));
            outputs.push(a.out.join("final_configs.json"));
        }
        Mode::PerConfig | Mode::PerConfigSvd => {
            let svd = a.mode == Mode::PerConfigSvd;
            let targets: Vec<(Option<f64>, ModelQuantConfig)> = if let Some(p) = &a.config {
                let (_, cs) = load_configs(p)?;
                if cs.len() != 1 {
                    return Err(invalid(format!("--config file holds {} entries, expected 1", cs.len())));
                }
                vec![(None, cs[0].clone())]
            } else {
                a.bits
                    .iter()
                    .map(|&b| Ok((Some(b), select_for_budget(&set, b, a.tol)?.config)))
                    .collect::<Result<_>>()?
            };
            let trained: Vec<AdapterStack> = targets
                .par_iter()
                .map(|(_, c)| train_lora_per_config(&net, &data, c, a.rank, svd, &total, &cache).map(|t| t.stack))
                .collect::<Result<_>>()?;
            for (k, ((b, c), stack)) in targets.iter().zip(trained).enumerate() {
                let dir = member_dir(&a.out, k);
                let ck = Checkpoint::new(a.seed, total.steps as u64, stack);
                write_atomic(&dir.join("checkpoint.json"), ck.to_json()?.as_bytes())?;
                let one = ConfigSetFile::new(seed, shapes.clone(), std::slice::from_ref(c))?;
                write_atomic(&dir.join("config.json"), one.to_json()?.as_bytes())?;
                let mut mm = m.clone();
                mm.outputs = vec![dir.join("checkpoint.json"), dir.join("config.json")];
                mm.summary = Some(json!({ "member": k, "target_bits": b, "avg_bits": c.avg_bits() }));
                mm.wall_ms = start.elapsed().as_millis() as u64;
                mm.write(&dir.join("manifest.json"))?;
                outputs.extend(mm.outputs);
            }
            let cs: Vec<ModelQuantConfig> = targets.into_iter().map(|(_, c)| c).collect();
            let fin = ConfigSetFile::new(seed, shapes.clone(), &cs)?;
            write_atomic(&a.out.join("final_configs.json"), fin.to_json()?.as_bytes())?;
            outputs.push(a.out.join("final_configs.json"));
        }
    }
    m.outputs = outputs;
    m.wall_ms = start.elapsed().as_millis() as u64;
    m.write(&a.out.join("manifest.json"))
}

/// Trained parameters of a run directory: one stack, or one per member for
/// per-config runs.
pub struct RunArtifacts {
    pub manifest: RunManifest,
    pub set: Vec<ModelQuantConfig>,
    pub set_file: ConfigSetFile,
    pub stacks: Vec<AdapterStack>,
}

impl RunArtifacts {
    pub fn load(run: &Path) -> Result<Self> {
        let manifest = RunManifest::read(&run.join("manifest.json"))?;
        let (set_file, set) = load_configs(&run.join("final_configs.json"))?;
        let read = |p: PathBuf| -> Result<AdapterStack> { Ok(Checkpoint::from_json(&read_text(&p)?)?.stack) };
        let stacks = match manifest.mode {
            Some(Mode::PerConfig | Mode::PerConfigSvd) => (0..set.len())
                .map(|k| read(member_dir(run, k).join("checkpoint.json")))
                .collect::<Result<_>>()?,
            _ => vec![read(run.join("checkpoint.json"))?],
        };
        Ok(Self {
            manifest,
            set,
            set_file,
            stacks,
        })
    }

    /// Stack used for configurations derived from set member `k`.
    pub fn stack_for(&self, k: usize) -> &AdapterStack {
        if self.stacks.len() == 1 {
            &self.stacks[0]
        } else {
            &self.stacks[k]
        }
    }
}

/// Validation loss of `cfg` under `stack`, using the hypernetwork when the
/// stack has one.
pub fn val_loss(net: &TargetNet, data: &Dataset, stack: &AdapterStack, cfg: &ModelQuantConfig, cache: &QuantCache) -> Result<f64> {
    let (x, y) = data.val_batch();
    forward_loss(net, cfg, stack, stack.has_hyper(), &x, &y, cache)
}

/// One grid point of an evaluation curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub bits: f64,
    pub loss_seen: f64,
    pub loss_unseen: f64,
    pub config_id: usize,
}

pub fn curve_paths(out: &Path) -> (PathBuf, PathBuf) {
    let s = out.as_os_str().to_owned();
    let mut a = s.clone();
    a.push(".seen.json");
    let mut b = s;
    b.push(".unseen.json");
    (PathBuf::from(a), PathBuf::from(b))
}

pub fn eval_curve(a: &EvalCurveArgs, raw: &[String]) -> Result<()> {
    let start = Instant::now();
    let run = RunArtifacts::load(&a.run)?;
    let data_path = match (&a.data, &run.manifest.dataset) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.path.clone(),
        (None, None) => return Err(invalid("run manifest names no dataset; pass --data")),
    };
    let (net, data) = load_data(&data_path)?;
    let shapes = net.layer_shapes();
    if run.set_file.meta.layer_shapes != shapes {
        return Err(invalid("run configurations do not match the dataset's network"));
    }
    let (lo, hi, step) = parse_range(&a.bits)?;
    let grid = budget_grid(lo, hi, step, usize::MAX)?;
    let mut rng = stream_rng(a.unseen_seed, Stream::Unseen);
    let mut picks = Vec::new();
    for &b in &grid {
        let sel = match select_for_budget(&run.set, b, a.tol) {
            Ok(s) => s,
            Err(Error::Infeasible(msg)) => {
                log::warn!("{b} bits skipped (seen): {msg}");
                continue;
            }
            Err(e) => return Err(e),
        };
        let unseen = match random_config_at_bits(&shapes, b, a.tol, &mut rng) {
            Ok(c) => c,
            Err(Error::Infeasible(msg)) => {
                log::warn!("{b} bits skipped (unseen): {msg}");
                continue;
            }
            Err(e) => return Err(e),
        };
        picks.push((b, sel, unseen));
    }
    let cache = QuantCache::new();
    let rows: Vec<CurveRow> = picks
        .par_iter()
        .enumerate()
        .map(|(k, (b, sel, unseen))| {
            let stack = run.stack_for(sel.member_index);
            Ok(CurveRow {
                bits: *b,
                loss_seen: val_loss(&net, &data, stack, &sel.config, &cache)?,
                loss_unseen: val_loss(&net, &data, stack, unseen, &cache)?,
                config_id: k,
            })
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(Error::Infeasible("no grid point is reachable".into()));
    }
    let n = rows.len() as f64;
    let mean_seen = rows.iter().map(|r| r.loss_seen).sum::<f64>() / n;
    let mean_unseen = rows.iter().map(|r| r.loss_unseen).sum::<f64>() / n;
    let gap = rows.iter().map(|r| (r.loss_unseen - r.loss_seen) / r.loss_seen).sum::<f64>() / n;
    let abs_gap = rows.iter().map(|r| ((r.loss_unseen - r.loss_seen) / r.loss_seen).abs()).sum::<f64>() / n;
    write_atomic(&a.out, &curve_csv(&rows, Some((mean_seen, mean_unseen, gap)))?)?;
    let (seen_path, unseen_path) = curve_paths(&a.out);
    let seen: Vec<ModelQuantConfig> = picks.iter().map(|p| p.1.config.clone()).collect();
    let unseen: Vec<ModelQuantConfig> = picks.iter().map(|p| p.2.clone()).collect();
    let seed = run.set_file.meta.seed;
    write_atomic(&seen_path, ConfigSetFile::new(seed, shapes.clone(), &seen)?.to_json()?.as_bytes())?;
    write_atomic(&unseen_path, ConfigSetFile::new(a.unseen_seed, shapes, &unseen)?.to_json()?.as_bytes())?;
    log::info!("{} grid points, mean relative seen/unseen gap {gap:.4}", rows.len());
    let mut m = with_net(RunManifest::new("eval-curve", raw), &net);
    m.seed = Some(a.unseen_seed);
    m.mode = run.manifest.mode;
    m.dataset = Some(dataset_info(&data_path, &data));
    m.outputs = vec![a.out.clone(), seen_path, unseen_path];
    m.summary = Some(json!({
        "rows": rows.len(),
        "skipped": grid.len() - rows.len(),
        "mean_loss_seen": mean_seen,
        "mean_loss_unseen": mean_unseen,
        "mean_rel_gap": gap,
        "mean_abs_rel_gap": abs_gap,
    }));
    m.wall_ms = start.elapsed().as_millis() as u64;
    m.write(&sidecar(&a.out))
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Curve CSV; the optional summary row carries the mean seen and unseen
/// losses and the mean relative gap in the `config_id` column.
pub fn curve_csv(rows: &[CurveRow], summary: Option<(f64, f64, f64)>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CURVE_HEADER).map_err(e)?;
    for r in rows {
        w.write_record([num(r.bits), num(r.loss_seen), num(r.loss_unseen), r.config_id.to_string()])
            .map_err(e)?;
    }
    if let Some((s, u, g)) = summary {
        w.write_record(["summary".to_string(), num(s), num(u), num(g)]).map_err(e)?;
    }
    w.into_inner().map_err(|err| Error::Io(std::io::Error::other(err.to_string())))
}

/// Reads the grid rows of a curve CSV, ignoring the summary row.
pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    let text = read_text(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let e = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let header: Vec<String> = r.headers().map_err(e)?.iter().map(str::to_string).collect();
    if header != CURVE_HEADER {
        return Err(invalid(format!("{}: unexpected curve header {header:?}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(e)?;
        if &rec[0] == "summary" {
            continue;
        }
        let f = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| invalid(format!("{}: bad number {:?}", path.display(), &rec[i])))
        };
        rows.push(CurveRow {
            bits: f(0)?,
            loss_seen: f(1)?,
            loss_unseen: f(2)?,
            config_id: rec[3]
                .parse()
                .map_err(|_| invalid(format!("{}: bad config id {:?}", path.display(), &rec[3])))?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    pub path: PathBuf,
    pub hv: f64,
    /// Mean of `(loss_baseline − loss) / loss_baseline` over matched grid
    /// points; positive means lower loss than the baseline.
    pub gap: f64,
    pub matched_points: Vec<f64>,
    /// Normalized `(loss, bits)` points the hypervolume is computed from.
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoReport {
    pub schema_version: u32,
    pub reference: (f64, f64),
    pub loss_max: f64,
    pub bits_max: f64,
    pub baseline: String,
    pub methods: Vec<MethodReport>,
}

fn grid_key(b: f64) -> i64 {
    (b * 1e6).round() as i64
}

/// Joint normalization, hypervolumes and gaps against `baseline`.
pub fn build_report(
    curves: &[(String, PathBuf, Vec<CurveRow>)],
    baseline: &str,
    at: &[f64],
    reference: (f64, f64),
) -> Result<ParetoReport> {
    if curves.is_empty() {
        return Err(invalid("no curves given"));
    }
    let base = curves
        .iter()
        .find(|c| c.0 == baseline)
        .ok_or_else(|| invalid(format!("baseline {baseline:?} is not among the curves")))?;
    let loss_max = curves
        .iter()
        .flat_map(|c| c.2.iter().map(|r| r.loss_seen))
        .fold(0.0, f64::max);
    let bits_max = curves
        .iter()
        .flat_map(|c| c.2.iter().map(|r| r.bits))
        .fold(canonical_ladder().max_bits(), f64::max);
    let base_map: BTreeMap<i64, f64> = base.2.iter().map(|r| (grid_key(r.bits), r.loss_seen)).collect();
    let mut methods = Vec::new();
    for (name, path, rows) in curves {
        if rows.is_empty() {
            return Err(invalid(format!("curve {name:?} has no rows")));
        }
        let points = rows
            .iter()
            .map(|r| normalize(r.loss_seen, loss_max, r.bits, bits_max))
            .collect::<Result<Vec<_>>>()?;
        let hv = hypervolume_2d(&points, reference);
        let mine: BTreeMap<i64, f64> = rows.iter().map(|r| (grid_key(r.bits), r.loss_seen)).collect();
        let keys: Vec<i64> = if at.is_empty() {
            mine.keys().filter(|k| base_map.contains_key(k)).copied().collect()
        } else {
            let missing: Vec<f64> = at
                .iter()
                .filter(|&&b| !mine.contains_key(&grid_key(b)) || !base_map.contains_key(&grid_key(b)))
                .copied()
                .collect();
            if !missing.is_empty() {
                return Err(invalid(format!(
                    "grid points {missing:?} missing from {name:?} or baseline {baseline:?}"
                )));
            }
            at.iter().map(|&b| grid_key(b)).collect()
        };
        if keys.is_empty() {
            let g = |m: &BTreeMap<i64, f64>| m.keys().map(|&k| k as f64 / 1e6).collect::<Vec<_>>();
            return Err(invalid(format!(
                "bit grids of {name:?} {:?} and baseline {baseline:?} {:?} do not overlap",
                g(&mine),
                g(&base_map)
            )));
        }
        let gap = keys.iter().map(|k| (base_map[k] - mine[k]) / base_map[k]).sum::<f64>() / keys.len() as f64;
        methods.push(MethodReport {
            name: name.clone(),
            path: path.clone(),
            hv,
            gap,
            matched_points: keys.iter().map(|&k| k as f64 / 1e6).collect(),
            points,
        });
    }
    Ok(ParetoReport {
        schema_version: REPORT_VERSION,
        reference,
        loss_max,
        bits_max,
        baseline: baseline.to_string(),
        methods,
    })
}

pub fn pareto_report(a: &ParetoReportArgs, raw: &[String]) -> Result<()> {
    let start = Instant::now();
    let names: Vec<String> = if a.names.is_empty() {
        a.curves
            .iter()
            .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
            .collect()
    } else if a.names.len() == a.curves.len() {
        a.names.clone()
    } else {
        return Err(invalid(format!("{} names for {} curves", a.names.len(), a.curves.len())));
    };
    let mut seen = std::collections::HashSet::new();
    if let Some(d) = names.iter().find(|n| !seen.insert(n.as_str())) {
        return Err(invalid(format!("duplicate curve name {d:?}")));
    }
    let curves = names
        .iter()
        .zip(&a.curves)
        .map(|(n, p)| Ok((n.clone(), p.clone(), read_curve(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let baseline = a.baseline.clone().unwrap_or_else(|| names[0].clone());
    let report = build_report(&curves, &baseline, &a.at, parse_pair(&a.reference)?)?;
    write_json(&a.out, &report)?;
    let csv_path = a.out.with_extension("csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["name", "hv", "gap", "matched_points"]).map_err(e)?;
    for mr in &report.methods {
        w.write_record([mr.name.clone(), num(mr.hv), num(mr.gap), mr.matched_points.len().to_string()])
            .map_err(e)?;
    }
    let bytes = w.into_inner().map_err(|err| Error::Io(std::io::Error::other(err.to_string())))?;
    write_atomic(&csv_path, &bytes)?;
    let mut m = RunManifest::new("pareto-report", raw);
    m.outputs = vec![a.out.clone(), csv_path];
    m.summary = Some(json!(report
        .methods
        .iter()
        .map(|r| json!({ "name": r.name, "hv": r.hv, "gap": r.gap }))
        .collect::<Vec<_>>()));
    m.wall_ms = start.elapsed().as_millis() as u64;
    m.write(&sidecar(&a.out))
}

pub fn select_config(a: &SelectConfigArgs, raw: &[String]) -> Result<()> {
    let start = Instant::now();
    let (file, set) = load_configs(&a.run.join("final_configs.json"))?;
    let sel = select_for_budget(&set, a.bits, a.tol)?;
    let out = ConfigSetFile::new(file.meta.seed, file.meta.layer_shapes.clone(), std::slice::from_ref(&sel.config))?;
    write_atomic(&a.out, out.to_json()?.as_bytes())?;
    println!(
        "{}",
        serde_json::to_string(&json!({
            "layers": sel.config.layers,
            "avg_bits": sel.config.avg_bits(),
            "member_index": sel.member_index,
            "distance": sel.distance,
        }))?
    );
    let mut m = RunManifest::new("select-config", raw);
    m.num_layers = Some(file.meta.num_layers);
    m.layer_shapes = Some(file.meta.layer_shapes);
    m.outputs = vec![a.out.clone()];
    m.summary = Some(json!({ "avg_bits": sel.config.avg_bits(), "member_index": sel.member_index }));
    m.wall_ms = start.elapsed().as_millis() as u64;
    m.write(&sidecar(&a.out))
}
