use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use qadapt::pareto::{hypervolume_2d, normalize};
use qadapt::qconfig::{canonical_ladder, ConfigSetFile};
use qadapt::search::read_history;
use qadapt::tinynet::{init_stack, Checkpoint, QuantCache};
use qadapt_cli::commands::{load_configs, load_data, read_curve, val_loss, ParetoReport, RunArtifacts};
use qadapt_cli::manifest::{sidecar, RunManifest};
use qadapt_cli::run_from;

fn run(args: &[&str]) -> qadapt::Result<()> {
    let mut argv = vec!["qadapt"];
    argv.extend_from_slice(args);
    run_from(argv)
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qadapt"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small end-to-end pipeline shared by the tests in this file.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let p = |n: &str| root.join(n).to_string_lossy().into_owned();
        run(&["gen-data", "--seed", "3", "--samples", "400", "--out", &p("data.bin")]).unwrap();
        run(&["init-configs", "--data", &p("data.bin"), "--out", &p("configs.json")]).unwrap();
        let common = ["--data", &p("data.bin"), "--configs", &p("configs.json"), "--seed", "5", "--steps", "20", "--lr", "1e-3"];
        let mut coa = vec!["train", "--mode", "coa", "--epochs", "2"];
        coa.extend_from_slice(&common);
        let out = p("coa");
        coa.extend_from_slice(&["--out", &out]);
        run(&coa).unwrap();
        let mut pc = vec!["train", "--mode", "per-config", "--epochs", "1", "--bits", "2.5,3,3.5,4"];
        pc.extend_from_slice(&common);
        let out = p("pc");
        pc.extend_from_slice(&["--out", &out]);
        run(&pc).unwrap();
        run(&["eval-curve", "--run", &p("coa"), "--unseen-seed", "9", "--bits", "2.5:6:0.5", "--out", &p("coa.csv")]).unwrap();
        Fixture { _dir: dir, root }
    })
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    run(&["gen-data", "--seed", "4", "--samples", "300", "--out", s(&a)]).unwrap();
    run(&["gen-data", "--seed", "4", "--samples", "300", "--out", s(&b)]).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let m = RunManifest::read(&sidecar(&a)).unwrap();
    let split = m.summary.unwrap();
    assert_eq!((split["train"].as_u64(), split["calib"].as_u64(), split["val"].as_u64()), (Some(240), Some(32), Some(60)));
    assert_eq!(m.seed, Some(4));
    assert_eq!(m.num_layers, Some(8));
}

#[test]
fn too_few_samples_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.bin");
    let o = bin(&["gen-data", "--seed", "1", "--samples", "63", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_seed_is_a_validation_error() {
    let o = bin(&["gen-data", "--out", "x.bin"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn initial_configs_are_feasible() {
    let f = fixture();
    let (file, cfgs) = load_configs(&f.path("configs.json")).unwrap();
    let m = RunManifest::read(&sidecar(&f.path("configs.json"))).unwrap();
    let budgets: Vec<f64> = serde_json::from_value(m.summary.unwrap()["budgets"].clone()).unwrap();
    assert_eq!(budgets.len(), 50);
    assert!(!cfgs.is_empty() && cfgs.len() <= 50);
    let l = canonical_ladder();
    for c in &cfgs {
        l.ranks(c).unwrap();
        assert!(c.avg_bits() <= 7.25 + 1e-12);
    }
    assert_eq!(file.meta.layer_shapes, load_data(&f.path("data.bin")).unwrap().0.layer_shapes());
    // Every budget's solution is in the file and fits that budget.
    let (net, _) = load_data(&f.path("data.bin")).unwrap();
    for &b in &budgets {
        let c = &qadapt::qconfig::init_config_set(&net.layers, &[b], 4).unwrap()[0];
        assert!(c.avg_bits() <= b + 1e-12);
        assert!(cfgs.contains(c));
    }
}

#[test]
fn budgets_below_the_ladder_are_skipped() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.json");
    run(&["init-configs", "--data", s(&f.path("data.bin")), "--budgets", "1:2:0.5", "--out", s(&out)]).unwrap();
    let (_, cfgs) = load_configs(&out).unwrap();
    assert!(cfgs.is_empty());
    let m = RunManifest::read(&sidecar(&out)).unwrap();
    assert_eq!(m.summary.unwrap()["skipped"].as_array().unwrap().len(), 3);
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run(&[
        "train", "--mode", "coa", "--epochs", "0", "--data", s(&f.path("data.bin")), "--configs",
        s(&f.path("configs.json")), "--seed", "17", "--out", s(&out),
    ])
    .unwrap();
    let (net, _) = load_data(&f.path("data.bin")).unwrap();
    let ck = Checkpoint::from_json(&std::fs::read_to_string(out.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ck.stack, init_stack(&net, 4, true, 17).unwrap());
    assert!(std::fs::read_to_string(out.join("history.jsonl")).unwrap().is_empty());
}

#[test]
fn coa_history_is_monotone() {
    let f = fixture();
    let h = read_history(&std::fs::read_to_string(f.path("coa/history.jsonl")).unwrap()).unwrap();
    assert_eq!(h.len(), 2);
    for w in h.windows(2) {
        assert!(w[1].hv >= w[0].hv);
    }
    let m = RunManifest::read(&f.path("coa/manifest.json")).unwrap();
    assert_eq!((m.epochs, m.fd_steps, m.segments, m.seed), (Some(2), Some(3), Some(40), Some(5)));
    for o in &m.outputs {
        assert!(o.exists(), "{}", o.display());
    }
}

#[test]
fn per_config_fans_out() {
    let f = fixture();
    for k in 0..4 {
        let d = f.path(&format!("pc/config_{k}"));
        assert!(d.join("checkpoint.json").exists());
        let m = RunManifest::read(&d.join("manifest.json")).unwrap();
        let target = m.summary.unwrap()["target_bits"].as_f64().unwrap();
        let (_, c) = load_configs(&d.join("config.json")).unwrap();
        assert!((c[0].avg_bits() - target).abs() <= 0.05);
    }
    assert!(!f.path("pc/config_4").exists());
    let run = RunArtifacts::load(&f.path("pc")).unwrap();
    assert_eq!(run.stacks.len(), 4);
}

#[test]
fn mode_flag_mismatch_is_rejected() {
    let f = fixture();
    let o = bin(&[
        "train", "--mode", "shared", "--bits", "3", "--data", s(&f.path("data.bin")), "--configs",
        s(&f.path("configs.json")), "--seed", "1", "--out", s(&f.path("never")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&[
        "train", "--mode", "per-config", "--data", s(&f.path("data.bin")), "--configs",
        s(&f.path("configs.json")), "--seed", "1", "--out", s(&f.path("never")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn curve_rows_and_member_reevaluation() {
    let f = fixture();
    let rows = read_curve(&f.path("coa.csv")).unwrap();
    assert!(!rows.is_empty());
    let grid: Vec<f64> = (0..8).map(|k| 2.5 + 0.5 * k as f64).collect();
    for r in &rows {
        assert!(grid.iter().any(|g| (g - r.bits).abs() < 1e-9));
    }
    let (_, seen) = load_configs(&PathBuf::from(format!("{}.seen.json", s(&f.path("coa.csv"))))).unwrap();
    let (_, unseen) = load_configs(&PathBuf::from(format!("{}.unseen.json", s(&f.path("coa.csv"))))).unwrap();
    let run = RunArtifacts::load(&f.path("coa")).unwrap();
    let (net, data) = load_data(&f.path("data.bin")).unwrap();
    let cache = QuantCache::new();
    for r in &rows {
        let c = &seen[r.config_id];
        let u = &unseen[r.config_id];
        assert!((c.avg_bits() - r.bits).abs() <= 0.05 + 1e-12);
        assert!((u.avg_bits() - r.bits).abs() <= 0.05 + 1e-12);
        assert!((val_loss(&net, &data, &run.stacks[0], c, &cache).unwrap() - r.loss_seen).abs() <= 1e-10);
        assert!((val_loss(&net, &data, &run.stacks[0], u, &cache).unwrap() - r.loss_unseen).abs() <= 1e-10);
    }
    // A grid point equal to a final-set member's bits evaluates that member.
    let member = &run.set[0];
    let b = format!("{0}:{0}:1", member.avg_bits());
    let out = f.path("member.csv");
    run_from(["qadapt", "eval-curve", "--run", s(&f.path("coa")), "--unseen-seed", "1", "--bits", &b, "--out", s(&out)]).unwrap();
    let row = &read_curve(&out).unwrap()[0];
    let direct = val_loss(&net, &data, &run.stacks[0], member, &cache).unwrap();
    let (_, picked) = load_configs(&PathBuf::from(format!("{}.seen.json", s(&out)))).unwrap();
    assert!(run.set.contains(&picked[0]));
    assert!((picked[0].avg_bits() - member.avg_bits()).abs() < 1e-12);
    let direct_picked = val_loss(&net, &data, &run.stacks[0], &picked[0], &cache).unwrap();
    assert!((row.loss_seen - direct_picked).abs() <= 1e-10);
    if picked[0] == *member {
        assert!((row.loss_seen - direct).abs() <= 1e-10);
    }
}

#[test]
fn summary_row_holds_the_mean_gap() {
    let f = fixture();
    let rows = read_curve(&f.path("coa.csv")).unwrap();
    let text = std::fs::read_to_string(f.path("coa.csv")).unwrap();
    let last = text.lines().last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    assert_eq!(fields[0], "summary");
    let gap: f64 = fields[3].parse().unwrap();
    let want = rows.iter().map(|r| (r.loss_unseen - r.loss_seen) / r.loss_seen).sum::<f64>() / rows.len() as f64;
    assert!((gap - want).abs() <= 1e-12);
}

fn write_curve(path: &Path, rows: &[(f64, f64)]) {
    let mut t = String::from("bits,loss_seen,loss_unseen,config_id\n");
    for (k, (b, l)) in rows.iter().enumerate() {
        t.push_str(&format!("{b},{l},{l},{k}\n"));
    }
    std::fs::write(path, t).unwrap();
}

#[test]
fn report_self_gap_and_dominance() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_curve(&a, &[(2.5, 0.4), (3.0, 0.3), (3.5, 0.2), (4.0, 0.15)]);
    write_curve(&b, &[(2.5, 0.3), (3.0, 0.25), (3.5, 0.1), (4.0, 0.1)]);
    let out = dir.path().join("r.json");
    run(&["pareto-report", "--curves", s(&a), s(&a), "--names", "x", "y", "--out", s(&out)]).unwrap();
    let r: ParetoReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r.methods[0].gap, 0.0);
    assert_eq!(r.methods[1].gap, 0.0);
    assert_eq!(r.methods[0].hv, r.methods[1].hv);

    run(&["pareto-report", "--curves", s(&a), s(&b), "--baseline", "a", "--at", "2.5,3,3.5,4", "--out", s(&out)]).unwrap();
    let r: ParetoReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(r.methods[1].hv > r.methods[0].hv);
    assert!(r.methods[1].gap > 0.0);
    assert_eq!(r.loss_max, 0.4);
    for (m, rows) in r.methods.iter().zip([read_curve(&a).unwrap(), read_curve(&b).unwrap()]) {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|row| normalize(row.loss_seen, r.loss_max, row.bits, r.bits_max).unwrap())
            .collect();
        assert_eq!(m.hv, hypervolume_2d(&pts, (1.0, 1.0)));
    }
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn report_rejects_disjoint_grids() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_curve(&a, &[(2.5, 0.4), (3.0, 0.3)]);
    write_curve(&b, &[(5.0, 0.3), (6.0, 0.25)]);
    let out = dir.path().join("r.json");
    let o = bin(&["pareto-report", "--curves", s(&a), s(&b), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("do not overlap"));
}

#[test]
fn select_config_picks_members_and_rejects_unreachable_bits() {
    let f = fixture();
    let (_, set) = load_configs(&f.path("coa/final_configs.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pick.json");
    let b = set[0].avg_bits().to_string();
    let o = bin(&["select-config", "--run", s(&f.path("coa")), "--bits", &b, "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let file = ConfigSetFile::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let picked = &file.to_configs().unwrap()[0];
    assert!(set.contains(picked));
    assert_eq!(printed["avg_bits"].as_f64().unwrap(), picked.avg_bits());
    let o = bin(&["select-config", "--run", s(&f.path("coa")), "--bits", "1.0", "--out", s(&dir.path().join("x.json"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn rerun_reproduces_outputs() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let again = dir.path().join("coa");
    run(&["rerun", "--manifest", s(&f.path("coa/manifest.json")), "--out", s(&again)]).unwrap();
    for name in ["checkpoint.json", "final_configs.json", "archive.csv", "archive.json", "gp.json", "snapshots.json"] {
        assert_eq!(
            std::fs::read(f.path("coa").join(name)).unwrap(),
            std::fs::read(again.join(name)).unwrap(),
            "{name}"
        );
    }
    let curve = dir.path().join("coa.csv");
    run(&["rerun", "--manifest", s(&sidecar(&f.path("coa.csv"))), "--out", s(&curve)]).unwrap();
    assert_eq!(std::fs::read(f.path("coa.csv")).unwrap(), std::fs::read(&curve).unwrap());
}
