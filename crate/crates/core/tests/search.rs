use qadapt::linalg::Mat;
use qadapt::pareto::{segmented_filter, ParetoArchive};
use qadapt::qconfig::{budget_grid, canonical_ladder, init_config_set, ModelQuantConfig, LATTICE_SIZE};
use qadapt::search::*;
use qadapt::surrogate::{ehvi, gp_fit, GpOptions};
use qadapt::tinynet::{gen_teacher_student, QuantCache, TrainOptions};

fn shapes(n: usize) -> Vec<(usize, usize)> {
    let mut s = vec![(16, 32)];
    s.extend(std::iter::repeat_n((32, 32), n - 2));
    s.push((32, 1));
    s
}

/// Synthetic loss: falls with every layer's rank, more steeply for early
/// layers, with a little curvature.
fn toy_loss(ranks: &[usize]) -> f64 {
    ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let x = r as f64 / 431.0;
            (1.0 + i as f64) * (1.0 - x).powi(2) + 0.05 * (7.0 * x).sin()
        })
        .sum::<f64>()
        + 0.1
}

fn toy_eval(cfg: &ModelQuantConfig) -> qadapt::Result<f64> {
    Ok(toy_loss(&canonical_ladder().ranks(cfg)?))
}

fn spread_configs(n: usize, count: usize) -> Vec<ModelQuantConfig> {
    let l = canonical_ladder();
    (0..count)
        .map(|k| {
            let ranks: Vec<usize> = (0..n).map(|i| (k * 37 + i * 53) % LATTICE_SIZE).collect();
            l.config_from_ranks(&ranks, &shapes(n)).unwrap()
        })
        .collect()
}

#[test]
fn flat_surrogate_has_zero_gradient() {
    let l = canonical_ladder();
    let cfgs = spread_configs(3, 12);
    let (state, _) = SearchState::init(l, &cfgs, 8, 3, GpOptions::default(), |_| Ok(0.5)).unwrap();
    let acq = Acquisition::from_archive(&state.gp, &state.archive, l, &state.layer_shapes);
    for c in &cfgs {
        let g = fd_gradient(&l.ranks(c).unwrap(), &acq).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-10), "{g:?}");
    }
}

#[test]
fn single_layer_gradient_matches_direct_evaluation() {
    let l = canonical_ladder();
    let sh = vec![(32, 32)];
    let cfgs: Vec<ModelQuantConfig> = (0..10)
        .map(|k| l.config_from_ranks(&[k * 45], &sh).unwrap())
        .collect();
    let (state, _) = SearchState::init(l, &cfgs, 4, 3, GpOptions::default(), toy_eval).unwrap();
    let acq = Acquisition::from_archive(&state.gp, &state.archive, l, &sh);
    let front = &acq.front;
    let direct = |r: usize| {
        let cfg = l.config_from_ranks(&[r], &sh).unwrap();
        let (mu, var) = state.gp.predict(&[r as f64 / 431.0]);
        let lm = state.archive.loss_max;
        let f2 = (cfg.avg_bits() / state.archive.bits_max).min(1.0);
        ehvi(mu / lm, var / (lm * lm), f2, front, (1.0, 1.0)).unwrap()
    };
    for k in [1usize, 17, 100, 215, 300, 430] {
        let g = fd_gradient(&[k], &acq).unwrap()[0];
        let want = (direct(k + 1) - direct(k - 1)) / 2.0;
        assert_eq!(g, want, "rank {k}");
    }
    let g0 = fd_gradient(&[0], &acq).unwrap()[0];
    assert_eq!(g0, direct(1) - direct(0));
    assert!(g0.is_finite());
    let gt = fd_gradient(&[431], &acq).unwrap()[0];
    assert_eq!(gt, direct(431) - direct(430));
}

#[test]
fn zero_steps_is_a_filter() {
    let l = canonical_ladder();
    let cfgs = spread_configs(4, 30);
    let (mut state, set) = SearchState::init(l, &cfgs, 6, 0, GpOptions::default(), toy_eval).unwrap();
    let before = state.archive.len();
    let out = run_search_epoch(&mut state, &set, 1, toy_eval).unwrap();
    assert_eq!(state.archive.len(), before);
    assert_eq!(out, set);
    let pts = state.archive.points(&set);
    let again: Vec<usize> = segmented_filter(&pts, 6).unwrap().into_iter().map(|k| set[k]).collect();
    assert_eq!(again, set);
}

#[test]
fn toy_search_keeps_invariants() {
    let l = canonical_ladder();
    let cfgs = spread_configs(5, 20);
    for ascend in [false, true] {
        let (mut state, mut set) = SearchState::init(l, &cfgs, 10, 3, GpOptions::default(), toy_eval).unwrap();
        state.ascend = ascend;
        let mut hv = state.archive.hypervolume(&set);
        for epoch in 1..=4 {
            set = run_search_epoch(&mut state, &set, epoch, toy_eval).unwrap();
            let now = state.archive.hypervolume(&set);
            assert!(now >= hv - 1e-12, "epoch {epoch}: {now} < {hv}");
            hv = now;
            // Surrogate trained on exactly the archive.
            let (x, y) = state.training_data().unwrap();
            assert_eq!(state.gp.train_x, x);
            assert_eq!(state.gp.train_y, y);
            assert_eq!(x.rows(), state.archive.len());
        }
        let mut seen = std::collections::HashSet::new();
        for e in &state.archive.entries {
            assert!(seen.insert(e.config.clone()), "duplicate archive entry");
            assert_eq!(e.loss, toy_eval(&e.config).unwrap());
        }
        assert!(state.archive.len() > cfgs.len());
    }
}

#[test]
fn single_point_archive_fits() {
    let l = canonical_ladder();
    let cfgs = spread_configs(2, 1);
    let (mut state, set) = SearchState::init(l, &cfgs, 4, 2, GpOptions::default(), toy_eval).unwrap();
    assert_eq!(set, vec![0]);
    run_search_epoch(&mut state, &set, 1, toy_eval).unwrap();
    assert!(!state.archive.is_empty());
}

#[test]
fn gp_prediction_at_archive_points() {
    let l = canonical_ladder();
    let cfgs = spread_configs(3, 25);
    let (state, _) = SearchState::init(l, &cfgs, 4, 2, GpOptions::default(), toy_eval).unwrap();
    let (x, y) = state.training_data().unwrap();
    let gp = gp_fit(&x, &y).unwrap();
    let tol = 3.0 * gp.noise_var().sqrt() + 1e-6;
    for (i, yi) in y.iter().enumerate() {
        assert!((gp.predict(x.row(i)).0 - yi).abs() <= tol);
    }
    let _ = Mat::<f64>::zeros(1, 1);
}

fn reference_run(epochs: usize, seed: u64) -> (qadapt::tinynet::TargetNet, qadapt::tinynet::Dataset, CoaResult) {
    let (net, data) = gen_teacher_student(seed, 2000, 0.05).unwrap();
    let budgets = budget_grid(2.25, 7.25, 0.25, 20).unwrap();
    let init = init_config_set(&net.layers, &budgets, 4).unwrap();
    let opts = CoaOptions {
        epochs,
        train: TrainOptions {
            steps: 100,
            lr: 1e-3,
            seed,
            ..TrainOptions::default()
        },
        ..CoaOptions::default()
    };
    let res = run_coa(&net, &data, &init, &opts, &QuantCache::new()).unwrap();
    (net, data, res)
}

#[test]
fn coa_run_is_consistent_and_deterministic() {
    let (net, data, a) = reference_run(3, 11);
    let cache = QuantCache::new();
    let l = canonical_ladder();
    for w in a.history.windows(2) {
        assert!(w[1].hv >= w[0].hv - 1e-12);
    }
    assert_eq!(a.history.len(), 3);
    for e in &a.archive.entries {
        assert!(l.ranks(&e.config).is_ok());
        let again = calib_loss(&net, &data, &a.snapshots[e.snapshot], &e.config, &cache).unwrap();
        assert!((again - e.loss).abs() <= 1e-10, "{again} vs {}", e.loss);
    }
    let (_, _, b) = reference_run(3, 11);
    assert_eq!(a.stack, b.stack);
    assert_eq!(a.set, b.set);
    assert_eq!(a.archive, b.archive);
    let strip = |h: &[EpochRecord]| h.iter().map(|r| (r.epoch, r.hv, r.set_size, r.mean_f1)).collect::<Vec<_>>();
    assert_eq!(strip(&a.history), strip(&b.history));
}

#[test]
fn zero_epochs_returns_initialization() {
    let (net, _, res) = reference_run(0, 12);
    assert!(res.history.is_empty());
    assert_eq!(res.stack, qadapt::tinynet::init_stack(&net, 4, true, 12).unwrap());
    let ids: Vec<usize> = (0..res.archive.len()).collect();
    assert_eq!(res.set_ids, res.archive.filter(&ids));
}

#[test]
fn empty_initial_set_is_rejected() {
    let l = canonical_ladder();
    assert!(SearchState::init(l, &[], 4, 2, GpOptions::default(), toy_eval).is_err());
    let _ = ParetoArchive::new(1.0, 8.625, 4).unwrap();
}
