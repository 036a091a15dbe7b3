use super::*;
use crate::agent::ReplayKind;
use std::path::PathBuf;

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("covpath_{}_{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_map(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Small, fast training configuration for orchestration tests.
fn fast_cfg(out: PathBuf) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        net: NetConfig { filters: [2, 2], fc_units: vec![4], dueling: true },
        out_dir: out,
        ..ExperimentConfig::default()
    };
    cfg.train.episodes = 5;
    cfg.train.capacity = 500;
    cfg.train.train_start = 16;
    cfg.train.eps_anneal_steps = 100;
    cfg
}

#[test]
fn config_toml_round_trip_preserves_hash() {
    let dir = tmp_dir("cfg_round_trip");
    let mut cfg = fast_cfg(dir.join("out"));
    cfg.map = Some(MapSource::File(PathBuf::from("maps/maze7.map")));
    cfg.bench_maps = vec![MapSource::Generate(MapGenParams::unit_cells(5, 5, 0.1, 3))];
    cfg.sweep_combos = vec![SweepCombo::default()];
    let text = cfg.to_toml();
    let back = ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.hash(), back.hash());
}

#[test]
fn minimal_toml_parses_with_defaults() {
    let cfg = ExperimentConfig::from_toml("mode = \"eval\"\nmethod = \"zigzag\"\n").unwrap();
    assert_eq!(cfg.mode, Mode::Eval);
    assert_eq!(cfg.method, Method::Zigzag);
    assert_eq!(cfg.eta, 0.9);
    assert_eq!(cfg.seeds, vec![0]);
    assert!(ExperimentConfig::from_toml("mode = \"nope\"").is_err());
}

#[test]
fn zigzag_eval_on_empty_map_scores_perfectly() {
    let dir = tmp_dir("zigzag_eval");
    let map = write_map(&dir, "empty5.map", "S....\n.....\n.....\n.....\n.....\n");
    let mut cfg = fast_cfg(dir.join("out"));
    cfg.mode = Mode::Eval;
    cfg.method = Method::Zigzag;
    cfg.map = Some(MapSource::File(map));
    cfg.eta = 1.0;
    cfg.eval_episodes = 3;
    let record = run(&cfg).unwrap();
    assert_eq!(record.summary.mean_coverage_pct, 100.0);
    assert_eq!(record.summary.mean_overlap_pct, 0.0);
    assert!(cfg.out_dir.join("metrics_seed0.csv").exists());
    assert!(cfg.out_dir.join("summary.json").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tmp_dir("repeat");
    let map = write_map(&dir, "m.map", "S..\n...\n...\n");
    let mut cfg = fast_cfg(dir.join("out"));
    cfg.mode = Mode::Train;
    cfg.map = Some(MapSource::File(map));
    cfg.seeds = vec![0, 1];
    cfg.eta = 1.0;
    cfg.step_cap = 40;
    run(&cfg).unwrap();
    let read = |name: &str| fs::read(cfg.out_dir.join(name)).unwrap();
    let first = (
        read("metrics_seed0.csv"),
        read("metrics_seed1.csv"),
        read("summary.json"),
        read("plotdata/coverage.csv"),
    );
    run(&cfg).unwrap();
    let second = (
        read("metrics_seed0.csv"),
        read("metrics_seed1.csv"),
        read("summary.json"),
        read("plotdata/coverage.csv"),
    );
    assert_eq!(first, second);
}

#[test]
fn train_summary_is_recomputable_from_rows() {
    let dir = tmp_dir("summary_integrity");
    let map = write_map(&dir, "m.map", "S...\n....\n....\n....\n");
    let mut cfg = fast_cfg(dir.join("out"));
    cfg.mode = Mode::Train;
    cfg.map = Some(MapSource::File(map));
    cfg.train.episodes = 8;
    cfg.summary_window = 4;
    let record = run(&cfg).unwrap();
    let text = fs::read_to_string(cfg.out_dir.join("metrics_seed0.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 8);
    let tail = &rows[rows.len() - 4..];
    let mean_cov = tail.iter().map(|r| r[2]).sum::<f64>() / 4.0;
    let mean_over = tail.iter().map(|r| r[3]).sum::<f64>() / 4.0;
    let s = &record.summary.per_seed[0];
    assert!((s.mean_coverage_pct - mean_cov).abs() < 1e-9);
    assert!((s.mean_overlap_pct - mean_over).abs() < 1e-9);
    // Checkpoint round trip.
    let ckpt = cfg.out_dir.join("checkpoint_seed0.cvqn");
    let (net, _) = QNetwork::<Real>::load_checkpoint_file(&ckpt).unwrap();
    assert_eq!(net.spec().actions, 4);
}

#[test]
fn bench_emits_one_row_per_method_and_fixture() {
    let dir = tmp_dir("bench");
    let mut cfg = fast_cfg(dir.join("out"));
    cfg.mode = Mode::Bench;
    cfg.eta = 1.0;
    cfg.eval_episodes = 2;
    cfg.bench_maps = (0..3)
        .map(|s| MapSource::Generate(MapGenParams::unit_cells(6, 6, 0.15, s)))
        .collect();
    cfg.methods = vec![Method::Zigzag, Method::Bastar];
    let rows = bench(&cfg).unwrap();
    assert_eq!(rows.len(), 6);
    run(&cfg).unwrap();
    let csv = fs::read_to_string(cfg.out_dir.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    for row in &rows {
        assert!(row.mean_coverage_pct.is_finite());
        assert!(row.mean_overlap_pct.is_finite());
    }
}

#[test]
fn sweep_single_combo_and_capacity_insensitivity() {
    let dir = tmp_dir("sweep");
    let map = write_map(&dir, "m.map", "S..\n...\n...\n");
    let mut cfg = fast_cfg(dir.join("out"));
    cfg.mode = Mode::Sweep;
    cfg.map = Some(MapSource::File(map));
    cfg.eta = 1.0;
    cfg.step_cap = 30;
    cfg.train.episodes = 6;
    let combo = |name: &str, capacity: usize| SweepCombo {
        name: name.into(),
        batch: 8,
        filters: [2, 2],
        fc_units: vec![4],
        capacity,
        ..SweepCombo::default()
    };
    cfg.sweep_combos = vec![combo("solo", 1000)];
    let rows = sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 1);
    // Two combos differing only in a field the short run never touches
    // (buffer capacity beyond the step count) converge identically.
    cfg.sweep_combos = vec![combo("a", 1000), combo("b", 2000)];
    let rows = sweep(&cfg).unwrap();
    assert_eq!(rows[0].converged_reward, rows[1].converged_reward);
    run(&cfg).unwrap();
    assert!(cfg.out_dir.join("sweep.csv").exists());
}

#[test]
fn noise_study_bastar_overlap_grows_with_rho() {
    let dir = tmp_dir("noise");
    let mut cfg = fast_cfg(dir.join("out"));
    cfg.map = Some(MapSource::File(PathBuf::from("../../maps/maze15b.map")));
    cfg.eval_episodes = 5;
    let rows = noise_study(&cfg, &[0.0, 0.05, 0.1], &[Method::Bastar]).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].rho == 0.0 && rows[2].rho == 0.1);
    assert!(
        rows[1].mean_overlap_pct >= rows[0].mean_overlap_pct,
        "rho 0.05 {} vs clean {}",
        rows[1].mean_overlap_pct,
        rows[0].mean_overlap_pct
    );
    assert!(
        rows[2].mean_overlap_pct > rows[0].mean_overlap_pct,
        "rho 0.1 {} vs clean {}",
        rows[2].mean_overlap_pct,
        rows[0].mean_overlap_pct
    );
}

#[test]
fn noise_study_clean_row_matches_eval_mode() {
    let dir = tmp_dir("noise_consistency");
    let map = write_map(&dir, "m.map", "S....\n.#...\n.....\n...#.\n.....\n");
    let mut cfg = fast_cfg(dir.join("out"));
    cfg.mode = Mode::Eval;
    cfg.method = Method::Bastar;
    cfg.map = Some(MapSource::File(map));
    cfg.eval_episodes = 4;
    let record = run(&cfg).unwrap();
    let rows = noise_study(&cfg, &[0.0], &[Method::Bastar]).unwrap();
    assert!((rows[0].mean_overlap_pct - record.summary.mean_overlap_pct).abs() < 1e-9);
    assert!((rows[0].mean_coverage_pct - record.summary.mean_coverage_pct).abs() < 1e-9);
}

#[test]
fn smoothing_window_one_is_identity() {
    let values = [3.0, 1.0, 4.0, 1.0, 5.0];
    assert_eq!(smooth(&values, 1), values.to_vec());
    let sm = smooth(&values, 3);
    assert_eq!(sm[0], 3.0);
    assert_eq!(sm[1], 2.0);
    assert!((sm[2] - 8.0 / 3.0).abs() < 1e-12);
}

#[test]
fn plotdata_band_brackets_mean() {
    let dir = tmp_dir("plotdata");
    let mk_row = |episode: usize, cov: f64| EpisodeRow {
        episode,
        steps: 10,
        coverage_pct: cov,
        overlap_pct: cov / 2.0,
        ret: cov - 50.0,
        epsilon: 0.5,
        loss_mean: 0.0,
    };
    let rows_per_seed = vec![
        (0u64, (0..6).map(|e| mk_row(e, 50.0 + e as f64)).collect::<Vec<_>>()),
        (1u64, (0..6).map(|e| mk_row(e, 60.0 + e as f64)).collect::<Vec<_>>()),
    ];
    emit_plotdata(&rows_per_seed, 2, &dir).unwrap();
    let text = fs::read_to_string(dir.join("coverage.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "episode,mean,min,max");
    for (t, line) in lines.enumerate() {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[0] as usize, t);
        assert!(v[2] <= v[1] && v[1] <= v[3], "band violated: {line}");
        // Independent recomputation of the smoothed band.
        let smoothed: Vec<f64> = rows_per_seed
            .iter()
            .map(|(_, rows)| {
                let vals: Vec<f64> = rows.iter().map(|r| r.coverage_pct).collect();
                let lo = t.saturating_sub(1);
                vals[lo..=t].iter().sum::<f64>() / (t - lo + 1) as f64
            })
            .collect();
        let mean = smoothed.iter().sum::<f64>() / smoothed.len() as f64;
        assert!((v[1] - mean).abs() < 1e-12);
    }
}

#[test]
fn uniform_replay_is_a_valid_config() {
    let dir = tmp_dir("uniform_replay");
    let map = write_map(&dir, "m.map", "S..\n...\n...\n");
    let mut cfg = fast_cfg(dir.join("out"));
    cfg.mode = Mode::Train;
    cfg.map = Some(MapSource::File(map));
    cfg.train.replay = ReplayKind::Uniform;
    cfg.eta = 1.0;
    cfg.step_cap = 30;
    let record = run(&cfg).unwrap();
    assert_eq!(record.rows_per_seed[0].1.len(), 5);
}

#[test]
fn config_errors_are_reported() {
    let cfg = ExperimentConfig { seeds: vec![], ..ExperimentConfig::default() };
    assert!(matches!(run(&cfg), Err(HarnessError::Config(_))));
    let cfg = ExperimentConfig { mode: Mode::Train, map: None, ..ExperimentConfig::default() };
    assert!(matches!(run(&cfg), Err(HarnessError::Config(_))));
    let cfg = ExperimentConfig { noise_rho: 0.7, ..ExperimentConfig::default() };
    assert!(matches!(run(&cfg), Err(HarnessError::Config(_))));
}
