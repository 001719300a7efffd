use thz_ocdm::channel::{active_subbands, apply_radar_channel, path_loss_db, ReferencePoint, SceneConfig, TargetTruth};
use thz_ocdm::config::RunConfig;
use thz_ocdm::experiments::{prepare_scene, run_sweep, run_trial, PipelineConfig, Source, SweepSpec};
use thz_ocdm::sensing::{bins_to_params, estimate_targets, PeakBin, SensingConfig};
use thz_ocdm::waveform::{build_fresnel_basis, generate_payload, SubbandParams};

fn desk_scene() -> SceneConfig {
    RunConfig::desk_default().scene().unwrap()
}

/// Noise-free scene holding one subband of the desk layout, with unit
/// received amplitude.
fn quiet_scene(k: usize, range_m: f64, velocity_mps: f64) -> SceneConfig {
    let mut sb = desk_scene().subbands[k].clone();
    sb.index = 0;
    sb.noise_var = 1e-20;
    let pl_db = path_loss_db(sb.center_hz, range_m, sb.absorption_per_m).unwrap();
    SceneConfig {
        targets: vec![TargetTruth::new(range_m, velocity_mps)],
        subbands: vec![sb],
        tx_amplitude_scale: 10f64.powf(pl_db / 20.0),
        reference: ReferencePoint {
            snr_db: 0.0,
            range_m,
            subband: 0,
        },
        max_velocity_mps: 100.0,
    }
}

fn estimate_one(scene: &SceneConfig) -> thz_ocdm::sensing::SubbandEstimate {
    let sb = &scene.subbands[0];
    let basis = build_fresnel_basis(sb.num_chirps).unwrap();
    let payload = generate_payload(sb, 1.0, 77);
    let cube = apply_radar_channel(&payload, &basis, scene, sb, 78).unwrap();
    estimate_targets(&cube, &basis, &payload, 1, &SensingConfig::default(), None).unwrap()[0].clone()
}

#[test]
fn active_subbands_shrink_with_distance() {
    let scene = desk_scene();
    let k = scene.subbands.len();
    assert_eq!(active_subbands(0.1, &scene, 110.0).len(), k);
    let far = active_subbands(10.0, &scene, 110.0);
    assert!(!far.is_empty() && far.len() <= 1, "{far:?}");
    let mut prev = k;
    for r in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0] {
        let n = active_subbands(r, &scene, 110.0).len();
        assert!(n <= prev);
        prev = n;
    }
}

#[test]
fn noise_free_on_grid_bins_exact_in_every_subband() {
    for k in 0..4 {
        let sb = &desk_scene().subbands[k];
        let (m_per, n_per) = (sb.num_chirps * 4, sb.num_symbols * 4);
        for (dm, dn) in [(1usize, 2i64), (2, -3), (3, 1)] {
            let (r, v) = bins_to_params(dm as f64, dn as f64, m_per, n_per, sb);
            if v.abs() >= 100.0 {
                continue;
            }
            let est = estimate_one(&quiet_scene(k, r, v));
            assert_eq!(est.grid_bin, PeakBin { delay: dm, doppler: dn }, "subband {k}");
        }
    }
}

#[test]
fn noise_free_off_grid_within_half_cell() {
    for k in 0..4 {
        let sb = desk_scene().subbands[k].clone();
        let (m_per, n_per) = (sb.num_chirps * 4, sb.num_symbols * 4);
        let (cell_r, cell_v) = bins_to_params(1.0, 1.0, m_per, n_per, &sb);
        for (r, v) in [(0.1, 23.0), (0.37, -11.0), (0.2, 4.5)] {
            let est = estimate_one(&quiet_scene(k, r, v));
            assert!((est.range_m - r).abs() < cell_r / 2.0, "subband {k}: {} vs {r}", est.range_m);
            assert!((est.velocity_mps - v).abs() < cell_v / 2.0, "subband {k}: {} vs {v}", est.velocity_mps);
        }
    }
}

#[test]
fn trial_is_deterministic_in_seed() {
    let scene = desk_scene();
    let p = PipelineConfig::default();
    let a = run_trial(&scene, &p, 5).unwrap();
    let b = run_trial(&scene, &p, 5).unwrap();
    let c = run_trial(&scene, &p, 6).unwrap();
    assert_eq!(a.fused, b.fused);
    assert_eq!(a.per_subband, b.per_subband);
    assert_ne!(a.fused, c.fused);
}

#[test]
fn noise_free_trial_fuses_within_half_cell() {
    let mut scene = desk_scene();
    for sb in &mut scene.subbands {
        sb.noise_var = 1e-20;
    }
    let out = run_trial(&scene, &PipelineConfig::default(), 3).unwrap();
    assert_eq!(out.active, vec![0, 1, 2, 3]);
    let cell_r = bins_to_params(1.0, 0.0, 256, 256, &scene.subbands[0]).0;
    assert!((out.fused[0].range_m - 0.1).abs() < cell_r / 2.0);
    let w: f64 = out.fused[0].weights_range.iter().sum();
    assert!((w - 1.0).abs() < 1e-12);
}

#[test]
fn far_target_uses_fewer_subbands() {
    let scene = prepare_scene(&desk_scene(), 15.0, 10.0, 1.0).unwrap();
    let out = run_trial(&scene, &PipelineConfig::default(), 1).unwrap();
    assert!(out.active.len() <= 1);
    for (k, list) in out.per_subband.iter().enumerate() {
        if !out.active.contains(&k) {
            assert!(list.is_empty());
        }
    }
}

#[test]
fn two_target_trial_reports_both() {
    let mut scene = desk_scene();
    scene.targets.push(TargetTruth::new(0.5, -10.0));
    let out = run_trial(&scene, &PipelineConfig::default(), 9).unwrap();
    assert_eq!(out.fused.len(), 2);
    assert!(out.per_subband.iter().all(|l| l.len() == 2));
}

fn small_spec(trials: usize) -> SweepSpec {
    let mut cfg = RunConfig::desk_default();
    cfg.sweep.snr_grid_db = vec![0.0, 10.0];
    cfg.sweep.distance_grid_m = vec![0.1];
    cfg.sweep.trials = trials;
    cfg.sweep_spec().unwrap()
}

#[test]
fn single_trial_rmse_is_the_absolute_error() {
    let spec = small_spec(1);
    let res = run_sweep(&spec).unwrap();
    let p = &res.points[0];
    let errs = p.trial_errors[0][4].as_ref().unwrap();
    assert_eq!(p.source(Source::Fused).range.rmse.unwrap(), errs[0].0.abs());
    assert_eq!(p.source(Source::Fused).velocity.rmse.unwrap(), errs[0].1.abs());
}

#[test]
fn doubling_trials_keeps_the_first_half() {
    let a = run_sweep(&small_spec(6)).unwrap();
    let b = run_sweep(&small_spec(12)).unwrap();
    for (pa, pb) in a.points.iter().zip(&b.points) {
        assert_eq!(pa.trial_errors[..], pb.trial_errors[..6]);
    }
}

#[test]
fn sweep_csv_row_count_and_header() {
    let res = run_sweep(&small_spec(2)).unwrap();
    let csv = res.to_csv_string().unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "snr_db,distance_m,source,metric,rmse,stderr,crlb_sqrt,trials");
    assert_eq!(lines.len() - 1, 2 * 1 * (4 + 1) * 2);
}

#[test]
fn inactive_subbands_keep_empty_rows() {
    let mut spec = small_spec(2);
    spec.distance_grid_m = vec![10.0];
    let csv = run_sweep(&spec).unwrap().to_csv_string().unwrap();
    let sp4 = csv.lines().find(|l| l.contains(",sp4,range,")).unwrap();
    assert!(sp4.ends_with(",,,,0"), "{sp4}");
}

#[test]
fn stderr_follows_gaussian_approximation() {
    let res = run_sweep(&small_spec(8)).unwrap();
    for p in &res.points {
        for s in &p.sources {
            let m = s.range;
            if let (Some(r), Some(e)) = (m.rmse, m.stderr) {
                assert!((e - r / (2.0 * m.trials as f64).sqrt()).abs() < 1e-15);
                assert!(r >= 0.0);
            }
        }
    }
}

#[test]
fn sweep_trends_hold_at_short_range() {
    let mut cfg = RunConfig::desk_default();
    cfg.sweep.snr_grid_db = vec![0.0, 5.0, 10.0, 15.0];
    cfg.sweep.distance_grid_m = vec![0.1];
    cfg.sweep.trials = 100;
    let res = run_sweep(&cfg.sweep_spec().unwrap()).unwrap();
    // Non-increasing in SNR up to two standard errors per adjacent pair.
    for s in 0..5 {
        for w in res.points.windows(2) {
            let (a, b) = (&w[0].sources[s].range, &w[1].sources[s].range);
            let tol = 2.0 * (a.stderr.unwrap() + b.stderr.unwrap());
            assert!(b.rmse.unwrap() <= a.rmse.unwrap() + tol, "source {s} at {} dB", w[1].snr_db);
        }
    }
    // Fused dominates every contributing subband up to three standard errors.
    for p in &res.points {
        let f = p.source(Source::Fused);
        for k in &p.active {
            let s = p.source(Source::Subband(*k));
            for (fm, sm) in [(&f.range, &s.range), (&f.velocity, &s.velocity)] {
                assert!(fm.rmse.unwrap() <= sm.rmse.unwrap() + 3.0 * sm.stderr.unwrap());
            }
        }
    }
}

#[test]
fn velocity_degrades_with_distance() {
    let mut cfg = RunConfig::desk_default();
    cfg.sweep.snr_grid_db = vec![15.0];
    cfg.sweep.distance_grid_m = vec![0.1, 0.5, 2.0];
    cfg.sweep.trials = 60;
    let res = run_sweep(&cfg.sweep_spec().unwrap()).unwrap();
    let v: Vec<f64> = res.points.iter().map(|p| p.source(Source::Fused).velocity.rmse.unwrap()).collect();
    assert!(v[0] < v[1] && v[1] < v[2], "{v:?}");
}

#[test]
fn invalid_sweep_specs_rejected() {
    let mut spec = small_spec(1);
    spec.trials = 0;
    assert!(spec.validate().unwrap_err().to_string().contains("trials"));
    let mut spec = small_spec(1);
    spec.distance_grid_m.clear();
    assert!(spec.validate().is_err());
    let mut spec = small_spec(1);
    spec.scene.subbands[0] = SubbandParams { num_chirps: 63, ..spec.scene.subbands[0].clone() };
    assert!(spec.validate().unwrap_err().to_string().contains("even"));
}
