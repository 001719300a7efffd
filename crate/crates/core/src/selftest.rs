//! Embedded invariant checks, runnable from the CLI.

use std::f64::consts::PI;

use rand::Rng;

use crate::channel::{apply_radar_channel, noise_free_return, path_loss, ReferencePoint, SceneConfig, TargetTruth};
use crate::dsp::seeded_rng;
use crate::experiments::{run_trial, PipelineConfig};
use crate::fusion::{combiner_variance, fused_variance, optimal_weights};
use crate::sensing::{bins_to_params, crlb, estimate_targets, PeakBin, SensingConfig};
use crate::waveform::{build_fresnel_basis, generate_payload, modulate_direct, modulate_fft, FresnelBasis, SubbandParams};
use crate::{CMatrix, C64};

#[derive(Debug, Clone, Default)]
pub struct SelftestOptions {
    /// Corrupts one eigenvalue of the order-16 basis before the checks run.
    pub perturb_gamma: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = (&'static str, fn(&FresnelBasis) -> Result<String, String>);

const CHECKS: [Check; 12] = [
    ("dfnt_unitarity", check_unitarity),
    ("dfnt_circulant", check_circulant),
    ("eigen_consistency", check_eigen_consistency),
    ("zadoff_chu_modulus", check_gamma_modulus),
    ("modulation_path_equivalence", check_path_equivalence),
    ("channel_kernel_bruteforce", check_channel_kernel),
    ("noise_free_on_grid_exact", check_on_grid),
    ("noise_free_off_grid_half_cell", check_off_grid),
    ("fusion_weight_closed_form", check_weight_closed_form),
    ("fusion_weight_optimality", check_weight_optimality),
    ("crlb_amplitude_scaling", check_crlb_scaling),
    ("trial_determinism", check_determinism),
];

/// Runs every check; a check that panics is reported as failed.
pub fn run_selftest(opts: &SelftestOptions) -> Vec<CheckResult> {
    let mut basis = build_fresnel_basis(16).expect("order 16 is valid");
    if opts.perturb_gamma {
        basis.gamma_mut()[3] *= C64::from_polar(1.0, 0.05);
    }
    CHECKS
        .iter()
        .map(|&(name, f)| {
            let outcome = std::panic::catch_unwind(|| f(&basis))
                .unwrap_or_else(|_| Err("check panicked".to_string()));
            match outcome {
                Ok(detail) => CheckResult { name, passed: true, detail },
                Err(detail) => CheckResult { name, passed: false, detail },
            }
        })
        .collect()
}

fn ensure(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn unitary_dft(m: usize) -> CMatrix {
    let s = 1.0 / (m as f64).sqrt();
    CMatrix::from_shape_fn((m, m), |(u, v)| {
        C64::from_polar(s, -2.0 * PI * ((u * v) % m) as f64 / m as f64)
    })
}

fn random_symbols(m: usize, n: usize, seed: u64) -> crate::waveform::SymbolMatrix {
    let mut rng = seeded_rng(seed);
    crate::waveform::SymbolMatrix {
        entries: CMatrix::from_shape_simple_fn((m, n), || {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        }),
        constellation: crate::waveform::Constellation::Qpsk,
        average_power: 1.0,
    }
}

fn check_unitarity(basis: &FresnelBasis) -> Result<String, String> {
    let prod = basis.phi_hermitian().dot(basis.phi());
    let eye = CMatrix::eye(basis.order());
    let err = max_abs_diff(&prod, &eye);
    ensure(err < 1e-10, format!("max |ΦᴴΦ - I| = {err:.2e}"))
}

fn check_circulant(basis: &FresnelBasis) -> Result<String, String> {
    let phi = basis.phi();
    let m = basis.order();
    let mut err = 0.0f64;
    for u in 1..m {
        for v in 0..m {
            err = err.max((phi[[u, v]] - phi[[u - 1, (v + m - 1) % m]]).norm());
        }
    }
    ensure(err < 1e-12, format!("max row-shift mismatch {err:.2e}"))
}

fn check_eigen_consistency(basis: &FresnelBasis) -> Result<String, String> {
    let f = unitary_dft(basis.order());
    let fh = f.t().mapv(|z| z.conj());
    let d = f.dot(basis.phi()).dot(&fh);
    let mut err = 0.0f64;
    for ((u, v), x) in d.indexed_iter() {
        let want = if u == v { basis.gamma()[u] } else { C64::new(0.0, 0.0) };
        err = err.max((x - want).norm());
    }
    ensure(err < 1e-10, format!("max |FΦFᴴ - diag(Γ)| = {err:.2e}"))
}

fn check_gamma_modulus(basis: &FresnelBasis) -> Result<String, String> {
    let err = basis.gamma().iter().map(|g| (g.norm() - 1.0).abs()).fold(0.0, f64::max);
    ensure(err < 1e-12, format!("max ||Γ| - 1| = {err:.2e}"))
}

fn check_path_equivalence(basis: &FresnelBasis) -> Result<String, String> {
    let x = random_symbols(basis.order(), 8, 11);
    let fast = modulate_fft(&x, basis).map_err(|e| e.to_string())?;
    let dense = modulate_direct(&x, basis).map_err(|e| e.to_string())?;
    let err = max_abs_diff(&fast.samples, &dense.samples);
    ensure(err < 1e-10, format!("max |fft - dense| = {err:.2e}"))
}

fn test_subband(m: usize, noise_var: f64) -> SubbandParams {
    SubbandParams {
        index: 0,
        center_hz: 0.475e12,
        chirp_spacing_hz: 3.9e6,
        num_chirps: m,
        num_symbols: m,
        absorption_per_m: 0.02,
        noise_var,
    }
}

fn single_target_scene(sb: &SubbandParams, range_m: f64, velocity_mps: f64) -> SceneConfig {
    let pl = path_loss(sb.center_hz, range_m, sb.absorption_per_m).expect("valid path loss");
    SceneConfig {
        targets: vec![TargetTruth::new(range_m, velocity_mps)],
        subbands: vec![sb.clone()],
        tx_amplitude_scale: pl.sqrt(),
        reference: ReferencePoint {
            snr_db: 0.0,
            range_m,
            subband: 0,
        },
        max_velocity_mps: 100.0,
    }
}

fn check_channel_kernel(_: &FresnelBasis) -> Result<String, String> {
    let sb = test_subband(8, 1.0);
    let scene = single_target_scene(&sb, 3.7, 12.0);
    let x = random_symbols(8, 8, 5);
    let fast = noise_free_return(&x, &scene, &sb).map_err(|e| e.to_string())?;
    let t = &scene.targets[0];
    let m_f = 8.0;
    let t_sym = sb.symbol_duration();
    let delta = t.delay() * m_f * sb.chirp_spacing_hz;
    let nu = sb.center_hz / crate::SPEED_OF_LIGHT * t.velocity_mps;
    let brute = CMatrix::from_shape_fn((8, 8), |(m, n)| {
        let mut acc = C64::new(0.0, 0.0);
        for l in 0..8 {
            let d = m as f64 - l as f64 - delta;
            acc += x.entries[[l, n]] * C64::from_polar(1.0 / m_f.sqrt(), PI / 4.0 - PI * d * d / m_f);
        }
        let time = n as f64 * t_sym + m as f64 * t_sym / m_f;
        acc * C64::from_polar(1.0, 2.0 * PI * nu * time)
    });
    let err = max_abs_diff(&fast, &brute);
    ensure(err < 1e-10, format!("max |fft - double sum| = {err:.2e}"))
}

/// Simulates a noise-free target at the given bins and returns the estimate.
fn noise_free_estimate(delay_bin: f64, doppler_bin: f64) -> Result<(crate::sensing::SubbandEstimate, f64, f64), String> {
    let sb = test_subband(32, 1e-20);
    let cfg = SensingConfig::default();
    let (m_per, n_per) = (32 * cfg.delay_oversampling, 32 * cfg.doppler_oversampling);
    let (r, v) = bins_to_params(delay_bin, doppler_bin, m_per, n_per, &sb);
    let scene = single_target_scene(&sb, r, v);
    let basis = build_fresnel_basis(32).map_err(|e| e.to_string())?;
    let payload = generate_payload(&sb, 1.0, 3);
    let cube = apply_radar_channel(&payload, &basis, &scene, &sb, 4).map_err(|e| e.to_string())?;
    let est = estimate_targets(&cube, &basis, &payload, 1, &cfg, None).map_err(|e| e.to_string())?;
    Ok((est[0].clone(), r, v))
}

fn check_on_grid(_: &FresnelBasis) -> Result<String, String> {
    let (est, _, _) = noise_free_estimate(2.0, 3.0)?;
    ensure(
        est.grid_bin == PeakBin { delay: 2, doppler: 3 },
        format!("grid bin {:?}, expected (2, 3)", est.grid_bin),
    )
}

fn check_off_grid(_: &FresnelBasis) -> Result<String, String> {
    let (est, r, v) = noise_free_estimate(1.37, -2.61)?;
    let sb = test_subband(32, 1e-20);
    let (cell_r, cell_v) = bins_to_params(1.0, 1.0, 128, 128, &sb);
    let (er, ev) = ((est.range_m - r).abs(), (est.velocity_mps - v).abs());
    ensure(
        er < cell_r / 2.0 && ev < cell_v / 2.0,
        format!("errors {er:.2e} m, {ev:.2e} m/s vs half cells {:.2e}, {:.2e}", cell_r / 2.0, cell_v / 2.0),
    )
}

fn check_weight_closed_form(_: &FresnelBasis) -> Result<String, String> {
    let w = optimal_weights(&[1.0, 3.0]).map_err(|e| e.to_string())?;
    let fv = fused_variance(&[1.0, 2.0, 4.0, 8.0]).map_err(|e| e.to_string())?;
    ensure(
        (w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12 && (fv - 8.0 / 15.0).abs() < 1e-12,
        format!("weights {w:?}, fused variance {fv:.6}"),
    )
}

fn check_weight_optimality(_: &FresnelBasis) -> Result<String, String> {
    let var = [1.0, 2.0, 4.0, 8.0];
    let w = optimal_weights(&var).map_err(|e| e.to_string())?;
    let best = combiner_variance(&w, &var).map_err(|e| e.to_string())?;
    let mut rng = seeded_rng(17);
    for _ in 0..1000 {
        let raw: Vec<f64> = (0..4).map(|_| -rng.random_range(f64::EPSILON..1.0f64).ln()).collect();
        let s: f64 = raw.iter().sum();
        let b: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let v = combiner_variance(&b, &var).map_err(|e| e.to_string())?;
        if v < best - 1e-12 {
            return Err(format!("random weights {b:?} give {v} < {best}"));
        }
    }
    Ok(format!("optimal variance {best:.6} beats 1000 random simplex weights"))
}

fn check_crlb_scaling(_: &FresnelBasis) -> Result<String, String> {
    let sb = test_subband(64, 1.0);
    let (r1, v1) = crlb(&sb, 1e-3, 1.0).map_err(|e| e.to_string())?;
    let (r2, v2) = crlb(&sb, 2e-3, 1.0).map_err(|e| e.to_string())?;
    ensure(
        (r1 / r2 - 4.0).abs() < 1e-12 && (v1 / v2 - 4.0).abs() < 1e-12,
        format!("ratios {:.6}, {:.6}", r1 / r2, v1 / v2),
    )
}

fn check_determinism(_: &FresnelBasis) -> Result<String, String> {
    let sb = test_subband(16, 1.0);
    let mut scene = single_target_scene(&sb, 0.1, 23.0);
    scene.tx_amplitude_scale *= 10.0;
    let p = PipelineConfig::default();
    let a = run_trial(&scene, &p, 99).map_err(|e| e.to_string())?;
    let b = run_trial(&scene, &p, 99).map_err(|e| e.to_string())?;
    if a.fused == b.fused && a.per_subband == b.per_subband {
        Ok("two runs with seed 99 are identical".to_string())
    } else {
        Err("same seed gave different trials".to_string())
    }
}
