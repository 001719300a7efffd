//! THz radar channel: path loss, sampled point-target returns, AWGN,
//! transmit-power calibration and distance-dependent subband availability.

use std::f64::consts::PI;

use ndarray::{Array2, Axis};

use crate::dsp::{complex_gaussian, seeded_rng, FftPair};
use crate::error::{Error, Result};
use crate::waveform::{FresnelBasis, SubbandParams, SymbolMatrix};
use crate::{CMatrix, C64, SPEED_OF_LIGHT};

/// Ground truth for one point target.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTruth {
    /// Bistatic range `r = c·τ`, meters.
    pub range_m: f64,
    /// Radial velocity, m/s.
    pub velocity_mps: f64,
    /// Complex scattering coefficient `h_p`.
    pub scatter: C64,
}

impl TargetTruth {
    pub fn new(range_m: f64, velocity_mps: f64) -> Self {
        Self {
            range_m,
            velocity_mps,
            scatter: C64::new(1.0, 0.0),
        }
    }

    pub fn delay(&self) -> f64 {
        self.range_m / SPEED_OF_LIGHT
    }
}

/// Point at which the transmit power is calibrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub snr_db: f64,
    pub range_m: f64,
    /// Position of the reference subband in [`SceneConfig::subbands`].
    pub subband: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub targets: Vec<TargetTruth>,
    pub subbands: Vec<SubbandParams>,
    /// Linear amplitude applied to every transmitted frame.
    pub tx_amplitude_scale: f64,
    pub reference: ReferencePoint,
    /// Velocity bound used to check chirp orthogonality, m/s.
    pub max_velocity_mps: f64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::invalid("targets", "at least one target is required"));
        }
        if self.subbands.is_empty() {
            return Err(Error::invalid("subbands", "at least one subband is required"));
        }
        for (i, sb) in self.subbands.iter().enumerate() {
            if sb.index != i {
                return Err(Error::invalid(
                    format!("subbands[{i}].index"),
                    format!("must equal its position {i}, got {}", sb.index),
                ));
            }
            sb.validate()?;
            let doppler = self.max_velocity_mps.abs() * sb.center_hz / SPEED_OF_LIGHT;
            if doppler >= sb.chirp_spacing_hz {
                return Err(Error::invalid(
                    format!("subbands[{}].chirp_spacing_hz", sb.index),
                    format!(
                        "chirp spacing {} Hz must exceed the maximum Doppler shift {doppler:.1} Hz",
                        sb.chirp_spacing_hz
                    ),
                ));
            }
        }
        for (p, t) in self.targets.iter().enumerate() {
            if !(t.range_m.is_finite() && t.range_m > 0.0) {
                return Err(Error::invalid(format!("targets[{p}].range_m"), "must be > 0"));
            }
            if t.velocity_mps.abs() > self.max_velocity_mps {
                return Err(Error::invalid(
                    format!("targets[{p}].velocity_mps"),
                    format!("|v| exceeds max_velocity_mps = {}", self.max_velocity_mps),
                ));
            }
        }
        if self.reference.subband >= self.subbands.len() {
            return Err(Error::invalid(
                "reference.subband",
                format!("index {} out of range", self.reference.subband),
            ));
        }
        if !(self.reference.range_m.is_finite() && self.reference.range_m > 0.0) {
            return Err(Error::invalid("reference.range_m", "must be > 0"));
        }
        if !self.reference.snr_db.is_finite() {
            return Err(Error::invalid("reference.snr_db", "must be finite"));
        }
        let min_t = self
            .subbands
            .iter()
            .map(SubbandParams::symbol_duration)
            .fold(f64::INFINITY, f64::min);
        if self.delay_spread() >= min_t {
            return Err(Error::invalid(
                "targets",
                "delay spread must be shorter than the shortest symbol duration",
            ));
        }
        Ok(())
    }

    /// Largest minus smallest target delay, seconds.
    pub fn delay_spread(&self) -> f64 {
        let (lo, hi) = self.targets.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), t| {
            (lo.min(t.delay()), hi.max(t.delay()))
        });
        if self.targets.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

/// Sampled radar return `Y` for one subband.
#[derive(Debug, Clone)]
pub struct ReceivedCube {
    pub samples: CMatrix,
    pub params: SubbandParams,
    /// Per-target realised per-sample SNR `|h̃_p|²·P_avg/ε²` (linear).
    pub truth_snr: Vec<f64>,
}

/// Linear THz path loss `(4π f_c r / c)² · e^{k_abs r}` (≥ 1 away from the origin).
pub fn path_loss(center_hz: f64, range_m: f64, absorption_per_m: f64) -> Result<f64> {
    if !(center_hz > 0.0) {
        return Err(Error::invalid("center_hz", "must be > 0"));
    }
    if !(range_m >= 0.0) {
        return Err(Error::invalid("range_m", "must be >= 0"));
    }
    if !(absorption_per_m >= 0.0) {
        return Err(Error::invalid("absorption_per_m", "must be >= 0"));
    }
    let spread = 4.0 * PI * center_hz * range_m / SPEED_OF_LIGHT;
    Ok(spread * spread * (absorption_per_m * range_m).exp())
}

pub fn path_loss_db(center_hz: f64, range_m: f64, absorption_per_m: f64) -> Result<f64> {
    Ok(10.0 * path_loss(center_hz, range_m, absorption_per_m)?.log10())
}

/// Bundled absorption table `(frequency Hz, k_abs 1/m)`, monotone in frequency.
pub const DEFAULT_ABSORPTION_TABLE: [(f64, f64); 5] = [
    (0.3e12, 0.005),
    (0.7e12, 0.1),
    (1.0e12, 0.3),
    (1.3e12, 0.6),
    (1.7e12, 1.0),
];

/// Linear interpolation in [`DEFAULT_ABSORPTION_TABLE`], clamped at the ends.
pub fn default_absorption(center_hz: f64) -> f64 {
    let table = &DEFAULT_ABSORPTION_TABLE;
    if center_hz <= table[0].0 {
        return table[0].1;
    }
    for w in table.windows(2) {
        let ((f0, k0), (f1, k1)) = (w[0], w[1]);
        if center_hz <= f1 {
            return k0 + (k1 - k0) * (center_hz - f0) / (f1 - f0);
        }
    }
    table[table.len() - 1].1
}

/// Received amplitude `a/√PL` of a unit-|h| target at `range_m`.
pub fn channel_amplitude(subband: &SubbandParams, range_m: f64, tx_scale: f64) -> Result<f64> {
    let pl = path_loss(subband.center_hz, range_m, subband.absorption_per_m)?;
    if pl == 0.0 {
        return Err(Error::invalid("range_m", "zero range has no finite return"));
    }
    Ok(tx_scale / pl.sqrt())
}

fn check_target_physics(subband: &SubbandParams, p: usize, t: &TargetTruth) -> Result<()> {
    if !(t.range_m > 0.0) {
        return Err(Error::Precondition(format!("target {p}: range must be > 0")));
    }
    let doppler = t.velocity_mps.abs() * subband.center_hz / SPEED_OF_LIGHT;
    if doppler >= subband.chirp_spacing_hz {
        return Err(Error::Precondition(format!(
            "target {p}: Doppler shift {doppler:.1} Hz breaks chirp orthogonality (Δf = {} Hz)",
            subband.chirp_spacing_hz
        )));
    }
    Ok(())
}

/// Noise-free sampled return of every target in `scene`, evaluated on the
/// `t = nT + mT/M` grid for arbitrary real delays.
///
/// For each target the chirp-delay kernel
/// `g(d) = M^{-1/2} e^{jπ/4} e^{-jπ(d - δ)²/M}`, `δ = τ·M·Δf`,
/// is linearly convolved with each payload column over `d ∈ [-(M-1), M-1]`
/// (no wrap), then multiplied by the Doppler phase and `h̃_p`.
pub fn noise_free_return(
    x: &SymbolMatrix,
    scene: &SceneConfig,
    subband: &SubbandParams,
) -> Result<CMatrix> {
    let (m_len, n_len) = (subband.num_chirps, subband.num_symbols);
    if x.num_chirps() != m_len || x.num_symbols() != n_len {
        return Err(Error::invalid(
            "symbols",
            format!(
                "payload is {}x{} but the subband expects {m_len}x{n_len}",
                x.num_chirps(),
                x.num_symbols()
            ),
        ));
    }
    for (p, t) in scene.targets.iter().enumerate() {
        check_target_physics(subband, p, t)?;
    }
    let t_sym = subband.symbol_duration();
    if scene.delay_spread() >= t_sym {
        return Err(Error::Precondition(format!(
            "delay spread {:.3e} s is not below the symbol duration {t_sym:.3e} s",
            scene.delay_spread()
        )));
    }

    let conv_len = 2 * m_len;
    let plans = FftPair::new(conv_len);
    let m_f = m_len as f64;

    // Payload spectra are shared by all targets.
    let mut x_spec = Array2::<C64>::zeros((conv_len, n_len));
    let mut buf = vec![C64::new(0.0, 0.0); conv_len];
    for (n, col) in x.entries.axis_iter(Axis(1)).enumerate() {
        buf.iter_mut().for_each(|b| *b = C64::new(0.0, 0.0));
        buf[..m_len].iter_mut().zip(col.iter()).for_each(|(b, v)| *b = *v);
        plans.fwd.process(&mut buf);
        x_spec.column_mut(n).iter_mut().zip(buf.iter()).for_each(|(d, s)| *d = *s);
    }

    let mut out = CMatrix::zeros((m_len, n_len));
    for t in &scene.targets {
        let amp = channel_amplitude(subband, t.range_m, scene.tx_amplitude_scale)?;
        let h = t.scatter * amp;
        let delta = t.delay() * m_f * subband.chirp_spacing_hz;

        let mut kernel = vec![C64::new(0.0, 0.0); conv_len];
        let kscale = 1.0 / m_f.sqrt();
        for d in -(m_len as i64 - 1)..(m_len as i64) {
            let off = d as f64 - delta;
            let slot = d.rem_euclid(conv_len as i64) as usize;
            kernel[slot] = C64::from_polar(kscale, PI / 4.0 - PI * off * off / m_f);
        }
        plans.fwd.process(&mut kernel);

        let nu = subband.center_hz / SPEED_OF_LIGHT * t.velocity_mps;
        let dop_m: Vec<C64> = (0..m_len)
            .map(|m| C64::from_polar(1.0, 2.0 * PI * nu * m as f64 * t_sym / m_f))
            .collect();
        let norm = 1.0 / conv_len as f64;
        for n in 0..n_len {
            let dop_n = h * C64::from_polar(1.0, 2.0 * PI * nu * n as f64 * t_sym);
            buf.iter_mut()
                .zip(x_spec.column(n).iter())
                .zip(kernel.iter())
                .for_each(|((b, xs), k)| *b = xs * k);
            plans.inv.process(&mut buf);
            for m in 0..m_len {
                out[[m, n]] += buf[m] * norm * dop_m[m] * dop_n;
            }
        }
    }
    Ok(out)
}

/// Simulates the sampled radar return of `scene` in one subband and adds
/// `CN(0, ε²)` noise drawn from `seed`.
pub fn apply_radar_channel(
    x: &SymbolMatrix,
    basis: &FresnelBasis,
    scene: &SceneConfig,
    subband: &SubbandParams,
    seed: u64,
) -> Result<ReceivedCube> {
    if basis.order() != subband.num_chirps {
        return Err(Error::invalid(
            "basis",
            format!(
                "basis order {} does not match M = {}",
                basis.order(),
                subband.num_chirps
            ),
        ));
    }
    let mut samples = noise_free_return(x, scene, subband)?;
    let mut rng = seeded_rng(seed);
    for v in samples.iter_mut() {
        *v += complex_gaussian(&mut rng, subband.noise_var);
    }
    let truth_snr = scene
        .targets
        .iter()
        .map(|t| {
            let amp = channel_amplitude(subband, t.range_m, scene.tx_amplitude_scale)?;
            Ok((amp * t.scatter.norm()).powi(2) * x.average_power / subband.noise_var)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReceivedCube {
        samples,
        params: subband.clone(),
        truth_snr,
    })
}

/// Transmit amplitude that puts a unit-|h| target at the reference point at
/// the reference per-sample SNR. The same scale then applies to all
/// distances and subbands.
pub fn calibrate_tx_power(scene: &SceneConfig, payload_power: f64) -> Result<f64> {
    let r = &scene.reference;
    let sb = scene
        .subbands
        .get(r.subband)
        .ok_or_else(|| Error::invalid("reference.subband", "index out of range"))?;
    if !(payload_power > 0.0) {
        return Err(Error::invalid("payload_power", "must be > 0"));
    }
    let pl = path_loss(sb.center_hz, r.range_m, sb.absorption_per_m)?;
    let snr = 10f64.powf(r.snr_db / 10.0);
    Ok((snr * sb.noise_var * pl / payload_power).sqrt())
}

/// Subbands whose path loss at `range_m` stays below `pl_threshold_db`,
/// in scene order.
pub fn active_subbands(range_m: f64, scene: &SceneConfig, pl_threshold_db: f64) -> Vec<usize> {
    scene
        .subbands
        .iter()
        .enumerate()
        .filter(|(_, sb)| {
            path_loss_db(sb.center_hz, range_m, sb.absorption_per_m)
                .map(|db| db < pl_threshold_db)
                .unwrap_or(false)
        })
        .map(|(i, _)| i)
        .collect()
}
