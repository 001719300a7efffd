//! Per-subband sensing processor.
//!
//! DFnT matched filtering, known-payload removal, an oversampled 2D
//! periodogram, multi-peak extraction, continuous refinement of each peak,
//! bin-to-parameter mapping and the CRLB variances used as fusion weights.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::channel::ReceivedCube;
use crate::dsp::{for_each_column, FftPair};
use crate::error::{Error, Result};
use crate::waveform::{FresnelBasis, SubbandParams, SymbolMatrix};
use crate::{CMatrix, C64, SPEED_OF_LIGHT};

/// Post-processing observations `Z = Y_f ⊘ X`.
#[derive(Debug, Clone)]
pub struct RadarCube {
    pub samples: CMatrix,
    pub params: SubbandParams,
}

/// Squared magnitude of the zero-padded 2D transform of a [`RadarCube`].
///
/// Rows are delay bins `m' ∈ [0, M_Per)`. Columns are centred Doppler bins:
/// column `c` holds `n' = c - N_Per/2`.
#[derive(Debug, Clone)]
pub struct PeriodogramMap {
    pub values: Array2<f64>,
    pub m_per: usize,
    pub n_per: usize,
    pub params: SubbandParams,
}

/// Grid cell of a periodogram peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeakBin {
    /// Delay bin `m'`.
    pub delay: usize,
    /// Signed Doppler bin `n'`.
    pub doppler: i64,
}

impl PeriodogramMap {
    fn half(&self) -> i64 {
        (self.n_per / 2) as i64
    }

    pub fn doppler_of_column(&self, col: usize) -> i64 {
        col as i64 - self.half()
    }

    pub fn column_of_doppler(&self, doppler: i64) -> usize {
        (doppler + self.half()).rem_euclid(self.n_per as i64) as usize
    }

    pub fn value(&self, bin: PeakBin) -> f64 {
        self.values[[bin.delay, self.column_of_doppler(bin.doppler)]]
    }
}

/// Continuous maximiser of the periodogram near a grid peak, in
/// (fractional) oversampled-grid units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedPeak {
    pub delay_bin: f64,
    pub doppler_bin: f64,
    pub power: f64,
}

/// One target as seen by one sensing processor.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandEstimate {
    pub subband_index: usize,
    pub range_m: f64,
    pub velocity_mps: f64,
    /// CRLB range variance, m².
    pub var_range: f64,
    /// CRLB velocity variance, (m/s)².
    pub var_velocity: f64,
    pub peak_power: f64,
    /// Amplitude `|h̃|` fed to the CRLB.
    pub amplitude: f64,
    /// Grid argmax the estimate was refined from.
    pub grid_bin: PeakBin,
    pub delay_bin: f64,
    pub doppler_bin: f64,
}

/// Where the CRLB amplitude comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmplitudeSource {
    /// Periodogram peak (what a receiver can do).
    Estimated,
    /// Simulation ground truth, to isolate fusion behaviour.
    Truth,
}

/// Which noise level enters the CRLB used for fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSource {
    /// Configured `ε²`.
    Nominal,
    /// Noise-plus-interference power left in `Z` after removing the fitted
    /// tones, scaled back to the `Y` domain.
    Residual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingConfig {
    /// `M_Per / M`.
    pub delay_oversampling: usize,
    /// `N_Per / N`.
    pub doppler_oversampling: usize,
    /// Exclusion half-width around extracted peaks, in grid cells.
    pub guard: usize,
    /// Refine grid peaks to the continuous periodogram maximum.
    pub refine: bool,
    pub amplitude: AmplitudeSource,
    pub noise: NoiseSource,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            delay_oversampling: 4,
            doppler_oversampling: 4,
            guard: 3,
            refine: true,
            amplitude: AmplitudeSource::Estimated,
            noise: NoiseSource::Residual,
        }
    }
}

impl SensingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delay_oversampling < 2 {
            return Err(Error::invalid(
                "sensing.delay_oversampling",
                "must be >= 2 so that M_Per > M",
            ));
        }
        if self.doppler_oversampling < 2 {
            return Err(Error::invalid(
                "sensing.doppler_oversampling",
                "must be >= 2 so that N_Per > N",
            ));
        }
        Ok(())
    }
}

/// DFnT of every column of `Y`: `Y_f[m,n] = M^{-1/2} Σ_l Y[l,n] e^{-jπ/4} e^{jπ(m-l)²/M}`.
///
/// Evaluated through the circulant factorisation `Φ = Fᴴ Γ F`.
pub fn dfnt_filter(y: &ReceivedCube, basis: &FresnelBasis) -> Result<CMatrix> {
    let order = basis.order();
    if y.samples.nrows() != order {
        return Err(Error::invalid(
            "cube",
            format!("cube has {} rows but the basis order is {order}", y.samples.nrows()),
        ));
    }
    let plans = FftPair::new(order);
    let norm = 1.0 / order as f64;
    let mut out = y.samples.clone();
    for_each_column(&mut out, |col| {
        plans.fwd.process(col);
        for (v, g) in col.iter_mut().zip(basis.gamma()) {
            *v *= g * norm;
        }
        plans.inv.process(col);
    });
    Ok(out)
}

/// Element-wise division by the known payload.
pub fn remove_payload(
    filtered: &CMatrix,
    payload: &SymbolMatrix,
    params: &SubbandParams,
) -> Result<RadarCube> {
    if filtered.dim() != payload.entries.dim() {
        return Err(Error::invalid(
            "payload",
            format!(
                "payload shape {:?} differs from filtered cube {:?}",
                payload.entries.dim(),
                filtered.dim()
            ),
        ));
    }
    if payload.entries.iter().any(|x| x.norm_sqr() == 0.0) {
        return Err(Error::invalid("payload", "zero-modulus payload symbol"));
    }
    Ok(RadarCube {
        samples: ndarray::Zip::from(filtered)
            .and(&payload.entries)
            .map_collect(|y, x| y / x),
        params: params.clone(),
    })
}

/// `|Σ_m Σ_n Z[m,n] e^{+j2πmm'/M_Per} e^{-j2πnn'/N_Per}|²` on the padded grid.
pub fn periodogram(z: &RadarCube, m_per: usize, n_per: usize) -> Result<PeriodogramMap> {
    let (m_len, n_len) = z.samples.dim();
    if m_per <= m_len {
        return Err(Error::invalid("m_per", format!("need M_Per > M = {m_len}, got {m_per}")));
    }
    if n_per <= n_len {
        return Err(Error::invalid("n_per", format!("need N_Per > N = {n_len}, got {n_per}")));
    }
    let delay_plan = FftPair::new(m_per);
    let doppler_plan = FftPair::new(n_per);

    let mut grid = vec![C64::new(0.0, 0.0); m_per * n_per];
    let mut col = vec![C64::new(0.0, 0.0); m_per];
    for n in 0..n_len {
        col.iter_mut().for_each(|c| *c = C64::new(0.0, 0.0));
        col[..m_len]
            .iter_mut()
            .zip(z.samples.column(n).iter())
            .for_each(|(c, v)| *c = *v);
        // The delay axis carries e^{-j2πmτΔf}, so it is undone with the +j kernel.
        delay_plan.inv.process(&mut col);
        for (mp, v) in col.iter().enumerate() {
            grid[mp * n_per + n] = *v;
        }
    }
    for row in grid.chunks_exact_mut(n_per) {
        doppler_plan.fwd.process(row);
    }

    let half = n_per / 2;
    let values = Array2::from_shape_fn((m_per, n_per), |(mp, c)| {
        grid[mp * n_per + (c + n_per - half) % n_per].norm_sqr()
    });
    Ok(PeriodogramMap {
        values,
        m_per,
        n_per,
        params: z.params.clone(),
    })
}

fn cyclic_dist(a: usize, b: usize, len: usize) -> usize {
    let d = a.abs_diff(b) % len;
    d.min(len - d)
}

/// Successive maximum extraction of `num_targets` peaks.
///
/// After each pick, the `(2·guard+1)²` cells around it (cyclic on both axes)
/// are excluded. Ties go to the lowest `m'`, then the lowest `n'`.
pub fn peak_search(map: &PeriodogramMap, num_targets: usize, guard: usize) -> Result<Vec<PeakBin>> {
    if num_targets == 0 {
        return Err(Error::invalid("num_targets", "must be >= 1"));
    }
    let mut picked: Vec<(usize, usize)> = Vec::with_capacity(num_targets);
    for _ in 0..num_targets {
        let mut best: Option<(usize, usize, f64)> = None;
        for mp in 0..map.m_per {
            for c in 0..map.n_per {
                let excluded = picked.iter().any(|&(pm, pc)| {
                    cyclic_dist(mp, pm, map.m_per) <= guard && cyclic_dist(c, pc, map.n_per) <= guard
                });
                if excluded {
                    continue;
                }
                let v = map.values[[mp, c]];
                if best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((mp, c, v));
                }
            }
        }
        let (mp, c, _) = best.ok_or_else(|| {
            Error::Estimation(format!(
                "cannot extract {num_targets} peaks with guard {guard} from a {}x{} grid",
                map.m_per, map.n_per
            ))
        })?;
        picked.push((mp, c));
    }
    Ok(picked
        .into_iter()
        .map(|(mp, c)| PeakBin {
            delay: mp,
            doppler: map.doppler_of_column(c),
        })
        .collect())
}

/// Periodogram value and its first and second derivatives at `(μ, ν)`.
struct LocalFit {
    power: f64,
    grad: [f64; 2],
    hess: [[f64; 2]; 2],
}

fn local_fit(z: &CMatrix, m_per: usize, n_per: usize, mu: f64, nu: f64) -> LocalFit {
    let (m_len, n_len) = z.dim();
    let a = 2.0 * PI / m_per as f64;
    let b = 2.0 * PI / n_per as f64;
    let en: Vec<C64> = (0..n_len).map(|n| C64::from_polar(1.0, -b * nu * n as f64)).collect();
    let j = C64::new(0.0, 1.0);

    let (mut s, mut s_m, mut s_mm) = (C64::default(), C64::default(), C64::default());
    let (mut t1, mut t1_m, mut t2) = (C64::default(), C64::default(), C64::default());
    for m in 0..m_len {
        let (mut r0, mut r1, mut r2) = (C64::default(), C64::default(), C64::default());
        for (n, e) in en.iter().enumerate() {
            let w = z[[m, n]] * e;
            let nf = n as f64;
            r0 += w;
            r1 += w * nf;
            r2 += w * (nf * nf);
        }
        let em = C64::from_polar(1.0, a * mu * m as f64);
        let mf = m as f64;
        s += em * r0;
        s_m += em * r0 * mf;
        s_mm += em * r0 * (mf * mf);
        t1 += em * r1;
        t1_m += em * r1 * mf;
        t2 += em * r2;
    }
    let amp = s;
    let d_mu = j * a * s_m;
    let d_nu = -j * b * t1;
    let d_mumu = -(a * a) * s_mm;
    let d_nunu = -(b * b) * t2;
    let d_munu = (a * b) * t1_m;

    let re = |x: C64| x.re;
    LocalFit {
        power: amp.norm_sqr(),
        grad: [2.0 * re(amp.conj() * d_mu), 2.0 * re(amp.conj() * d_nu)],
        hess: [
            [
                2.0 * re(d_mu.conj() * d_mu + amp.conj() * d_mumu),
                2.0 * re(d_nu.conj() * d_mu + amp.conj() * d_munu),
            ],
            [
                2.0 * re(d_nu.conj() * d_mu + amp.conj() * d_munu),
                2.0 * re(d_nu.conj() * d_nu + amp.conj() * d_nunu),
            ],
        ],
    }
}

/// Maximises the continuous periodogram of `z` starting from a grid peak.
///
/// Damped Newton ascent restricted to one grid cell around the start; if the
/// local curvature is not concave, or the search fails to improve on the
/// grid value, the grid peak is returned unchanged.
pub fn refine_peak(z: &RadarCube, map: &PeriodogramMap, bin: PeakBin) -> RefinedPeak {
    let start = (bin.delay as f64, bin.doppler as f64);
    let grid_power = map.value(bin);
    let (mut mu, mut nu) = start;
    let mut fit = local_fit(&z.samples, map.m_per, map.n_per, mu, nu);
    for _ in 0..40 {
        let h = fit.hess;
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if !(h[0][0] < 0.0 && det > 0.0) {
            break;
        }
        let step_mu = -(h[1][1] * fit.grad[0] - h[0][1] * fit.grad[1]) / det;
        let step_nu = -(-h[1][0] * fit.grad[0] + h[0][0] * fit.grad[1]) / det;
        let mut scale = 1.0f64;
        let longest = step_mu.abs().max(step_nu.abs());
        if longest > 0.5 {
            scale = 0.5 / longest;
        }
        let mut accepted = false;
        for _ in 0..12 {
            let (cm, cn) = (mu + scale * step_mu, nu + scale * step_nu);
            let cand = local_fit(&z.samples, map.m_per, map.n_per, cm, cn);
            if cand.power >= fit.power {
                mu = cm;
                nu = cn;
                fit = cand;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || longest * scale < 1e-10 {
            break;
        }
    }
    if (mu - start.0).abs() > 1.0 || (nu - start.1).abs() > 1.0 || !(fit.power >= grid_power) {
        return RefinedPeak {
            delay_bin: start.0,
            doppler_bin: start.1,
            power: grid_power,
        };
    }
    RefinedPeak {
        delay_bin: mu,
        doppler_bin: nu,
        power: fit.power,
    }
}

/// Maps (possibly fractional) periodogram bins to `(range m, velocity m/s)`.
///
/// `τ = m'/(Δf·M_Per)` with `m'` wrapped into `[0, M_Per)`, and
/// `ϑ = n'/(f_c·T·N_Per)`.
pub fn bins_to_params(
    delay_bin: f64,
    doppler_bin: f64,
    m_per: usize,
    n_per: usize,
    params: &SubbandParams,
) -> (f64, f64) {
    let m_wrapped = delay_bin.rem_euclid(m_per as f64);
    let tau = m_wrapped / (params.chirp_spacing_hz * m_per as f64);
    let nu = doppler_bin / (params.center_hz * params.symbol_duration() * n_per as f64);
    (SPEED_OF_LIGHT * tau, SPEED_OF_LIGHT * nu)
}

/// CRLB variances `(σ²_r, σ²_v)` for amplitude `|h̃|` and payload power `P_avg`.
pub fn crlb(params: &SubbandParams, amplitude: f64, payload_power: f64) -> Result<(f64, f64)> {
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::invalid("amplitude", "must be finite and > 0"));
    }
    if !(payload_power > 0.0) {
        return Err(Error::invalid("payload_power", "must be > 0"));
    }
    let m = params.num_chirps as f64;
    let n = params.num_symbols as f64;
    let snr = amplitude * amplitude * payload_power;
    let common = 6.0 * params.noise_var / ((2.0 * PI).powi(2) * m * n * snr);
    let range_scale = SPEED_OF_LIGHT / params.chirp_spacing_hz;
    let vel_scale = SPEED_OF_LIGHT / (params.symbol_duration() * params.center_hz);
    Ok((
        common * range_scale * range_scale / (n * n - 1.0),
        common * vel_scale * vel_scale / (m * m - 1.0),
    ))
}

/// `|h̃|` from a periodogram peak value: `√P / (M·N)`.
pub fn amplitude_from_power(power: f64, num_chirps: usize, num_symbols: usize) -> f64 {
    power.max(0.0).sqrt() / (num_chirps * num_symbols) as f64
}

pub fn estimate_amplitude(map: &PeriodogramMap, bin: PeakBin) -> f64 {
    amplitude_from_power(map.value(bin), map.params.num_chirps, map.params.num_symbols)
}

/// Per-sample noise-plus-interference variance of `Y`, estimated from the
/// energy of `Z` that the fitted tones do not explain.
///
/// A tone of periodogram peak `P` carries `P/(M·N)` of the energy of `Z`.
/// Division by the payload scales noise by `1/P_avg`, which is undone here.
pub fn residual_noise_var(z: &RadarCube, peak_powers: &[f64], payload_power: f64) -> f64 {
    let (m_len, n_len) = z.samples.dim();
    let mn = (m_len * n_len) as f64;
    let total: f64 = z.samples.iter().map(|v| v.norm_sqr()).sum();
    let tones: f64 = peak_powers.iter().map(|p| p / mn).sum();
    let dof = (mn - 2.0 * peak_powers.len() as f64).max(1.0);
    (total - tones).max(0.0) / dof * payload_power
}

/// Ground-truth `(range, amplitude)` pairs for [`AmplitudeSource::Truth`].
pub type TruthAmplitudes<'a> = &'a [(f64, f64)];

/// Runs the full sensing processor on one received cube.
pub fn estimate_targets(
    cube: &ReceivedCube,
    basis: &FresnelBasis,
    payload: &SymbolMatrix,
    num_targets: usize,
    cfg: &SensingConfig,
    truth: Option<TruthAmplitudes<'_>>,
) -> Result<Vec<SubbandEstimate>> {
    cfg.validate()?;
    let params = &cube.params;
    let filtered = dfnt_filter(cube, basis)?;
    let z = remove_payload(&filtered, payload, params)?;
    let m_per = params.num_chirps * cfg.delay_oversampling;
    let n_per = params.num_symbols * cfg.doppler_oversampling;
    let map = periodogram(&z, m_per, n_per)?;
    let peaks = peak_search(&map, num_targets, cfg.guard)?;
    let refined: Vec<RefinedPeak> = peaks
        .iter()
        .map(|&bin| {
            if cfg.refine {
                refine_peak(&z, &map, bin)
            } else {
                RefinedPeak {
                    delay_bin: bin.delay as f64,
                    doppler_bin: bin.doppler as f64,
                    power: map.value(bin),
                }
            }
        })
        .collect();
    let noise_params = match cfg.noise {
        NoiseSource::Nominal => params.clone(),
        NoiseSource::Residual => {
            let powers: Vec<f64> = refined.iter().map(|r| r.power).collect();
            let var = residual_noise_var(&z, &powers, payload.average_power);
            SubbandParams {
                noise_var: if var > 0.0 { var } else { params.noise_var },
                ..params.clone()
            }
        }
    };

    peaks
        .into_iter()
        .zip(refined)
        .map(|(bin, refined)| {
            let (range_m, velocity_mps) =
                bins_to_params(refined.delay_bin, refined.doppler_bin, m_per, n_per, params);
            let amplitude = match (cfg.amplitude, truth) {
                (AmplitudeSource::Truth, Some(list)) if !list.is_empty() => list
                    .iter()
                    .min_by(|a, b| (a.0 - range_m).abs().total_cmp(&(b.0 - range_m).abs()))
                    .map(|t| t.1)
                    .unwrap_or(0.0),
                _ => amplitude_from_power(refined.power, params.num_chirps, params.num_symbols),
            };
            if !(amplitude > 0.0) {
                return Err(Error::Estimation(format!(
                    "subband {}: zero amplitude at peak {:?}",
                    params.index, bin
                )));
            }
            let (var_range, var_velocity) = crlb(&noise_params, amplitude, payload.average_power)?;
            Ok(SubbandEstimate {
                subband_index: params.index,
                range_m,
                velocity_mps,
                var_range,
                var_velocity,
                peak_power: refined.power,
                amplitude,
                grid_bin: bin,
                delay_bin: refined.delay_bin,
                doppler_bin: refined.doppler_bin,
            })
        })
        .collect()
}
