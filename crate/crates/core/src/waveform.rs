//! OCDM chirp basis and frame synthesis.
//!
//! The discrete Fresnel transform (DFnT) of even order `M` is the circulant
//! unitary matrix
//!
//! ```text
//! Φ[u][v] = M^{-1/2} · e^{-jπ/4} · e^{jπ(u - v)²/M}
//! ```
//!
//! It is diagonalised by the unitary DFT, `Φ = Fᴴ Γ F`, with the root
//! Zadoff-Chu eigenvalues `Γ(m) = e^{-jπm²/M}`. An OCDM frame is
//! `S = Φᴴ X`, which can be built either densely or as DFT precoding
//! followed by an OFDM-style inverse DFT.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;

use crate::dsp::{for_each_column, seeded_rng, FftPair};
use crate::error::{Error, Result};
use crate::{CMatrix, C64};

/// Per-subband configuration of one OCDM modulator / sensing processor.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandParams {
    /// Position of the subband within the scene (0-based, reported as `sp<index+1>`).
    pub index: usize,
    /// Carrier frequency `f_c`, Hz.
    pub center_hz: f64,
    /// Chirp spacing `Δf`, Hz. The symbol duration is `T = 1/Δf`.
    pub chirp_spacing_hz: f64,
    /// Chirps per symbol `M` (even).
    pub num_chirps: usize,
    /// Symbols per frame `N`.
    pub num_symbols: usize,
    /// Medium absorption coefficient at `f_c`, 1/m.
    pub absorption_per_m: f64,
    /// Receiver noise variance `ε²`.
    pub noise_var: f64,
}

impl SubbandParams {
    /// OCDM symbol duration `T = 1/Δf`, seconds.
    pub fn symbol_duration(&self) -> f64 {
        1.0 / self.chirp_spacing_hz
    }

    /// Occupied bandwidth `M·Δf`, Hz.
    pub fn bandwidth(&self) -> f64 {
        self.num_chirps as f64 * self.chirp_spacing_hz
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("subbands[{}].{}", self.index, name);
        if self.num_chirps < 2 || self.num_chirps % 2 != 0 {
            return Err(Error::invalid(
                field("num_chirps"),
                format!(
                    "M must be an even integer >= 2 (Zadoff-Chu eigenvalues need even M), got {}",
                    self.num_chirps
                ),
            ));
        }
        if self.num_symbols < 2 {
            return Err(Error::invalid(
                field("num_symbols"),
                format!("N must be >= 2, got {}", self.num_symbols),
            ));
        }
        if !(self.center_hz.is_finite() && self.center_hz > 0.0) {
            return Err(Error::invalid(field("center_hz"), "must be finite and > 0"));
        }
        if !(self.chirp_spacing_hz.is_finite() && self.chirp_spacing_hz > 0.0) {
            return Err(Error::invalid(field("chirp_spacing_hz"), "must be finite and > 0"));
        }
        if !(self.absorption_per_m.is_finite() && self.absorption_per_m >= 0.0) {
            return Err(Error::invalid(field("absorption_per_m"), "must be finite and >= 0"));
        }
        if !(self.noise_var.is_finite() && self.noise_var > 0.0) {
            return Err(Error::invalid(field("noise_var"), "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Payload alphabet tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constellation {
    /// Four phases `e^{j(π/4 + kπ/2)}`, constant modulus.
    Qpsk,
}

/// `M × N` payload symbols, one column per OCDM symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolMatrix {
    pub entries: CMatrix,
    pub constellation: Constellation,
    pub average_power: f64,
}

impl SymbolMatrix {
    pub fn num_chirps(&self) -> usize {
        self.entries.nrows()
    }

    pub fn num_symbols(&self) -> usize {
        self.entries.ncols()
    }
}

/// DFnT matrix of one order together with its eigenvalues.
#[derive(Debug, Clone)]
pub struct FresnelBasis {
    order: usize,
    phi: CMatrix,
    gamma: Vec<C64>,
}

impl FresnelBasis {
    pub fn order(&self) -> usize {
        self.order
    }

    /// The DFnT matrix `Φ`.
    pub fn phi(&self) -> &CMatrix {
        &self.phi
    }

    /// The IDFnT matrix `Φᴴ`.
    pub fn phi_hermitian(&self) -> CMatrix {
        self.phi.t().mapv(|z| z.conj())
    }

    /// Eigenvalues `Γ(m)` of `Φ`.
    pub fn gamma(&self) -> &[C64] {
        &self.gamma
    }

    /// Self-test hook: lets a check corrupt the eigenvalue table.
    pub(crate) fn gamma_mut(&mut self) -> &mut [C64] {
        &mut self.gamma
    }
}

/// Baseband OCDM frame `S = Φᴴ X`.
#[derive(Debug, Clone)]
pub struct OcdmFrame {
    pub samples: CMatrix,
}

/// Builds the order-`M` DFnT and its Zadoff-Chu eigenvalues.
pub fn build_fresnel_basis(order: usize) -> Result<FresnelBasis> {
    if order < 2 || order % 2 != 0 {
        return Err(Error::invalid(
            "order",
            format!("DFnT order must be even and >= 2, got {order}"),
        ));
    }
    let m = order as f64;
    let scale = 1.0 / m.sqrt();
    // e^{jπk²/M} is M-periodic in k for even M, so index by the cyclic lag.
    let lag: Vec<C64> = (0..order)
        .map(|k| {
            let k = k as f64;
            C64::from_polar(scale, -PI / 4.0 + PI * k * k / m)
        })
        .collect();
    let phi = Array2::from_shape_fn((order, order), |(u, v)| lag[(u + order - v) % order]);
    let gamma = (0..order)
        .map(|k| {
            let k = k as f64;
            C64::from_polar(1.0, -PI * k * k / m)
        })
        .collect();
    Ok(FresnelBasis { order, phi, gamma })
}

fn check_rows(x: &SymbolMatrix, basis: &FresnelBasis) -> Result<()> {
    if x.num_chirps() != basis.order() {
        return Err(Error::invalid(
            "symbols",
            format!(
                "payload has {} rows but the basis order is {}",
                x.num_chirps(),
                basis.order()
            ),
        ));
    }
    Ok(())
}

/// Reference synthesis: dense product `Φᴴ X`.
pub fn modulate_direct(x: &SymbolMatrix, basis: &FresnelBasis) -> Result<OcdmFrame> {
    check_rows(x, basis)?;
    Ok(OcdmFrame {
        samples: basis.phi_hermitian().dot(&x.entries),
    })
}

/// Fast synthesis: per column `Fᴴ Γᴴ F x`, i.e. DFT precoding with the
/// conjugated Zadoff-Chu diagonal followed by an inverse DFT.
pub fn modulate_fft(x: &SymbolMatrix, basis: &FresnelBasis) -> Result<OcdmFrame> {
    check_rows(x, basis)?;
    let order = basis.order();
    let plans = FftPair::new(order);
    let norm = 1.0 / order as f64;
    let mut samples = x.entries.clone();
    for_each_column(&mut samples, |col| {
        plans.fwd.process(col);
        for (v, g) in col.iter_mut().zip(basis.gamma()) {
            *v *= g.conj() * norm;
        }
        plans.inv.process(col);
    });
    Ok(OcdmFrame { samples })
}

/// Deterministic constant-modulus payload with mean power `average_power`.
pub fn generate_payload(params: &SubbandParams, average_power: f64, seed: u64) -> SymbolMatrix {
    let mut rng = seeded_rng(seed);
    let amp = average_power.sqrt();
    let entries = Array2::from_shape_simple_fn((params.num_chirps, params.num_symbols), || {
        let k: u32 = rng.random_range(0..4);
        C64::from_polar(amp, PI / 4.0 + PI / 2.0 * k as f64)
    });
    SymbolMatrix {
        entries,
        constellation: Constellation::Qpsk,
        average_power,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(m: usize, n: usize) -> SubbandParams {
        SubbandParams {
            index: 0,
            center_hz: 3e11,
            chirp_spacing_hz: 3.9e6,
            num_chirps: m,
            num_symbols: n,
            absorption_per_m: 0.0,
            noise_var: 1.0,
        }
    }

    fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    fn fro(a: &CMatrix) -> f64 {
        a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn gamma_order_two() {
        let b = build_fresnel_basis(2).unwrap();
        assert!((b.gamma()[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((b.gamma()[1] - C64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn gamma_zero_is_one() {
        for m in [2, 4, 6, 32, 256] {
            let b = build_fresnel_basis(m).unwrap();
            assert_eq!(b.gamma()[0], C64::new(1.0, 0.0));
        }
    }

    #[test]
    fn order_four_unitary_explicit_product() {
        let b = build_fresnel_basis(4).unwrap();
        let phi = b.phi();
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..4 {
                    acc += phi[[i, k]] * phi[[j, k]].conj();
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - C64::new(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn odd_or_zero_order_rejected() {
        assert!(matches!(build_fresnel_basis(3), Err(Error::InvalidParameter { .. })));
        assert!(build_fresnel_basis(0).is_err());
        assert!(build_fresnel_basis(1).is_err());
    }

    #[test]
    fn direct_all_ones_order_two() {
        // Φ = 2^{-1/2} [[e^{-jπ/4}, e^{jπ/4}], [e^{jπ/4}, e^{-jπ/4}]], so
        // Φᴴ·[1, 1]ᵀ = 2^{-1/2}·2cos(π/4) = 1 in both rows.
        let b = build_fresnel_basis(2).unwrap();
        let x = SymbolMatrix {
            entries: Array2::from_elem((2, 1), C64::new(1.0, 0.0)),
            constellation: Constellation::Qpsk,
            average_power: 1.0,
        };
        let s = modulate_direct(&x, &b).unwrap();
        for v in s.samples.iter() {
            assert!((v - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn zero_payload_gives_zero_frame() {
        let b = build_fresnel_basis(8).unwrap();
        let x = SymbolMatrix {
            entries: Array2::zeros((8, 3)),
            constellation: Constellation::Qpsk,
            average_power: 1.0,
        };
        assert!(modulate_direct(&x, &b).unwrap().samples.iter().all(|z| z.norm() == 0.0));
        assert!(modulate_fft(&x, &b).unwrap().samples.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn random_payload_energy_and_paths_agree() {
        let b = build_fresnel_basis(8).unwrap();
        let x = generate_payload(&params(8, 4), 1.0, 11);
        let direct = modulate_direct(&x, &b).unwrap();
        let fast = modulate_fft(&x, &b).unwrap();
        assert!((fro(&direct.samples) - fro(&x.entries)).abs() < 1e-10);
        assert!(max_abs_diff(&direct.samples, &fast.samples) < 1e-10);
    }

    #[test]
    fn impulse_response_is_first_column_of_idfnt() {
        let b = build_fresnel_basis(16).unwrap();
        let mut entries = Array2::zeros((16, 2));
        entries[[0, 0]] = C64::new(1.0, 0.0);
        let x = SymbolMatrix {
            entries,
            constellation: Constellation::Qpsk,
            average_power: 1.0,
        };
        let s = modulate_fft(&x, &b).unwrap();
        for m in 0..16 {
            assert!((s.samples[[m, 0]] - b.phi()[[0, m]].conj()).norm() < 1e-12);
            assert!(s.samples[[m, 1]].norm() < 1e-12);
        }
    }

    #[test]
    fn paper_scale_energy_preserved() {
        let b = build_fresnel_basis(256).unwrap();
        let x = generate_payload(&params(256, 256), 1.0, 3);
        let s = modulate_fft(&x, &b).unwrap();
        let ex = fro(&x.entries).powi(2);
        let es = fro(&s.samples).powi(2);
        assert!(((es - ex) / ex).abs() < 1e-9);
    }

    #[test]
    fn mismatched_rows_rejected() {
        let b = build_fresnel_basis(8).unwrap();
        let x = generate_payload(&params(16, 4), 1.0, 0);
        assert!(modulate_direct(&x, &b).is_err());
        assert!(modulate_fft(&x, &b).is_err());
    }

    #[test]
    fn payload_is_deterministic_and_constant_modulus() {
        let p = params(256, 256);
        let a = generate_payload(&p, 1.0, 1);
        let b = generate_payload(&p, 1.0, 1);
        assert_eq!(a, b);
        assert_ne!(a, generate_payload(&p, 1.0, 2));
        let mean: f64 = a.entries.iter().map(|z| z.norm_sqr()).sum::<f64>() / 65536.0;
        assert!((mean - 1.0).abs() < 1e-12);
        let c = generate_payload(&params(8, 8), 2.5, 9);
        assert!(c.entries.iter().all(|z| (z.norm() - 2.5f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn subband_validation_names_field() {
        let mut p = params(63, 8);
        let err = p.validate().unwrap_err().to_string();
        assert!(err.contains("num_chirps") && err.contains("even"), "{err}");
        p.num_chirps = 64;
        p.noise_var = 0.0;
        assert!(p.validate().unwrap_err().to_string().contains("noise_var"));
    }
}
