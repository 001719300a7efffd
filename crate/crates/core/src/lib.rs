//! Multi-subband OCDM radar simulation for THz channels.
//!
//! The crate models a bistatic radar that transmits an orthogonal chirp
//! division multiplexing (OCDM) frame in each of `K` subbands, estimates
//! range and velocity independently per subband, and combines the
//! per-subband estimates with inverse-CRLB weights.
//!
//! ```text
//! payload ─► waveform::modulate_fft ─► channel::apply_radar_channel
//!                                            │
//!   sensing: dfnt_filter ─► remove_payload ─► periodogram ─► peak_search
//!            ─► refine_peak ─► bins_to_params ─► crlb
//!                                            │
//!                        fusion::fuse_subband_estimates
//! ```
//!
//! [`experiments`] wraps the chain in a Monte Carlo driver and [`config`]
//! holds the JSON run configuration consumed by the command-line tool.

pub mod channel;
pub mod config;
mod dsp;
pub mod error;
pub mod experiments;
pub mod fusion;
pub mod selftest;
pub mod sensing;
pub mod waveform;

pub use error::{Error, Result};

/// Complex sample type used throughout the chain.
pub type C64 = num_complex::Complex64;

/// Dense complex matrix, rows = chirp index `m`, columns = symbol index `n`.
pub type CMatrix = ndarray::Array2<C64>;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
