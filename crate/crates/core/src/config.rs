//! Serialized run configuration (JSON) and its conversion into scene and
//! sweep descriptions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{calibrate_tx_power, default_absorption, ReferencePoint, SceneConfig, TargetTruth};
use crate::error::{Error, Result};
use crate::experiments::{PipelineConfig, SweepSpec};
use crate::sensing::{AmplitudeSource, NoiseSource, SensingConfig};
use crate::waveform::SubbandParams;

pub const SCHEMA_VERSION: u32 = 1;

/// Lowest and highest frequency of the default subband layout, Hz.
pub const BAND_EDGES_HZ: (f64, f64) = (0.3e12, 1.7e12);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub subbands: Vec<SubbandConfig>,
    pub targets: Vec<TargetConfig>,
    pub reference: ReferenceConfig,
    pub max_velocity_mps: f64,
    pub pipeline: PipelineSettings,
    pub sweep: SweepSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubbandConfig {
    pub center_hz: f64,
    pub chirp_spacing_hz: f64,
    pub num_chirps: usize,
    pub num_symbols: usize,
    pub noise_var: f64,
    /// Falls back to the bundled absorption table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absorption_per_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub range_m: f64,
    pub velocity_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub snr_db: f64,
    pub range_m: f64,
    pub subband: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeSetting {
    Estimated,
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSetting {
    Nominal,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSettings {
    pub pl_threshold_db: f64,
    pub payload_power: f64,
    pub delay_oversampling: usize,
    pub doppler_oversampling: usize,
    pub guard: usize,
    pub refine: bool,
    pub amplitude: AmplitudeSetting,
    /// Noise level used in the CRLB fusion weights.
    pub noise: NoiseSetting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub snr_grid_db: Vec<f64>,
    pub distance_grid_m: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

/// `K` subbands spread evenly over the default band.
pub fn even_layout(k: usize, num_chirps: usize, num_symbols: usize) -> Vec<SubbandConfig> {
    let (lo, hi) = BAND_EDGES_HZ;
    let width = (hi - lo) / k as f64;
    (0..k)
        .map(|i| SubbandConfig {
            center_hz: lo + (i as f64 + 0.5) * width,
            chirp_spacing_hz: 3.9e6,
            num_chirps,
            num_symbols,
            noise_var: 1.0,
            absorption_per_m: None,
        })
        .collect()
}

impl RunConfig {
    /// Desk-scale defaults: K = 4, M = N = 64, 200 trials.
    pub fn desk_default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            subbands: even_layout(4, 64, 64),
            targets: vec![TargetConfig {
                range_m: 0.1,
                velocity_mps: 23.0,
            }],
            reference: ReferenceConfig {
                snr_db: 15.0,
                range_m: 0.1,
                subband: 0,
            },
            max_velocity_mps: 50.0,
            pipeline: PipelineSettings {
                pl_threshold_db: 110.0,
                payload_power: 1.0,
                delay_oversampling: 4,
                doppler_oversampling: 4,
                guard: 3,
                refine: true,
                amplitude: AmplitudeSetting::Estimated,
                noise: NoiseSetting::Residual,
            },
            sweep: SweepSettings {
                snr_grid_db: (0..10).map(|i| -12.0 + 3.0 * i as f64).collect(),
                distance_grid_m: vec![0.1, 2.0],
                trials: 200,
                seed: 1,
            },
        }
    }

    /// Full-size configuration: K = 8, M = N = 256, 500 trials.
    pub fn paper_scale() -> Self {
        let mut cfg = Self::desk_default();
        cfg.apply_paper_scale();
        cfg
    }

    /// Switches the subband layout to K = 8, M = N = 256 and raises the
    /// trial count to at least 500.
    pub fn apply_paper_scale(&mut self) {
        self.subbands = even_layout(8, 256, 256);
        if self.reference.subband >= self.subbands.len() {
            self.reference.subband = 0;
        }
        self.sweep.trials = self.sweep.trials.max(500);
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::invalid("config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks the schema version and every derived domain object.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        self.sweep_spec()?.validate()
    }

    pub fn subband_params(&self) -> Vec<SubbandParams> {
        self.subbands
            .iter()
            .enumerate()
            .map(|(index, s)| SubbandParams {
                index,
                center_hz: s.center_hz,
                chirp_spacing_hz: s.chirp_spacing_hz,
                num_chirps: s.num_chirps,
                num_symbols: s.num_symbols,
                absorption_per_m: s.absorption_per_m.unwrap_or_else(|| default_absorption(s.center_hz)),
                noise_var: s.noise_var,
            })
            .collect()
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let p = &self.pipeline;
        PipelineConfig {
            sensing: SensingConfig {
                delay_oversampling: p.delay_oversampling,
                doppler_oversampling: p.doppler_oversampling,
                guard: p.guard,
                refine: p.refine,
                amplitude: match p.amplitude {
                    AmplitudeSetting::Estimated => AmplitudeSource::Estimated,
                    AmplitudeSetting::Truth => AmplitudeSource::Truth,
                },
                noise: match p.noise {
                    NoiseSetting::Nominal => NoiseSource::Nominal,
                    NoiseSetting::Residual => NoiseSource::Residual,
                },
            },
            pl_threshold_db: p.pl_threshold_db,
            payload_power: p.payload_power,
        }
    }

    /// Scene at the configured reference point, transmit scale calibrated.
    pub fn scene(&self) -> Result<SceneConfig> {
        let mut scene = SceneConfig {
            targets: self
                .targets
                .iter()
                .map(|t| TargetTruth::new(t.range_m, t.velocity_mps))
                .collect(),
            subbands: self.subband_params(),
            tx_amplitude_scale: 1.0,
            reference: ReferencePoint {
                snr_db: self.reference.snr_db,
                range_m: self.reference.range_m,
                subband: self.reference.subband,
            },
            max_velocity_mps: self.max_velocity_mps,
        };
        scene.validate()?;
        scene.tx_amplitude_scale = calibrate_tx_power(&scene, self.pipeline.payload_power)?;
        Ok(scene)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let pipeline = self.pipeline_config();
        pipeline.validate()?;
        Ok(SweepSpec {
            snr_grid_db: self.sweep.snr_grid_db.clone(),
            distance_grid_m: self.sweep.distance_grid_m.clone(),
            trials: self.sweep.trials,
            seed: self.sweep.seed,
            scene: self.scene()?,
            pipeline,
        })
    }
}
