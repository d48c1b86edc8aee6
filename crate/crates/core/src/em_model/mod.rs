//! Multiport network and open-circuit pattern data, plus the synthetic
//! surrogates that stand in for full-wave solver output.

mod network;
mod pattern;
mod surrogate;
mod touchstone;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use network::{load_network, parse_native_network, write_native_network, MultiportNetwork};
pub use pattern::{load_pattern_bundle, write_pattern_bundle, PatternGrid, PatternManifest};
pub use surrogate::{synth_dipole_translations, synth_pixel_surrogate, CouplingParams, PixelLayout};
pub use touchstone::parse_touchstone;

use crate::numerics::{NumericsError, PasSupport};

#[derive(Debug, thiserror::Error)]
pub enum EmModelError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}: {message}")]
    Parse { origin: String, line: usize, message: String },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("pattern table for frequency {frequency} is missing port {port}")]
    MissingPort { frequency: usize, port: usize },
    #[error("port count mismatch: {0}")]
    PortCountMismatch(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl EmModelError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EmModelError::Io { path: path.into(), source }
    }

    pub(crate) fn parse(origin: &str, line: usize, message: impl Into<String>) -> Self {
        EmModelError::Parse { origin: origin.to_string(), line, message: message.into() }
    }
}

/// Frequency samples in hertz, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    samples: Vec<f64>,
}

impl FrequencyGrid {
    /// `T` evenly spaced samples from `f_lower` to `f_upper`; `T = 1` is the
    /// single frequency `f_lower`.
    pub fn uniform(f_lower: f64, f_upper: f64, count: usize) -> Result<Self, EmModelError> {
        if count == 0 {
            return Err(EmModelError::Invalid("frequency grid needs at least one sample".into()));
        }
        if !(f_lower.is_finite() && f_upper.is_finite()) || f_lower > f_upper {
            return Err(EmModelError::Invalid(format!(
                "frequency window [{f_lower}, {f_upper}] is not ordered"
            )));
        }
        if count > 1 && f_lower == f_upper {
            return Err(EmModelError::Invalid("multiple samples need f_lower < f_upper".into()));
        }
        let samples = if count == 1 {
            vec![f_lower]
        } else {
            let step = (f_upper - f_lower) / (count - 1) as f64;
            (0..count)
                .map(|t| if t == count - 1 { f_upper } else { f_lower + t as f64 * step })
                .collect()
        };
        Ok(Self { samples })
    }

    pub fn from_samples(samples: Vec<f64>) -> Result<Self, EmModelError> {
        if samples.is_empty() {
            return Err(EmModelError::Invalid("frequency grid needs at least one sample".into()));
        }
        if samples.iter().any(|f| !f.is_finite()) {
            return Err(EmModelError::Invalid("non-finite frequency".into()));
        }
        if samples.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EmModelError::Invalid("frequencies must be strictly increasing".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn lower(&self) -> f64 {
        self.samples[0]
    }

    pub fn upper(&self) -> f64 {
        *self.samples.last().unwrap()
    }

    /// Index of every sample of `wanted` inside `self`, matched to 1e-9 relative.
    pub fn locate(&self, wanted: &FrequencyGrid) -> Result<Vec<usize>, EmModelError> {
        wanted
            .samples
            .iter()
            .map(|&f| {
                self.samples
                    .iter()
                    .position(|&g| (g - f).abs() <= 1e-9 * f.abs().max(1.0))
                    .ok_or_else(|| {
                        EmModelError::Invalid(format!("frequency {f} Hz is not sampled by the model"))
                    })
            })
            .collect()
    }
}

/// Angular power density of the incident field; constant on its support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerAngularSpectrum {
    pub support: PasSupport,
    pub density: f64,
}

impl PowerAngularSpectrum {
    pub fn uniform(support: PasSupport) -> Self {
        Self { support, density: 1.0 }
    }

    pub fn new(support: PasSupport, density: f64) -> Result<Self, EmModelError> {
        if !(density.is_finite() && density >= 0.0) {
            return Err(EmModelError::Invalid(format!("PAS density {density} must be >= 0")));
        }
        Ok(Self { support, density })
    }

    /// `S(theta, phi)`: the density on the support, zero elsewhere.
    pub fn weight(&self, theta: f64) -> f64 {
        if self.support.contains(theta) {
            self.density
        } else {
            0.0
        }
    }
}
