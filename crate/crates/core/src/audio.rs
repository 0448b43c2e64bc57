use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::SAMPLE_RATE;

/// Mono waveform at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    /// Builds a 16 kHz clip, rejecting other rates and non-finite samples.
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz != SAMPLE_RATE {
            return Err(Error::Rate {
                found: sample_rate_hz,
            });
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NaN {
                op: format!("audio sample {i}"),
            });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn from_samples(samples: Vec<f32>) -> Self {
        Self {
            samples,
            sample_rate_hz: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        libm_sqrt(self.energy() / self.samples.len() as f64)
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

#[inline]
fn libm_sqrt(v: f64) -> f64 {
    num_traits::Float::sqrt(v)
}
