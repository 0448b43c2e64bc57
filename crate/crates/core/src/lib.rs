//! Refinement-based monaural speech enhancement.
//!
//! A pre-enhancement module estimates a preliminary complex spectrum, a
//! harmonic-attention extractor highlights comb-like pitch structure in the
//! noisy input, and a chain of refinement blocks corrects the preliminary
//! estimate through a subtractive input path and an additive output path.
//!
//! This crate is `no_std` + `alloc`. Everything that touches files, threads
//! or the command line lives in the companion `rui` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod audio;
pub mod compute;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fft;
pub mod gradsuite;
pub mod model;
pub mod mri;
pub mod objective;
pub mod pem;
pub mod real;
pub mod resample;
pub mod spectral;
pub mod stoi;
pub mod synth;
pub mod trainer;
pub mod uie;

pub use audio::AudioClip;
pub use error::{Error, Result};
pub use real::Real;
pub use spectral::{ComplexSpectrum, StftConfig};

/// The only sample rate accepted anywhere in the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;
