//! Seeded synthetic material: speech-like voiced utterances and noises.
//!
//! The utterances are sequences of voiced syllables with a gliding
//! fundamental, harmonics shaped by a formant envelope, short unvoiced
//! bursts and pauses. They have the comb-like spectral structure the
//! harmonic-attention block is built to find.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math when built without std
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::SAMPLE_RATE;

const FS: f64 = SAMPLE_RATE as f64;
const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

/// Vowel formant triples (Hz).
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
];

fn formant_gain(hz: f64, formants: &[f64; 3]) -> f64 {
    let bw = [90.0, 110.0, 170.0];
    let mut g = 0.0;
    for (f, b) in formants.iter().zip(bw) {
        g += 1.0 / (1.0 + ((hz - f) / b).powi(2));
    }
    // spectral tilt
    g / (1.0 + hz / 1000.0)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (TWO_PI * u2).cos()
}

/// A speech-like utterance of `len` samples with peak near 0.5.
pub fn speech_like(seed: u64, len: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eec_5eed);
    let mut out = vec![0.0f64; len];
    let base_f0 = rng.random_range(95.0..230.0);
    let mut pos = rng.random_range(0..(len / 20).max(1));
    while pos < len {
        let dur = rng.random_range((0.12 * FS) as usize..(0.35 * FS) as usize);
        let end = (pos + dur).min(len);
        let f_start = base_f0 * rng.random_range(0.85..1.2);
        let f_end = f_start * rng.random_range(0.8..1.2);
        let v0 = VOWELS[rng.random_range(0..VOWELS.len())];
        let v1 = VOWELS[rng.random_range(0..VOWELS.len())];
        let amp = rng.random_range(0.4..1.0);
        let n = end - pos;
        let mut phase = 0.0;
        for i in 0..n {
            let u = i as f64 / n.max(1) as f64;
            let f0 = f_start + (f_end - f_start) * u;
            phase += TWO_PI * f0 / FS;
            let env = (core::f64::consts::PI * u).sin().powf(0.6);
            let formants = [
                v0[0] + (v1[0] - v0[0]) * u,
                v0[1] + (v1[1] - v0[1]) * u,
                v0[2] + (v1[2] - v0[2]) * u,
            ];
            let mut s = 0.0;
            let mut k = 1;
            while (k as f64) * f0 < 4000.0 {
                let hz = k as f64 * f0;
                s += formant_gain(hz, &formants) * (k as f64 * phase).sin();
                k += 1;
            }
            out[pos + i] += amp * env * s;
        }
        pos = end;
        // optional fricative burst
        if rng.random_bool(0.4) && pos < len {
            let blen = rng.random_range((0.03 * FS) as usize..(0.08 * FS) as usize);
            let bend = (pos + blen).min(len);
            let mut prev = 0.0;
            for v in out[pos..bend].iter_mut() {
                let w = gaussian(&mut rng);
                // first difference tilts the burst towards high frequencies
                *v += 0.08 * (w - prev);
                prev = w;
            }
            pos = bend;
        }
        pos += rng.random_range((0.03 * FS) as usize..(0.2 * FS) as usize);
    }
    normalize_peak(&mut out, 0.5);
    // recording floor about 64 dB under the peak, so pauses are not digital silence
    for v in out.iter_mut() {
        *v += 3e-4 * gaussian(&mut rng);
    }
    out.into_iter().map(|v| v as f32).collect()
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    /// Roughly −3 dB/octave.
    Pink,
    /// Low-passed noise with a slow amplitude modulation.
    Rumble,
    /// A sum of unrelated speech-like voices.
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::Rumble,
        NoiseKind::Babble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Rumble => "rumble",
            NoiseKind::Babble => "babble",
        }
    }
}

/// Seeded noise of `len` samples with peak near 0.5.
pub fn noise(kind: NoiseKind, seed: u64, len: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0015_e000);
    let mut out: Vec<f64> = match kind {
        NoiseKind::White => (0..len).map(|_| gaussian(&mut rng)).collect(),
        NoiseKind::Pink => {
            // Paul Kellet's economy filter
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            (0..len)
                .map(|_| {
                    let w = gaussian(&mut rng);
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    b0 + b1 + b2 + w * 0.1848
                })
                .collect()
        }
        NoiseKind::Rumble => {
            let rate = rng.random_range(0.5..3.0);
            let mut y = 0.0;
            (0..len)
                .map(|i| {
                    y = 0.97 * y + 0.03 * gaussian(&mut rng);
                    y * (1.0 + 0.6 * (TWO_PI * rate * i as f64 / FS).sin())
                })
                .collect()
        }
        NoiseKind::Babble => {
            let mut acc = vec![0.0; len];
            for v in 0..4 {
                let s = speech_like(seed.wrapping_mul(31).wrapping_add(v + 1), len);
                acc.iter_mut().zip(&s).for_each(|(a, &b)| *a += b as f64);
            }
            acc
        }
    };
    normalize_peak(&mut out, 0.5);
    out.into_iter().map(|v| v as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = speech_like(3, 16000);
        assert_eq!(a, speech_like(3, 16000));
        assert_ne!(a, speech_like(4, 16000));
        assert!(a.iter().all(|v| v.abs() <= 0.51));
        for k in NoiseKind::ALL {
            let n = noise(k, 9, 8000);
            assert_eq!(n.len(), 8000);
            assert!(n.iter().any(|&v| v != 0.0), "{}", k.name());
        }
    }
}
