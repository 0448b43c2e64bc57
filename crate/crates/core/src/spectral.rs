//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Frames are left-aligned (no centre padding): frame `t` covers samples
//! `[t·hop, t·hop + window_len)`. Synthesis divides by the summed squared
//! window, so reconstruction is exact wherever that sum is bounded away from
//! zero even when the hop does not satisfy constant overlap-add.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::fft::Fft;
use crate::real::Real;

/// Normalizer values below this are treated as uncovered and produce zeros.
pub const NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: Vec<f64>,
}

impl Default for StftConfig {
    /// 32 ms Hann window at 16 kHz, 128 samples of overlap.
    fn default() -> Self {
        Self::new(512, 384).expect("default stft config is valid")
    }
}

impl StftConfig {
    pub fn new(window_len: usize, hop: usize) -> Result<Self> {
        if window_len != 512 {
            return Err(Error::Config(format!(
                "window_len must be 512, got {window_len}"
            )));
        }
        if hop == 0 || hop >= window_len {
            return Err(Error::Config(format!(
                "hop must be in (0, {window_len}), got {hop}"
            )));
        }
        Ok(Self {
            window_len,
            hop,
            fft_size: window_len,
            window: hann(window_len),
        })
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames for a signal of `len` samples (0 if shorter than a window).
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            1 + (len - self.window_len) / self.hop
        }
    }

    /// Sample range where every sample is covered by interior overlap:
    /// the first and last window lengths are excluded.
    pub fn interior(&self, len: usize) -> core::ops::Range<usize> {
        let t = self.frames_for(len);
        if t < 2 {
            return 0..0;
        }
        let end = (t - 1) * self.hop;
        self.window_len.min(end)..end
    }

    /// `Σ_t w²[n − t·hop]` for every output sample of a `frames`-frame signal.
    pub fn synthesis_norm(&self, frames: usize) -> Vec<f64> {
        let len = if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.window_len
        };
        let mut norm = vec![0.0; len];
        for t in 0..frames {
            for (n, w) in self.window.iter().enumerate() {
                norm[t * self.hop + n] += w * w;
            }
        }
        norm
    }
}

/// Periodic Hann window, `w[n] = 0.5 − 0.5·cos(2πn/N)`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * libm_cos(2.0 * core::f64::consts::PI * i as f64 / n as f64))
        .collect()
}

#[inline]
fn libm_cos(v: f64) -> f64 {
    num_traits::Float::cos(v)
}

/// `frames × bins` complex values stored row-major as `frames × 2·bins`
/// reals; each row holds the real parts followed by the imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f32>,
}

impl ComplexSpectrum {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self {
            frames,
            bins,
            data: vec![0.0; frames * 2 * bins],
        }
    }

    pub fn from_data(frames: usize, bins: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * 2 * bins {
            return Err(Error::Shape(format!(
                "spectrum data has {} values, expected {frames}×2×{bins}",
                data.len()
            )));
        }
        Ok(Self { frames, bins, data })
    }

    #[inline]
    pub fn re(&self, t: usize, f: usize) -> f32 {
        self.data[t * 2 * self.bins + f]
    }

    #[inline]
    pub fn im(&self, t: usize, f: usize) -> f32 {
        self.data[t * 2 * self.bins + self.bins + f]
    }

    pub fn set(&mut self, t: usize, f: usize, re: f32, im: f32) {
        let row = t * 2 * self.bins;
        self.data[row + f] = re;
        self.data[row + self.bins + f] = im;
    }

    pub fn magnitude(&self, t: usize, f: usize) -> f32 {
        let (r, i) = (self.re(t, f) as f64, self.im(t, f) as f64);
        num_traits::Float::sqrt(r * r + i * i) as f32
    }

    /// `frames × bins` magnitudes.
    pub fn magnitudes(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.frames * self.bins);
        for t in 0..self.frames {
            for f in 0..self.bins {
                out.push(self.magnitude(t, f));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }
}

/// Windowed one-sided analysis of a real signal, generic over precision.
/// Returns `frames × 2·bins` values in [re | im] row layout.
pub fn analyze<R: Real>(signal: &[R], cfg: &StftConfig, fft: &Fft<R>) -> Vec<R> {
    let frames = cfg.frames_for(signal.len());
    let bins = cfg.bins();
    let window: Vec<R> = cfg.window.iter().map(|&w| R::from_f64(w)).collect();
    let mut out = vec![R::zero(); frames * 2 * bins];
    let mut frame = vec![R::zero(); cfg.fft_size];
    let mut re = vec![R::zero(); bins];
    let mut im = vec![R::zero(); bins];
    for t in 0..frames {
        let start = t * cfg.hop;
        for n in 0..cfg.window_len {
            frame[n] = signal[start + n] * window[n];
        }
        fft.rfft(&frame, &mut re, &mut im);
        let row = &mut out[t * 2 * bins..(t + 1) * 2 * bins];
        row[..bins].copy_from_slice(&re);
        row[bins..].copy_from_slice(&im);
    }
    out
}

/// Weighted overlap-add synthesis of `frames × 2·bins` values into
/// `out_len` samples.
pub fn synthesize<R: Real>(
    spec: &[R],
    frames: usize,
    cfg: &StftConfig,
    fft: &Fft<R>,
    out_len: usize,
) -> Vec<R> {
    let bins = cfg.bins();
    let window: Vec<R> = cfg.window.iter().map(|&w| R::from_f64(w)).collect();
    let norm = cfg.synthesis_norm(frames);
    let mut acc = vec![R::zero(); norm.len()];
    let mut frame = vec![R::zero(); cfg.fft_size];
    for t in 0..frames {
        let row = &spec[t * 2 * bins..(t + 1) * 2 * bins];
        fft.irfft(&row[..bins], &row[bins..], &mut frame);
        let start = t * cfg.hop;
        for n in 0..cfg.window_len {
            acc[start + n] += window[n] * frame[n];
        }
    }
    let mut out = vec![R::zero(); out_len];
    for (n, o) in out.iter_mut().enumerate().take(acc.len()) {
        if norm[n] >= NORM_FLOOR {
            *o = acc[n] / R::from_f64(norm[n]);
        }
    }
    out
}

/// Adjoint of [`synthesize`]: maps a gradient on the output samples back to
/// a gradient on the `frames × 2·bins` spectrum values.
pub fn synthesize_adjoint<R: Real>(
    grad: &[R],
    frames: usize,
    cfg: &StftConfig,
    fft: &Fft<R>,
) -> Vec<R> {
    let bins = cfg.bins();
    let n_fft = cfg.fft_size;
    let window: Vec<R> = cfg.window.iter().map(|&w| R::from_f64(w)).collect();
    let norm = cfg.synthesis_norm(frames);
    let mut scaled = vec![R::zero(); norm.len()];
    for n in 0..norm.len().min(grad.len()) {
        if norm[n] >= NORM_FLOOR {
            scaled[n] = grad[n] / R::from_f64(norm[n]);
        }
    }
    let mut out = vec![R::zero(); frames * 2 * bins];
    let mut frame = vec![R::zero(); n_fft];
    let mut re = vec![R::zero(); bins];
    let mut im = vec![R::zero(); bins];
    let inv_n = R::one() / R::from_f64(n_fft as f64);
    let two = R::lit(2.0);
    for t in 0..frames {
        let start = t * cfg.hop;
        for n in 0..cfg.window_len {
            frame[n] = window[n] * scaled[start + n];
        }
        fft.rfft(&frame, &mut re, &mut im);
        let row = &mut out[t * 2 * bins..(t + 1) * 2 * bins];
        for k in 0..bins {
            let c = if k == 0 || k == bins - 1 {
                inv_n
            } else {
                two * inv_n
            };
            row[k] = c * re[k];
            // imaginary parts of DC and Nyquist do not reach the output
            row[bins + k] = if k == 0 || k == bins - 1 {
                R::zero()
            } else {
                c * im[k]
            };
        }
    }
    out
}

pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<ComplexSpectrum> {
    if clip.len() < cfg.window_len {
        return Err(Error::Length(format!(
            "clip has {} samples, shorter than one {}-sample window",
            clip.len(),
            cfg.window_len
        )));
    }
    let fft = Fft::<f64>::new(cfg.fft_size);
    let signal: Vec<f64> = clip.samples.iter().map(|&s| s as f64).collect();
    let data = analyze(&signal, cfg, &fft);
    let frames = cfg.frames_for(signal.len());
    Ok(ComplexSpectrum {
        frames,
        bins: cfg.bins(),
        data: data.into_iter().map(|v| v as f32).collect(),
    })
}

pub fn istft(spec: &ComplexSpectrum, cfg: &StftConfig, out_len: usize) -> Result<AudioClip> {
    if spec.bins != cfg.bins() || spec.data.len() != spec.frames * 2 * spec.bins {
        return Err(Error::Shape(format!(
            "spectrum {}×2×{} does not match a {}-point transform",
            spec.frames, spec.bins, cfg.fft_size
        )));
    }
    let fft = Fft::<f64>::new(cfg.fft_size);
    let data: Vec<f64> = spec.data.iter().map(|&v| v as f64).collect();
    let samples = synthesize(&data, spec.frames, cfg, &fft, out_len);
    Ok(AudioClip::from_samples(
        samples.into_iter().map(|v| v as f32).collect(),
    ))
}

/// Grayscale raster of a log-magnitude spectrogram: `bins` rows (highest
/// frequency first, so low frequencies sit at the bottom) by `frames`
/// columns. −80 dB and below map to 0, 0 dB and above to 255.
pub fn spectrogram_pixels(spec: &ComplexSpectrum) -> (usize, usize, Vec<u8>) {
    let (width, height) = (spec.frames, spec.bins);
    let mut pixels = vec![0u8; width * height];
    for t in 0..width {
        for f in 0..height {
            let mag = spec.magnitude(t, f) as f64;
            let db = 20.0 * num_traits::Float::log10(mag + 1e-10);
            let level = ((db + 80.0) / 80.0).clamp(0.0, 1.0);
            let row = height - 1 - f;
            pixels[row * width + t] = num_traits::Float::round(level * 255.0) as u8;
        }
    }
    (width, height, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::from_samples((0..len).map(|_| rng.random_range(-0.5f32..0.5)).collect())
    }

    #[test]
    fn hann_coefficients() {
        let w = hann(512);
        assert_eq!(w[0], 0.0);
        assert!((w[256] - 1.0).abs() < 1e-15);
        assert!((w.iter().sum::<f64>() - 256.0).abs() < 1e-9);
    }

    #[test]
    fn one_second_framing() {
        let cfg = StftConfig::default();
        let s = stft(&noise(16000, 1), &cfg).unwrap();
        assert_eq!((s.frames, s.bins), (41, 257));
        assert_eq!(s.data.len(), 41 * 514);
    }

    #[test]
    fn short_clip_is_length_error() {
        let cfg = StftConfig::default();
        assert!(matches!(stft(&noise(511, 1), &cfg), Err(Error::Length(_))));
    }

    #[test]
    fn constant_signal_concentrates_at_dc() {
        let cfg = StftConfig::default();
        let s = stft(&AudioClip::from_samples(vec![1.0; 4000]), &cfg).unwrap();
        for t in 0..s.frames {
            assert!((s.magnitude(t, 0) as f64 - 256.0).abs() < 1e-4);
            // a periodic Hann window leaks −N/4 into the first neighbour bin
            assert!((s.magnitude(t, 1) as f64 - 128.0).abs() < 1e-4);
            for f in 2..s.bins {
                assert!((s.magnitude(t, f) as f64) < 1e-9 * 256.0 + 1e-5, "bin {f}");
            }
        }
    }

    #[test]
    fn zero_spectrum_synthesizes_silence() {
        let cfg = StftConfig::default();
        let y = istft(&ComplexSpectrum::zeros(10, 257), &cfg, 4000).unwrap();
        assert!(y.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn istft_rejects_wrong_bins() {
        let cfg = StftConfig::default();
        assert!(matches!(
            istft(&ComplexSpectrum::zeros(3, 129), &cfg, 100),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn round_trip_interior() {
        for hop in [384, 128] {
            let cfg = StftConfig::new(512, hop).unwrap();
            let x = noise(16000, 7);
            let y = istft(&stft(&x, &cfg).unwrap(), &cfg, x.len()).unwrap();
            let r = cfg.interior(x.len());
            let (mut num, mut den) = (0.0f64, 0.0f64);
            for n in r {
                let d = (x.samples[n] - y.samples[n]) as f64;
                num += d * d;
                den += (x.samples[n] as f64).powi(2);
            }
            assert!(
                (num / den).sqrt() <= 1e-6,
                "hop {hop}: {}",
                (num / den).sqrt()
            );
        }
    }

    #[test]
    fn synthesis_adjoint_identity() {
        // <synth(s), g> == <s, adjoint(g)>
        let cfg = StftConfig::default();
        let fft = Fft::<f64>::new(512);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frames = 6;
        let len = (frames - 1) * cfg.hop + cfg.window_len;
        let mut s: Vec<f64> = (0..frames * 514)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        for t in 0..frames {
            s[t * 514 + 257] = 0.0;
            s[t * 514 + 513] = 0.0;
        }
        let g: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = synthesize(&s, frames, &cfg, &fft, len);
        let a = synthesize_adjoint(&g, frames, &cfg, &fft);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = s.iter().zip(&a).map(|(a, b)| a * b).sum();
        assert!(
            (lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0),
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn pixels_floor_and_ceiling() {
        let mut spec = ComplexSpectrum::zeros(41, 257);
        let (w, h, px) = spectrogram_pixels(&spec);
        assert_eq!((w, h), (41, 257));
        assert!(px.iter().all(|&p| p == 0));
        spec.set(3, 10, 1.0, 0.0);
        let (_, _, px) = spectrogram_pixels(&spec);
        assert_eq!(px.iter().filter(|&&p| p == 255).count(), 1);
        assert_eq!(px[(256 - 10) * 41 + 3], 255);
    }
}
