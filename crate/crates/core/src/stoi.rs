//! Short-time objective intelligibility.
//!
//! Both signals are decimated to 10 kHz, frames whose clean-signal energy is
//! more than 40 dB below the loudest frame are dropped, and the remaining
//! signals are analysed in 15 third-octave bands. Each 30-frame band envelope
//! of the estimate is energy-normalized to the clean one, clipped to a −15 dB
//! signal-to-distortion bound, and correlated with the clean envelope.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math when built without std
use num_traits::Float;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::fft::Fft;
use crate::resample::Resampler;

pub const STOI_RATE: usize = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Envelope segment length in frames (384 ms).
pub const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Hann window of length `n` without its zero end points.
fn stoi_window(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * core::f64::consts::PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

/// Bin ranges `[lo, hi)` of the third-octave bands on the `NFFT` grid.
fn band_bins() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins)
        .map(|k| k as f64 * STOI_RATE as f64 / NFFT as f64)
        .collect();
    let nearest = |hz: f64| {
        let mut best = 0;
        for (k, &f) in freqs.iter().enumerate() {
            if (f - hz).abs() < (freqs[best] - hz).abs() {
                best = k;
            }
        }
        best
    };
    (0..BANDS)
        .map(|j| {
            let cf = MIN_FREQ * 2f64.powf(j as f64 / 3.0);
            let lo = cf * 2f64.powf(-1.0 / 6.0);
            let hi = cf * 2f64.powf(1.0 / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

fn frame_count(len: usize) -> usize {
    if len < FRAME {
        0
    } else {
        1 + (len - FRAME) / HOP
    }
}

/// Drops frames whose clean energy is more than 40 dB under the peak frame
/// and overlap-adds the kept frames of both signals.
fn remove_silent_frames(x: &[f64], y: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = frame_count(x.len());
    let energy: Vec<f64> = (0..n)
        .map(|t| {
            let s: f64 = (0..FRAME).map(|i| (w[i] * x[t * HOP + i]).powi(2)).sum();
            20.0 * (s.sqrt() + EPS).log10()
        })
        .collect();
    let peak = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..n)
        .filter(|&t| energy[t] > peak - DYN_RANGE_DB)
        .collect();
    let out_len = if keep.is_empty() {
        0
    } else {
        (keep.len() - 1) * HOP + FRAME
    };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (j, &t) in keep.iter().enumerate() {
        for i in 0..FRAME {
            xs[j * HOP + i] += w[i] * x[t * HOP + i];
            ys[j * HOP + i] += w[i] * y[t * HOP + i];
        }
    }
    (xs, ys)
}

/// `bands × frames` third-octave envelopes.
fn band_envelopes(
    x: &[f64],
    w: &[f64],
    fft: &Fft<f64>,
    bands: &[(usize, usize)],
) -> (usize, Vec<f64>) {
    let n = frame_count(x.len());
    let mut env = vec![0.0; BANDS * n];
    let mut frame = vec![0.0; NFFT];
    let mut re = vec![0.0; NFFT / 2 + 1];
    let mut im = vec![0.0; NFFT / 2 + 1];
    for t in 0..n {
        frame.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..FRAME {
            frame[i] = w[i] * x[t * HOP + i];
        }
        fft.rfft(&frame, &mut re, &mut im);
        for (j, &(lo, hi)) in bands.iter().enumerate() {
            let p: f64 = (lo..hi).map(|k| re[k] * re[k] + im[k] * im[k]).sum();
            env[j * n + t] = p.sqrt();
        }
    }
    (n, env)
}

fn decimate(clip: &AudioClip, r: &Resampler) -> Vec<f64> {
    let x: Vec<f64> = clip.samples.iter().map(|&v| v as f64).collect();
    r.process(&x)
}

/// STOI of `est` against the clean reference `reference`.
pub fn stoi(reference: &AudioClip, est: &AudioClip) -> Result<f64> {
    if reference.len() != est.len() {
        return Err(Error::Shape(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            est.len()
        )));
    }
    if reference.sample_rate_hz != est.sample_rate_hz {
        return Err(Error::Rate {
            found: est.sample_rate_hz,
        });
    }
    let r = Resampler::new(reference.sample_rate_hz as usize, STOI_RATE);
    let x = decimate(reference, &r);
    let y = decimate(est, &r);
    let w = stoi_window(FRAME);
    let (x, y) = remove_silent_frames(&x, &y, &w);
    let fft = Fft::new(NFFT);
    let bands = band_bins();
    let (n, xe) = band_envelopes(&x, &w, &fft, &bands);
    let (_, ye) = band_envelopes(&y, &w, &fft, &bands);
    if n < SEGMENT {
        return Err(Error::Length(format!(
            "{n} active frames after silence removal, at least {SEGMENT} needed"
        )));
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let segments = n - SEGMENT + 1;
    let mut total = 0.0;
    let mut xs = [0.0; SEGMENT];
    let mut ys = [0.0; SEGMENT];
    for m in 0..segments {
        for j in 0..BANDS {
            xs.copy_from_slice(&xe[j * n + m..j * n + m + SEGMENT]);
            ys.copy_from_slice(&ye[j * n + m..j * n + m + SEGMENT]);
            let nx = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let a = nx / (ny + EPS);
            for (yv, &xv) in ys.iter_mut().zip(&xs) {
                *yv = (*yv * a).min(xv * clip);
            }
            total += correlation(&xs, &ys);
        }
    }
    Ok(total / (BANDS * segments) as f64)
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / ((sxx.sqrt() + EPS) * (syy.sqrt() + EPS))
}
