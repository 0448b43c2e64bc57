//! Rational-ratio resampling with a Hann-windowed sinc low-pass.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math when built without std
use num_traits::Float;

/// Zero crossings of the prototype filter on each side of its centre.
const ZERO_CROSSINGS: usize = 10;

/// Resampler by `up / down`, applied as a polyphase filter so only the kept
/// output samples are computed.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    half: usize,
    taps: Vec<f64>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Resampler {
    pub fn new(from_hz: usize, to_hz: usize) -> Self {
        assert!(from_hz > 0 && to_hz > 0, "sample rates must be positive");
        let d = gcd(from_hz, to_hz);
        let (up, down) = (to_hz / d, from_hz / d);
        let m = up.max(down);
        // cutoff at the lower Nyquist, in cycles per upsampled sample
        let fc = 0.5 / m as f64;
        let half = ZERO_CROSSINGS * m;
        let taps = (0..=2 * half)
            .map(|i| {
                let x = i as f64 - half as f64;
                let sinc = if x == 0.0 {
                    2.0 * fc
                } else {
                    (2.0 * core::f64::consts::PI * fc * x).sin() / (core::f64::consts::PI * x)
                };
                let w = 0.5 + 0.5 * (core::f64::consts::PI * x / (half as f64 + 1.0)).cos();
                up as f64 * sinc * w
            })
            .collect();
        Self {
            up,
            down,
            half,
            taps,
        }
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up).div_ceil(self.down)
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let n_out = self.output_len(x.len());
        let mut out = vec![0.0; n_out];
        let half = self.half as isize;
        let (up, down) = (self.up as isize, self.down as isize);
        for (m, o) in out.iter_mut().enumerate() {
            // upsampled position of this output sample
            let pos = m as isize * down;
            let lo = (pos - half).max(0);
            let hi = pos + half;
            let mut n = (lo + up - 1) / up;
            let mut acc = 0.0;
            while n * up <= hi && (n as usize) < x.len() {
                let k = (pos - n * up + half) as usize;
                acc += self.taps[k] * x[n as usize];
                n += 1;
            }
            *o = acc;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_reduces() {
        let r = Resampler::new(16000, 10000);
        assert_eq!((r.up, r.down), (5, 8));
        assert_eq!(r.output_len(16000), 10000);
    }

    #[test]
    fn passband_tone_survives() {
        let r = Resampler::new(16000, 10000);
        let f = 440.0;
        let x: Vec<f64> = (0..16000)
            .map(|n| (2.0 * core::f64::consts::PI * f * n as f64 / 16000.0).sin())
            .collect();
        let y = r.process(&x);
        let mut worst: f64 = 0.0;
        for (m, &v) in y.iter().enumerate().take(9000).skip(1000) {
            let want = (2.0 * core::f64::consts::PI * f * m as f64 / 10000.0).sin();
            worst = worst.max((v - want).abs());
        }
        assert!(worst < 1e-2, "{worst}");
    }

    #[test]
    fn stopband_tone_is_removed() {
        let r = Resampler::new(16000, 10000);
        let x: Vec<f64> = (0..16000)
            .map(|n| (2.0 * core::f64::consts::PI * 7000.0 * n as f64 / 16000.0).sin())
            .collect();
        let y = r.process(&x);
        let peak = y[1000..9000].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(peak < 0.02, "{peak}");
    }
}
