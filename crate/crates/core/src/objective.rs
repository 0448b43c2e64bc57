//! Training objective (scale-invariant SNR plus a bark-band log-spectral
//! distortion) and the SI-SDR metric.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math when built without std
use num_traits::Float;

use crate::audio::AudioClip;
use crate::compute::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::spectral::ComplexSpectrum;

/// SI-SDR ceiling in dB.
pub const SI_SDR_CAP: f64 = 60.0;
const METRIC_EPS: f64 = 1e-12;
/// Regularizer in the differentiable SI-SNR.
pub const LOSS_EPS: f64 = 1e-8;
/// Floor added to band powers before the logarithm.
pub const BAND_EPS: f64 = 1e-10;

fn check_pair(reference: &[f32], estimate: &[f32]) -> Result<()> {
    if reference.len() != estimate.len() || reference.is_empty() {
        return Err(Error::Shape(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    Ok(())
}

/// Scale-invariant signal-to-distortion ratio in dB, capped at +60 dB.
pub fn si_sdr_samples(reference: &[f32], estimate: &[f32]) -> Result<f64> {
    check_pair(reference, estimate)?;
    let rr: f64 = reference.iter().map(|&r| (r as f64).powi(2)).sum();
    if rr <= 0.0 {
        return Err(Error::Reference("reference signal has zero energy".into()));
    }
    let dot: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(&r, &e)| r as f64 * e as f64)
        .sum();
    let alpha = dot / rr;
    let (mut tt, mut ee) = (0.0, 0.0);
    for (&r, &e) in reference.iter().zip(estimate) {
        let t = alpha * r as f64;
        let d = e as f64 - t;
        tt += t * t;
        ee += d * d;
    }
    let v = 10.0 * (tt / (ee + METRIC_EPS)).log10();
    Ok(v.min(SI_SDR_CAP))
}

pub fn si_sdr(reference: &AudioClip, estimate: &AudioClip) -> Result<f64> {
    si_sdr_samples(&reference.samples, &estimate.samples)
}

/// Negative SI-SNR of `est` (a `[len]` node) against a fixed reference, as a
/// differentiable scalar. Same formula as the metric with `ε = 1e-8` and no cap.
pub fn si_snr_loss<R: Real>(g: &mut Graph<R>, est: Var, reference: &[f32]) -> Result<Var> {
    if g.shape(est) != [reference.len()] || reference.is_empty() {
        return Err(Error::Shape(format!(
            "estimate {:?} vs reference [{}]",
            g.shape(est),
            reference.len()
        )));
    }
    let rr: f64 = reference.iter().map(|&r| (r as f64).powi(2)).sum();
    if rr <= 0.0 {
        return Err(Error::Reference("reference signal has zero energy".into()));
    }
    let n = reference.len();
    let rt = Tensor::new(
        &[n],
        reference.iter().map(|&r| R::from_f64(r as f64)).collect(),
    )?;
    let r = g.constant(rt.clone())?;
    let rcol = g.constant(rt.reshaped(&[n, 1])?)?;
    let e2 = g.reshape(est, &[1, n])?;
    let dot = g.matmul(e2, rcol)?;
    let alpha = g.scale(dot, R::from_f64(1.0 / rr))?;
    let alpha = g.reshape(alpha, &[1])?;
    let alpha = g.broadcast_to(alpha, &[n])?;
    let target = g.mul(alpha, r)?;
    let err = g.sub(est, target)?;
    let t2 = g.square(target)?;
    let tt = g.sum(t2)?;
    let d2 = g.square(err)?;
    let ee = g.sum(d2)?;
    let ee = g.add_scalar(ee, R::from_f64(LOSS_EPS))?;
    let ratio = g.div(tt, ee)?;
    let ln = g.log(ratio)?;
    // −10·log10(x) = −(10 / ln 10)·ln(x)
    g.scale(ln, R::from_f64(-10.0 / core::f64::consts::LN_10))
}

fn hz_to_bark(f: f64) -> f64 {
    13.0 * (0.00076 * f).atan() + 3.5 * (f / 7500.0).powi(2).atan()
}

/// Triangular filters equally spaced on the Bark scale between 0 Hz and
/// Nyquist, stored `bands × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarkBands {
    pub bands: usize,
    pub bins: usize,
    pub weights: Vec<f64>,
}

impl BarkBands {
    pub fn new(bands: usize, bins: usize, fs: f64) -> Result<Self> {
        if bands == 0 || bins < 2 {
            return Err(Error::Config(
                "bark bands need at least one band and two bins".into(),
            ));
        }
        let nyq = fs / 2.0;
        let bin_hz = nyq / (bins - 1) as f64;
        let top = hz_to_bark(nyq);
        let edges: Vec<f64> = (0..bands + 2)
            .map(|i| top * i as f64 / (bands + 1) as f64)
            .collect();
        let barks: Vec<f64> = (0..bins).map(|k| hz_to_bark(k as f64 * bin_hz)).collect();
        let mut weights = vec![0.0; bands * bins];
        for b in 0..bands {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let row = &mut weights[b * bins..(b + 1) * bins];
            for (k, &z) in barks.iter().enumerate() {
                row[k] = if z > lo && z <= mid {
                    (z - lo) / (mid - lo)
                } else if z > mid && z < hi {
                    (hi - z) / (hi - mid)
                } else {
                    0.0
                };
            }
            if row.iter().all(|&w| w == 0.0) {
                // narrower than a bin: take the nearest one
                let k = barks
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (a.1 - mid).abs().total_cmp(&(b.1 - mid).abs()))
                    .map(|(k, _)| k)
                    .unwrap_or(0);
                row[k] = 1.0;
            }
        }
        Ok(Self {
            bands,
            bins,
            weights,
        })
    }

    /// `bins × bands` transpose for right-multiplying a power spectrogram.
    pub fn transposed_tensor<R: Real>(&self) -> Tensor<R> {
        let mut d = vec![R::zero(); self.bands * self.bins];
        for b in 0..self.bands {
            for k in 0..self.bins {
                d[k * self.bands + b] = R::from_f64(self.weights[b * self.bins + k]);
            }
        }
        Tensor::new(&[self.bins, self.bands], d).expect("band shape")
    }

    /// `frames × bands` band powers of a spectrum.
    pub fn band_power(&self, spec: &ComplexSpectrum) -> Vec<f64> {
        let mut out = vec![0.0; spec.frames * self.bands];
        for t in 0..spec.frames {
            for b in 0..self.bands {
                let row = &self.weights[b * self.bins..(b + 1) * self.bins];
                out[t * self.bands + b] = row
                    .iter()
                    .enumerate()
                    .map(|(k, w)| {
                        let (r, i) = (spec.re(t, k) as f64, spec.im(t, k) as f64);
                        w * (r * r + i * i)
                    })
                    .sum();
            }
        }
        out
    }
}

/// Squared log10 distance between two band powers.
pub fn band_distortion(ref_power: f64, est_power: f64) -> f64 {
    ((est_power + BAND_EPS).log10() - (ref_power + BAND_EPS).log10()).powi(2)
}

/// Mean bark-band log-power distortion between two spectra.
pub fn perceptual_loss(
    bands: &BarkBands,
    reference: &ComplexSpectrum,
    estimate: &ComplexSpectrum,
) -> Result<f64> {
    if reference.frames != estimate.frames
        || reference.bins != estimate.bins
        || reference.bins != bands.bins
    {
        return Err(Error::Shape(format!(
            "spectra {}×{} and {}×{} with {}-bin bands",
            reference.frames, reference.bins, estimate.frames, estimate.bins, bands.bins
        )));
    }
    let (br, be) = (bands.band_power(reference), bands.band_power(estimate));
    let n = br.len().max(1);
    Ok(br
        .iter()
        .zip(&be)
        .map(|(&r, &e)| band_distortion(r, e))
        .sum::<f64>()
        / n as f64)
}

/// Graph version of [`perceptual_loss`] for a `T × 2F` estimate node.
pub fn perceptual_loss_graph<R: Real>(
    g: &mut Graph<R>,
    bands: &BarkBands,
    est: Var,
    reference: &ComplexSpectrum,
) -> Result<Var> {
    let s = g.shape(est).to_vec();
    if s != [reference.frames, 2 * reference.bins] || reference.bins != bands.bins {
        return Err(Error::Shape(format!(
            "estimate {s:?} vs reference {}×{}",
            reference.frames,
            2 * reference.bins
        )));
    }
    let f = reference.bins;
    let ref_log: Vec<R> = bands
        .band_power(reference)
        .into_iter()
        .map(|p| R::from_f64((p + BAND_EPS).log10()))
        .collect();
    let ref_log = g.constant(Tensor::new(&[reference.frames, bands.bands], ref_log)?)?;
    let wt = g.constant(bands.transposed_tensor())?;
    let re = g.slice(est, 1, 0, f)?;
    let im = g.slice(est, 1, f, f)?;
    let re2 = g.square(re)?;
    let im2 = g.square(im)?;
    let pow = g.add(re2, im2)?;
    let bp = g.matmul(pow, wt)?;
    let bp = g.add_scalar(bp, R::from_f64(BAND_EPS))?;
    let ln = g.log(bp)?;
    let lg = g.scale(ln, R::from_f64(1.0 / core::f64::consts::LN_10))?;
    let d = g.sub(lg, ref_log)?;
    let d2 = g.square(d)?;
    g.mean(d2)
}

/// Weighted auditory-constraint loss and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub si_snr_term: f64,
    pub perceptual_term: f64,
    pub total: f64,
    pub weights: (f64, f64),
}

impl LossBreakdown {
    pub fn new(si_snr_term: f64, perceptual_term: f64, weights: (f64, f64)) -> Self {
        Self {
            si_snr_term,
            perceptual_term,
            total: weights.0 * si_snr_term + weights.1 * perceptual_term,
            weights,
        }
    }
}

/// One row of an evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceMetrics {
    pub utt_id: String,
    pub snr_db: f64,
    pub si_sdr_noisy: f64,
    pub si_sdr_enh: f64,
    pub stoi_noisy: f64,
    pub stoi_enh: f64,
}

/// SI-SDR and STOI of the noisy input and of the enhanced output against `clean`.
pub fn score_utterance(
    utt_id: &str,
    snr_db: f64,
    clean: &AudioClip,
    noisy: &AudioClip,
    enhanced: &AudioClip,
) -> Result<UtteranceMetrics> {
    Ok(UtteranceMetrics {
        utt_id: String::from(utt_id),
        snr_db,
        si_sdr_noisy: si_sdr(clean, noisy)?,
        si_sdr_enh: si_sdr(clean, enhanced)?,
        stoi_noisy: crate::stoi::stoi(clean, noisy)?,
        stoi_enh: crate::stoi::stoi(clean, enhanced)?,
    })
}

/// Column means, labelled `mean`.
pub fn mean_metrics(rows: &[UtteranceMetrics]) -> Option<UtteranceMetrics> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let avg = |f: fn(&UtteranceMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Some(UtteranceMetrics {
        utt_id: String::from("mean"),
        snr_db: avg(|r| r.snr_db),
        si_sdr_noisy: avg(|r| r.si_sdr_noisy),
        si_sdr_enh: avg(|r| r.si_sdr_enh),
        stoi_noisy: avg(|r| r.stoi_noisy),
        stoi_enh: avg(|r| r.stoi_enh),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_copy_hits_cap() {
        let r = [0.1f32, -0.4, 0.3, 0.25];
        let e: Vec<f32> = r.iter().map(|v| v * 3.7).collect();
        assert_eq!(si_sdr_samples(&r, &e).unwrap(), 60.0);
    }

    #[test]
    fn hand_computed_zero_db() {
        // α = 0.5, target = [0.5, 0.5], e = [0.5, −0.5] → ‖t‖² = ‖e‖² = 0.5
        let v = si_sdr_samples(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        let exact = 10.0 * (0.5f64 / (0.5 + 1e-12)).log10();
        assert!((v - exact).abs() < 1e-12);
        assert!(v.abs() < 1e-9);
    }

    #[test]
    fn zero_reference_is_error() {
        assert!(matches!(
            si_sdr_samples(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Reference(_))
        ));
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        assert!(matches!(
            si_sdr_samples(&[1.0], &[1.0, 0.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn bark_bands_cover_every_band() {
        let b = BarkBands::new(24, 257, 16000.0).unwrap();
        for k in 0..24 {
            assert!(
                b.weights[k * 257..(k + 1) * 257].iter().any(|&w| w > 0.0),
                "band {k}"
            );
        }
    }

    #[test]
    fn tenfold_band_power_costs_one() {
        assert!((band_distortion(2.5, 25.0) - 1.0).abs() < 1e-9);
        assert_eq!(band_distortion(2.5, 2.5), 0.0);
    }

    #[test]
    fn breakdown_identity() {
        let l = LossBreakdown::new(-12.5, 0.75, (1.0, 0.2));
        assert_eq!(l.total, 1.0 * -12.5 + 0.2 * 0.75);
    }
}
