//! The assembled enhancer: pre-enhancement, harmonic-attention flow and
//! refinement chain, with the waveform-level training objective.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioClip;
use crate::compute::{Bindings, Graph, ParamStore, Tensor, Var};
use crate::config::RuiConfig;
use crate::error::{Error, Result};
use crate::mri::{self, GraphLedger, RefineContext, RefinementLedger};
use crate::objective::{perceptual_loss_graph, si_snr_loss, BarkBands, LossBreakdown};
use crate::real::Real;
use crate::spectral::{stft, ComplexSpectrum, StftConfig};
use crate::uie::{self, CombPitchMatrix};
use crate::{pem, SAMPLE_RATE};

/// Zero padding placed around a signal before analysis so that every
/// original sample lies where the synthesis normalizer is well conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub front: usize,
    pub len: usize,
    pub padded_len: usize,
}

impl Padding {
    pub fn new(cfg: &StftConfig, len: usize) -> Self {
        let front = cfg.window_len;
        let mut padded_len = front + len + cfg.window_len;
        while cfg.interior(padded_len).end < front + len {
            padded_len += 1;
        }
        Self {
            front,
            len,
            padded_len,
        }
    }

    /// Frames (out of `frames`) that cover at least one original sample.
    pub fn signal_frames(&self, cfg: &StftConfig, frames: usize) -> core::ops::Range<usize> {
        let start = if self.front >= cfg.window_len {
            (self.front - cfg.window_len) / cfg.hop + 1
        } else {
            0
        };
        let end = (self.front + self.len).div_ceil(cfg.hop).min(frames);
        start.min(end)..end
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        let mut out = alloc::vec![0.0; self.padded_len];
        out[self.front..self.front + x.len()].copy_from_slice(x);
        out
    }
}

/// Spectra of one utterance as the model sees it.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub padding: Padding,
    pub spectrum: ComplexSpectrum,
}

/// Vars of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub x: Var,
    pub a: Option<Var>,
    pub ledger: GraphLedger,
}

/// Result of enhancing one clip.
#[derive(Debug, Clone)]
pub struct Enhanced {
    pub noisy: ComplexSpectrum,
    pub ledger: RefinementLedger,
    pub audio: AudioClip,
}

#[derive(Debug, Clone)]
pub struct RuiModel {
    pub config: RuiConfig,
    pub stft: StftConfig,
    pub comb: CombPitchMatrix,
    pub bands: BarkBands,
    pub params: ParamStore<f32>,
}

impl RuiModel {
    /// Fresh parameters. Each module draws from its own stream, so models that
    /// differ only in refinement count share the same pre-enhancement start.
    pub fn new(config: RuiConfig, seed: u64) -> Result<Self> {
        let mut model = Self::empty(config)?;
        let bins = model.stft.bins();
        let cfg = &model.config;
        let mut params = ParamStore::new();
        pem::init_params(
            &mut params,
            &cfg.pem,
            bins,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )?;
        if cfg.mri.n_refinements > 0 {
            uie::init_params(
                &mut params,
                cfg.mri.channels,
                &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)),
            )?;
            mri::init_params(
                &mut params,
                cfg.mri.n_refinements,
                cfg.mri.channels,
                bins,
                &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(2)),
            )?;
        }
        model.params = params;
        Ok(model)
    }

    /// Model around existing parameters; names and shapes must match what
    /// the configuration implies.
    pub fn from_params(config: RuiConfig, params: ParamStore<f32>) -> Result<Self> {
        let reference = Self::new(config, 0)?;
        if reference.params.shapes() != params.shapes() {
            let want: Vec<_> = reference.params.shapes();
            let got: Vec<_> = params.shapes();
            let missing = want
                .iter()
                .find(|w| !got.contains(w))
                .or_else(|| got.iter().find(|g| !want.contains(g)));
            return Err(Error::Config(format!(
                "parameters do not fit the configuration (first mismatch: {missing:?})"
            )));
        }
        Ok(Self {
            params,
            ..reference
        })
    }

    fn empty(config: RuiConfig) -> Result<Self> {
        config.validate()?;
        let stft = config.stft()?;
        let bins = stft.bins();
        let comb = config.uie.comb(bins, SAMPLE_RATE as f64, stft.fft_size)?;
        let bands = BarkBands::new(config.loss.bands, bins, SAMPLE_RATE as f64)?;
        Ok(Self {
            config,
            stft,
            comb,
            bands,
            params: ParamStore::new(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn analyze(&self, clip: &AudioClip) -> Result<Analysis> {
        let padding = Padding::new(&self.stft, clip.len());
        let padded = AudioClip::new(padding.apply(&clip.samples), clip.sample_rate_hz)?;
        Ok(Analysis {
            padding,
            spectrum: stft(&padded, &self.stft)?,
        })
    }

    /// Forward pass on any graph; `b` must bind this model's parameters.
    pub fn forward<R: Real>(&self, g: &mut Graph<R>, b: &Bindings, x: Var) -> Result<ForwardVars> {
        let p = pem::forward(g, b, &self.config.pem, x)?;
        let n = self.config.mri.n_refinements;
        if n == 0 {
            let ledger = mri::dual_path(g, p, 0, |_, _, _| {
                Err(Error::Config("no refinements".into()))
            })?;
            return Ok(ForwardVars { x, a: None, ledger });
        }
        let comb_t = g.constant(self.comb.transposed_tensor())?;
        let comb = g.constant(self.comb.to_tensor())?;
        let tau = self.config.uie.temperature;
        let a = uie::harmonic_attention(g, b, x, comb_t, comb, tau)?;
        let ctx = RefineContext {
            comb_t,
            comb,
            temperature: tau,
        };
        let ledger = mri::refine(g, b, p, Some(a), n, &ctx)?;
        Ok(ForwardVars {
            x,
            a: Some(a),
            ledger,
        })
    }

    fn spectrum_var<R: Real>(g: &mut Graph<R>, spec: &ComplexSpectrum) -> Result<Var> {
        let data = spec.data.iter().map(|&v| R::from_f64(v as f64)).collect();
        g.constant(Tensor::new(&[spec.frames, 2 * spec.bins], data)?)
    }

    /// Enhanced spectrum ledger for an analysed input spectrum.
    pub fn enhance_spectrum(&self, spec: &ComplexSpectrum) -> Result<RefinementLedger> {
        let mut g = Graph::<f32>::new();
        let b = self.params.bind(&mut g)?;
        let x = Self::spectrum_var(&mut g, spec)?;
        let fv = self.forward(&mut g, &b, x)?;
        RefinementLedger::from_graph(&g, &fv.ledger)
    }

    /// Full pipeline on a waveform; the output has the input's length.
    pub fn enhance(&self, clip: &AudioClip) -> Result<Enhanced> {
        let an = self.analyze(clip)?;
        let ledger = self.enhance_spectrum(&an.spectrum)?;
        let audio = self.synthesize(&ledger.output, &an.padding)?;
        Ok(Enhanced {
            noisy: an.spectrum,
            ledger,
            audio,
        })
    }

    /// Waveform of a model-domain spectrum with the analysis padding removed.
    pub fn synthesize(&self, spec: &ComplexSpectrum, padding: &Padding) -> Result<AudioClip> {
        let full = crate::spectral::istft(spec, &self.stft, padding.padded_len)?;
        AudioClip::new(
            full.samples[padding.front..padding.front + padding.len].to_vec(),
            SAMPLE_RATE,
        )
    }

    /// Builds the training objective for one (noisy, clean) pair on `g`.
    /// Returns the total loss var and its two terms.
    pub fn loss<R: Real>(
        &self,
        g: &mut Graph<R>,
        b: &Bindings,
        noisy: &AudioClip,
        clean: &AudioClip,
    ) -> Result<(Var, Var, Var)> {
        if noisy.len() != clean.len() {
            return Err(Error::Shape(format!(
                "noisy has {} samples, clean {}",
                noisy.len(),
                clean.len()
            )));
        }
        let an = self.analyze(noisy)?;
        let clean_an = self.analyze(clean)?;
        let x = Self::spectrum_var(g, &an.spectrum)?;
        let fv = self.forward(g, b, x)?;
        let est = fv.ledger.output;
        let pad = an.padding;
        let wave = g.istft(est, &self.stft, pad.padded_len)?;
        let wave = g.slice(wave, 0, pad.front, pad.len)?;
        let si = si_snr_loss(g, wave, &clean.samples)?;
        // the perceptual term only sees frames that overlap the real signal
        let frames = pad.signal_frames(&self.stft, an.spectrum.frames);
        let est_frames = g.slice(est, 0, frames.start, frames.len())?;
        let f2 = 2 * clean_an.spectrum.bins;
        let clean_frames = ComplexSpectrum::from_data(
            frames.len(),
            clean_an.spectrum.bins,
            clean_an.spectrum.data[frames.start * f2..frames.end * f2].to_vec(),
        )?;
        let perc = perceptual_loss_graph(g, &self.bands, est_frames, &clean_frames)?;
        let (w1, w2) = (self.config.loss.w_sisnr, self.config.loss.w_perc);
        let a = g.scale(si, R::from_f64(w1))?;
        let p = g.scale(perc, R::from_f64(w2))?;
        let total = g.add(a, p)?;
        Ok((total, si, perc))
    }

    /// Loss value without gradients.
    pub fn evaluate_loss(&self, noisy: &AudioClip, clean: &AudioClip) -> Result<LossBreakdown> {
        let mut g = Graph::<f32>::new();
        let b = self.params.bind(&mut g)?;
        let (_, si, perc) = self.loss(&mut g, &b, noisy, clean)?;
        let cfg = &self.config.loss;
        Ok(LossBreakdown::new(
            g.value(si).item() as f64,
            g.value(perc).item() as f64,
            (cfg.w_sisnr, cfg.w_perc),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_keeps_signal_interior() {
        for hop in [128, 384] {
            let cfg = StftConfig::new(512, hop).unwrap();
            for len in [512, 1000, 16000, 64000] {
                let p = Padding::new(&cfg, len);
                let r = cfg.interior(p.padded_len);
                assert!(
                    r.start <= p.front && r.end >= p.front + len,
                    "hop {hop} len {len}"
                );
                assert!(p.padded_len < p.front + len + 2 * 512 + hop);
                let frames = cfg.frames_for(p.padded_len);
                let fr = p.signal_frames(&cfg, frames);
                for t in 0..frames {
                    let covers = t * hop + 512 > p.front && t * hop < p.front + len;
                    assert_eq!(fr.contains(&t), covers, "hop {hop} len {len} frame {t}");
                }
            }
        }
    }
}
