//! Flat `key = value` configuration shared by every pipeline stage.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PemKind {
    /// Recurrent magnitude mask; noisy phase is kept.
    Mask,
    /// Convolutional-recurrent complex spectral mapping.
    Crn,
}

impl PemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PemKind::Mask => "mask",
            PemKind::Crn => "crn",
        }
    }
}

impl FromStr for PemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask" => Ok(PemKind::Mask),
            "crn" => Ok(PemKind::Crn),
            other => Err(Error::Config(format!(
                "pem.kind must be mask or crn, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PemConfig {
    pub kind: PemKind,
    /// Encoder widths of the three frequency-downsampling convolutions.
    pub crn_channels: [usize; 3],
    pub crn_hidden: usize,
    pub mask_hidden: usize,
}

impl Default for PemConfig {
    fn default() -> Self {
        Self {
            kind: PemKind::Crn,
            crn_channels: [8, 16, 32],
            crn_hidden: 64,
            mask_hidden: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UieConfig {
    pub pitch_min: f64,
    pub pitch_max: f64,
    pub pitch_bins: usize,
    pub kmax: usize,
    pub temperature: f64,
}

impl Default for UieConfig {
    fn default() -> Self {
        Self {
            pitch_min: 50.0,
            pitch_max: 500.0,
            pitch_bins: 64,
            kmax: 16,
            temperature: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MriConfig {
    pub n_refinements: usize,
    pub channels: usize,
}

impl Default for MriConfig {
    fn default() -> Self {
        Self {
            n_refinements: 3,
            channels: 14,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub w_sisnr: f64,
    pub w_perc: f64,
    pub bands: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_sisnr: 1.0,
            w_perc: 0.2,
            bands: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub patience: usize,
    pub batch: usize,
    pub epochs_max: usize,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            decay: 0.75,
            patience: 3,
            batch: 4,
            epochs_max: 100,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub segment_samples: usize,
    pub snr_lo: f64,
    pub snr_hi: f64,
    pub test_snr_lo: f64,
    pub test_snr_hi: f64,
    pub target_seconds: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            segment_samples: 64_000,
            snr_lo: -5.0,
            snr_hi: 20.0,
            test_snr_lo: -5.0,
            test_snr_hi: 30.0,
            target_seconds: 3600.0,
        }
    }
}

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RuiConfig {
    pub stft_hop: usize,
    pub pem: PemConfig,
    pub uie: UieConfig,
    pub mri: MriConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RuiConfig {
    fn default() -> Self {
        Self {
            stft_hop: 384,
            pem: PemConfig::default(),
            uie: UieConfig::default(),
            mri: MriConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

/// Every accepted key, in the order they are reported.
pub const KEYS: &[&str] = &[
    "lr0",
    "decay",
    "patience",
    "batch",
    "epochs_max",
    "seed",
    "clip_norm",
    "loss.w_sisnr",
    "loss.w_perc",
    "loss.bands",
    "pem.kind",
    "pem.crn_channels",
    "pem.crn_hidden",
    "pem.mask_hidden",
    "mri.n_refinements",
    "mri.channels",
    "uie.pitch_min",
    "uie.pitch_max",
    "uie.pitch_bins",
    "uie.kmax",
    "uie.temperature",
    "stft.hop",
    "data.segment_samples",
    "data.snr_lo",
    "data.snr_hi",
    "data.test_snr_lo",
    "data.test_snr_hi",
    "data.target_seconds",
];

/// Largest accepted refinement count.
pub const MAX_REFINEMENTS: usize = 8;

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RuiConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr0" => self.train.lr0 = parse(key, value)?,
            "decay" => self.train.decay = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "batch" => self.train.batch = parse(key, value)?,
            "epochs_max" => self.train.epochs_max = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "clip_norm" => self.train.clip_norm = parse(key, value)?,
            "loss.w_sisnr" => self.loss.w_sisnr = parse(key, value)?,
            "loss.w_perc" => self.loss.w_perc = parse(key, value)?,
            "loss.bands" => self.loss.bands = parse(key, value)?,
            "pem.kind" => self.pem.kind = value.parse()?,
            "pem.crn_channels" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| parse(key, p.trim()))
                    .collect::<Result<_>>()?;
                self.pem.crn_channels = parts.try_into().map_err(|_| {
                    Error::Config(format!("{key}: expected three comma-separated widths"))
                })?;
            }
            "pem.crn_hidden" => self.pem.crn_hidden = parse(key, value)?,
            "pem.mask_hidden" => self.pem.mask_hidden = parse(key, value)?,
            "mri.n_refinements" => self.mri.n_refinements = parse(key, value)?,
            "mri.channels" => self.mri.channels = parse(key, value)?,
            "uie.pitch_min" => self.uie.pitch_min = parse(key, value)?,
            "uie.pitch_max" => self.uie.pitch_max = parse(key, value)?,
            "uie.pitch_bins" => self.uie.pitch_bins = parse(key, value)?,
            "uie.kmax" => self.uie.kmax = parse(key, value)?,
            "uie.temperature" => self.uie.temperature = parse(key, value)?,
            "stft.hop" => self.stft_hop = parse(key, value)?,
            "data.segment_samples" => self.data.segment_samples = parse(key, value)?,
            "data.snr_lo" => self.data.snr_lo = parse(key, value)?,
            "data.snr_hi" => self.data.snr_hi = parse(key, value)?,
            "data.test_snr_lo" => self.data.test_snr_lo = parse(key, value)?,
            "data.test_snr_hi" => self.data.test_snr_hi = parse(key, value)?,
            "data.target_seconds" => self.data.target_seconds = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lr0" => self.train.lr0.to_string(),
            "decay" => self.train.decay.to_string(),
            "patience" => self.train.patience.to_string(),
            "batch" => self.train.batch.to_string(),
            "epochs_max" => self.train.epochs_max.to_string(),
            "seed" => self.train.seed.to_string(),
            "clip_norm" => self.train.clip_norm.to_string(),
            "loss.w_sisnr" => self.loss.w_sisnr.to_string(),
            "loss.w_perc" => self.loss.w_perc.to_string(),
            "loss.bands" => self.loss.bands.to_string(),
            "pem.kind" => self.pem.kind.as_str().to_string(),
            "pem.crn_channels" => {
                let [a, b, c] = self.pem.crn_channels;
                format!("{a},{b},{c}")
            }
            "pem.crn_hidden" => self.pem.crn_hidden.to_string(),
            "pem.mask_hidden" => self.pem.mask_hidden.to_string(),
            "mri.n_refinements" => self.mri.n_refinements.to_string(),
            "mri.channels" => self.mri.channels.to_string(),
            "uie.pitch_min" => self.uie.pitch_min.to_string(),
            "uie.pitch_max" => self.uie.pitch_max.to_string(),
            "uie.pitch_bins" => self.uie.pitch_bins.to_string(),
            "uie.kmax" => self.uie.kmax.to_string(),
            "uie.temperature" => self.uie.temperature.to_string(),
            "stft.hop" => self.stft_hop.to_string(),
            "data.segment_samples" => self.data.segment_samples.to_string(),
            "data.snr_lo" => self.data.snr_lo.to_string(),
            "data.snr_hi" => self.data.snr_hi.to_string(),
            "data.test_snr_lo" => self.data.test_snr_lo.to_string(),
            "data.test_snr_hi" => self.data.test_snr_hi.to_string(),
            "data.target_seconds" => self.data.target_seconds.to_string(),
            _ => return None,
        })
    }

    /// The full configuration as `key = value` text, re-parseable by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&self.get(k).unwrap_or_default());
            s.push('\n');
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.lr0.is_nan() || t.lr0 <= 0.0 {
            return Err(Error::Config(format!(
                "lr0 must be positive, got {}",
                t.lr0
            )));
        }
        if !(t.decay > 0.0 && t.decay < 1.0) {
            return Err(Error::Config(format!(
                "decay must be in (0, 1), got {}",
                t.decay
            )));
        }
        if t.patience < 1 || t.batch < 1 {
            return Err(Error::Config(
                "patience and batch must be at least 1".into(),
            ));
        }
        if self.mri.n_refinements > MAX_REFINEMENTS {
            return Err(Error::Config(format!(
                "mri.n_refinements = {} exceeds the limit of {MAX_REFINEMENTS}",
                self.mri.n_refinements
            )));
        }
        if self.mri.channels == 0 {
            return Err(Error::Config("mri.channels must be positive".into()));
        }
        let u = &self.uie;
        if u.pitch_bins == 0 || u.kmax == 0 || u.temperature.is_nan() || u.temperature <= 0.0 {
            return Err(Error::Config(
                "uie.pitch_bins, uie.kmax and uie.temperature must be positive".into(),
            ));
        }
        if !(50.0..=500.0).contains(&u.pitch_min)
            || !(50.0..=500.0).contains(&u.pitch_max)
            || u.pitch_min > u.pitch_max
        {
            return Err(Error::Config(format!(
                "pitch range [{}, {}] must lie within [50, 500] Hz",
                u.pitch_min, u.pitch_max
            )));
        }
        if self.loss.bands == 0 {
            return Err(Error::Config("loss.bands must be positive".into()));
        }
        if self.pem.crn_channels.contains(&0)
            || self.pem.crn_hidden == 0
            || self.pem.mask_hidden == 0
        {
            return Err(Error::Config("pem widths must be positive".into()));
        }
        if self.data.segment_samples < 512 {
            return Err(Error::Config(
                "data.segment_samples must cover at least one window".into(),
            ));
        }
        if self.data.snr_lo > self.data.snr_hi || self.data.test_snr_lo > self.data.test_snr_hi {
            return Err(Error::Config("snr ranges must be ordered".into()));
        }
        crate::spectral::StftConfig::new(512, self.stft_hop)?;
        Ok(())
    }

    pub fn stft(&self) -> Result<crate::spectral::StftConfig> {
        crate::spectral::StftConfig::new(512, self.stft_hop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RuiConfig::default();
        cfg.set("pem.kind", "mask").unwrap();
        cfg.set("pem.crn_channels", "16, 32, 64").unwrap();
        cfg.set("uie.temperature", "0.25").unwrap();
        assert_eq!(RuiConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RuiConfig::parse("lr0 = 0.01\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("bogus")));
    }

    #[test]
    fn too_many_refinements() {
        assert!(RuiConfig::parse("mri.n_refinements = 9").is_err());
        assert!(RuiConfig::parse("mri.n_refinements = 8").is_ok());
    }

    #[test]
    fn comments_and_blanks() {
        let cfg = RuiConfig::parse("# preset\n\nstft.hop = 128  # alternative\n").unwrap();
        assert_eq!(cfg.stft_hop, 128);
    }

    #[test]
    fn every_key_is_gettable() {
        let cfg = RuiConfig::default();
        for k in KEYS {
            assert!(cfg.get(k).is_some(), "{k}");
        }
    }
}
