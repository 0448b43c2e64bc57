//! Noisy-mixture synthesis and train/validation/test manifest planning.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)] // f64 math when built without std
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Peak above which a mixture and its clean reference are jointly rescaled.
pub const PEAK_LIMIT: f64 = 0.99;
const SILENT_RMS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub clean_path: String,
    pub noise_path: String,
    pub snr_db: f64,
    pub noise_offset: usize,
    pub split: Split,
    pub seed: u64,
}

/// A materialized mixture. `clean` is the training target and carries the
/// same peak scaling as `noisy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub noisy: AudioClip,
    pub clean: AudioClip,
    pub noise_gain: f64,
    /// Joint scale applied for peak limiting (1.0 when none was needed).
    pub peak_scale: f64,
}

fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Noise gain that puts `noise` at `snr_db` below `clean` over the full segment.
pub fn noise_gain(clean: &[f32], noise: &[f32], snr_db: f64) -> Result<f64> {
    if clean.len() != noise.len() {
        return Err(Error::Shape(format!(
            "clean has {} samples, noise {}",
            clean.len(),
            noise.len()
        )));
    }
    let (rc, rn) = (rms(clean), rms(noise));
    if rc <= SILENT_RMS {
        return Err(Error::Energy(format!("clean RMS {rc:e} is silent")));
    }
    if rn <= SILENT_RMS {
        return Err(Error::Energy(format!("noise RMS {rn:e} is silent")));
    }
    Ok(rc / rn * 10f64.powf(-snr_db / 20.0))
}

/// Mixes `noise` into `clean` at `snr_db`, then limits the peak of the
/// mixture to 0.99 by scaling mixture and clean reference together.
pub fn mix_at_snr(clean: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<Mixture> {
    let g = noise_gain(&clean.samples, &noise.samples, snr_db)?;
    let mut noisy: Vec<f64> = clean
        .samples
        .iter()
        .zip(&noise.samples)
        .map(|(&c, &n)| c as f64 + g * n as f64)
        .collect();
    let peak = noisy.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = if peak > PEAK_LIMIT {
        PEAK_LIMIT / peak
    } else {
        1.0
    };
    noisy.iter_mut().for_each(|v| *v *= scale);
    let clean_out = clean
        .samples
        .iter()
        .map(|&c| (c as f64 * scale) as f32)
        .collect();
    Ok(Mixture {
        noisy: AudioClip::new(
            noisy.into_iter().map(|v| v as f32).collect(),
            clean.sample_rate_hz,
        )?,
        clean: AudioClip::new(clean_out, clean.sample_rate_hz)?,
        noise_gain: g,
        peak_scale: scale,
    })
}

/// `len` samples of `x` starting at `offset`, wrapping around as often as needed.
pub fn loop_segment(x: &[f32], offset: usize, len: usize) -> Vec<f32> {
    if x.is_empty() {
        return alloc::vec![0.0; len];
    }
    (0..len).map(|i| x[(offset + i) % x.len()]).collect()
}

/// Start sample for the clean crop of a row: uniform over the file when it
/// is longer than the segment, zero otherwise (the file is then looped).
pub fn clean_offset(seed: u64, clean_len: usize, segment: usize) -> usize {
    if clean_len <= segment {
        return 0;
    }
    ChaCha8Rng::seed_from_u64(seed).random_range(0..=clean_len - segment)
}

/// Builds the mixture a manifest row describes from the full clean and noise files.
pub fn materialize(
    row: &MixSpec,
    clean: &AudioClip,
    noise: &AudioClip,
    segment: usize,
) -> Result<Mixture> {
    let off = clean_offset(row.seed, clean.len(), segment);
    let c = AudioClip::new(
        loop_segment(&clean.samples, off, segment),
        clean.sample_rate_hz,
    )?;
    let n = AudioClip::new(
        loop_segment(&noise.samples, row.noise_offset, segment),
        noise.sample_rate_hz,
    )?;
    mix_at_snr(&c, &n, row.snr_db)
}

/// A source file known to the planner: its path (as it will appear in the
/// manifest) and its length in samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: String,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    pub target_seconds: f64,
    pub segment_samples: usize,
    pub snr_range: (f64, f64),
    /// `Some(k)`: 1 in `k` rows goes to validation with clean files kept
    /// disjoint; `None`: every row is a test row.
    pub val_every: Option<usize>,
    pub seed: u64,
}

/// Plans manifest rows. Deterministic in `opts.seed`; row count is the
/// smallest that covers `target_seconds`.
pub fn plan_manifest(
    clean: &[SourceFile],
    noise: &[SourceFile],
    opts: &PlanOptions,
) -> Result<Vec<MixSpec>> {
    if clean.is_empty() {
        return Err(Error::Inventory("no clean files".into()));
    }
    if noise.is_empty() {
        return Err(Error::Inventory("no noise files".into()));
    }
    let (lo, hi) = opts.snr_range;
    if lo.is_nan()
        || hi.is_nan()
        || lo > hi
        || opts.segment_samples == 0
        || opts.target_seconds.is_nan()
        || opts.target_seconds <= 0.0
    {
        return Err(Error::Config(format!(
            "bad plan: snr [{lo}, {hi}], segment {}, target {} s",
            opts.segment_samples, opts.target_seconds
        )));
    }
    let seg_seconds = opts.segment_samples as f64 / crate::SAMPLE_RATE as f64;
    let rows = (opts.target_seconds / seg_seconds).ceil().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut order: Vec<usize> = (0..clean.len()).collect();
    order.shuffle(&mut rng);
    let (train_files, val_files, val_rows): (Vec<usize>, Vec<usize>, usize) = match opts.val_every {
        Some(k) => {
            if k < 2 {
                return Err(Error::Config(format!(
                    "validation ratio 1:{k} leaves no training rows"
                )));
            }
            if clean.len() < 2 {
                return Err(Error::Inventory(
                    "a train/validation split needs at least two clean files".into(),
                ));
            }
            let n_val =
                ((clean.len() as f64 / k as f64).round() as usize).clamp(1, clean.len() - 1);
            let val_rows = ((rows as f64 / k as f64).round() as usize).clamp(1, rows.max(2) - 1);
            (order[n_val..].to_vec(), order[..n_val].to_vec(), val_rows)
        }
        None => (order, Vec::new(), 0),
    };
    let train_split = if opts.val_every.is_some() {
        Split::Train
    } else {
        Split::Test
    };
    let rows = rows.max(val_rows + 1);

    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let (files, split, idx) = if r < rows - val_rows {
            (&train_files, train_split, r)
        } else {
            (&val_files, Split::Val, r - (rows - val_rows))
        };
        let c = &clean[files[idx % files.len()]];
        let n = &noise[rng.random_range(0..noise.len())];
        let snr_db = if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        };
        let noise_offset = rng.random_range(0..n.samples.max(1));
        let seed = rng.random::<u64>();
        out.push(MixSpec {
            clean_path: c.path.clone(),
            noise_path: n.path.clone(),
            snr_db,
            noise_offset,
            split,
            seed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn gain_for_twenty_db_equal_rms() {
        let c = vec![0.1f32, -0.1, 0.1, -0.1];
        let g = noise_gain(&c, &c, 20.0).unwrap();
        assert!((g - 0.1).abs() < 1e-12);
    }

    #[test]
    fn silent_inputs_are_energy_errors() {
        let z = AudioClip::from_samples(vec![0.0; 8]);
        let c = AudioClip::from_samples(vec![0.1; 8]);
        assert!(matches!(mix_at_snr(&z, &c, 0.0), Err(Error::Energy(_))));
        assert!(matches!(mix_at_snr(&c, &z, 0.0), Err(Error::Energy(_))));
        let short = AudioClip::from_samples(vec![0.1; 4]);
        assert!(matches!(mix_at_snr(&c, &short, 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn peak_limit_scales_both() {
        let c = AudioClip::from_samples(vec![0.9, -0.9, 0.9, -0.9]);
        let m = mix_at_snr(&c, &c, 0.0).unwrap();
        assert!((m.peak_scale - 0.99 / 1.8).abs() < 1e-6);
        assert!((m.noisy.peak() as f64 - 0.99).abs() < 1e-6);
        assert!((m.clean.samples[0] as f64 - 0.9 * m.peak_scale).abs() < 1e-6);
    }

    #[test]
    fn looping_wraps() {
        assert_eq!(
            loop_segment(&[1.0, 2.0, 3.0], 2, 5),
            vec![3.0, 1.0, 2.0, 3.0, 1.0]
        );
    }

    fn files(prefix: &str, n: usize) -> Vec<SourceFile> {
        (0..n)
            .map(|i| SourceFile {
                path: format!("{prefix}{i}.wav"),
                samples: 20000 + i * 100,
            })
            .collect()
    }

    #[test]
    fn hundred_rows_split_four_to_one() {
        let opts = PlanOptions {
            target_seconds: 100.0,
            segment_samples: 16000,
            snr_range: (-5.0, 20.0),
            val_every: Some(5),
            seed: 1,
        };
        let rows = plan_manifest(&files("c", 10), &files("n", 3), &opts).unwrap();
        assert_eq!(rows.len(), 100);
        assert_eq!(rows.iter().filter(|r| r.split == Split::Train).count(), 80);
        assert_eq!(rows.iter().filter(|r| r.split == Split::Val).count(), 20);
        assert_eq!(
            rows,
            plan_manifest(&files("c", 10), &files("n", 3), &opts).unwrap()
        );
    }

    #[test]
    fn split_parses() {
        for s in [Split::Train, Split::Val, Split::Test] {
            assert_eq!(s.to_string().parse::<Split>().unwrap(), s);
        }
    }
}
