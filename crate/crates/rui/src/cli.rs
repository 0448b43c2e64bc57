//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rui_core::config::RuiConfig;
use rui_core::dataset::PlanOptions;
use rui_core::model::RuiModel;
use rui_core::synth::{noise, speech_like, NoiseKind};
use rui_core::AudioClip;

use crate::checkpoint;
use crate::manifest::{build_manifest, Manifest};
use crate::pipeline;
use crate::wav::save_wav;

const DEFAULT_CHECKPOINT: &str = "run/best.ckpt";

#[derive(Debug, Parser)]
#[command(name = "rui", version, about = "Refinement-based speech enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "K=V", global = true)]
    pub set: Vec<String>,
    /// Seed for planning, initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a manifest pairing clean and noise WAVs at random SNRs.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Directory of clean speech WAVs.
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory of noise WAVs.
        #[arg(long)]
        noise: PathBuf,
        /// Manifest path to write.
        #[arg(long)]
        out: PathBuf,
        /// Make every row a test row drawn from the test SNR range.
        #[arg(long)]
        test: bool,
    },
    /// Train on a manifest's train split, validating on its val split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for the log (and the checkpoint unless --checkpoint is given).
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Enhance a WAV file, a directory of WAVs, or a manifest's mixtures.
    Enhance {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = DEFAULT_CHECKPOINT)]
        checkpoint: PathBuf,
    },
    /// Score a manifest's test split and write a metrics CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = DEFAULT_CHECKPOINT)]
        checkpoint: PathBuf,
    },
    /// Export spectrogram panels of every stage for one input.
    Viz {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = DEFAULT_CHECKPOINT)]
        checkpoint: PathBuf,
    },
    /// Check the refinement ledger identities on one input.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = DEFAULT_CHECKPOINT)]
        checkpoint: PathBuf,
    },
    /// Generate a synthetic corpus of speech-like and noise WAVs.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory; `clean/` and `noise/` are created inside.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        clean_files: usize,
        #[arg(long, default_value_t = 4)]
        noise_files: usize,
        #[arg(long, default_value_t = 6.0)]
        seconds: f64,
    },
}

/// Applies the config file, then `--set` overrides, then `--seed` on top of `base`.
pub fn effective_config(base: RuiConfig, common: &Common) -> Result<RuiConfig> {
    let mut cfg = base;
    if let Some(path) = &common.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').with_context(|| {
                format!(
                    "{} line {}: expected key = value",
                    path.display(),
                    lineno + 1
                )
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set {kv}: expected K=V"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report_config(cfg: &RuiConfig) {
    eprintln!("# effective configuration");
    for line in cfg.to_text().lines() {
        eprintln!("{line}");
    }
}

/// Loads a checkpoint and re-applies the command-line config on top of the
/// stored one; overrides that change the architecture are rejected.
fn load_model(path: &Path, common: &Common) -> Result<RuiModel> {
    let stored = checkpoint::load(path)?;
    let cfg = effective_config(stored.config.clone(), common)?;
    report_config(&cfg);
    Ok(RuiModel::from_params(cfg, stored.params)?)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prepare {
            common,
            input,
            noise,
            out,
            test,
        } => {
            let cfg = effective_config(RuiConfig::default(), &common)?;
            report_config(&cfg);
            let d = &cfg.data;
            let opts = PlanOptions {
                target_seconds: d.target_seconds,
                segment_samples: d.segment_samples,
                snr_range: if test {
                    (d.test_snr_lo, d.test_snr_hi)
                } else {
                    (d.snr_lo, d.snr_hi)
                },
                val_every: if test { None } else { Some(5) },
                seed: cfg.train.seed,
            };
            let rows = build_manifest(&input, &noise, &out, &opts)?;
            log::info!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Train {
            common,
            manifest,
            out,
            checkpoint,
        } => {
            let cfg = effective_config(RuiConfig::default(), &common)?;
            report_config(&cfg);
            fs::create_dir_all(&out)?;
            let ckpt = checkpoint.unwrap_or_else(|| out.join("best.ckpt"));
            let m = Manifest::read(&manifest)?;
            pipeline::train(&cfg, &m, &ckpt, &out.join("train.log"))?;
        }
        Command::Enhance {
            common,
            input,
            out,
            checkpoint,
        } => {
            let model = load_model(&checkpoint, &common)?;
            for p in pipeline::enhance_path(&model, &input, &out)? {
                log::info!("wrote {}", p.display());
            }
        }
        Command::Eval {
            common,
            manifest,
            out,
            checkpoint,
        } => {
            let model = load_model(&checkpoint, &common)?;
            let rows = pipeline::evaluate(&model, &Manifest::read(&manifest)?)?;
            pipeline::write_metrics(&out, &rows)?;
            if let Some(m) = rui_core::objective::mean_metrics(&rows) {
                eprintln!(
                    "mean over {} utterances: SI-SDR {:.2} -> {:.2} dB, STOI {:.3} -> {:.3}, PESQ n/a",
                    rows.len(),
                    m.si_sdr_noisy,
                    m.si_sdr_enh,
                    m.stoi_noisy,
                    m.stoi_enh
                );
            }
        }
        Command::Viz {
            common,
            input,
            out,
            checkpoint,
        } => {
            let model = load_model(&checkpoint, &common)?;
            for p in pipeline::visualize(&model, &input, &out)? {
                log::info!("wrote {}", p.display());
            }
        }
        Command::Audit {
            common,
            input,
            checkpoint,
        } => {
            let model = load_model(&checkpoint, &common)?;
            let r = pipeline::audit(&model, &input)?;
            eprintln!("refinements: {}", r.iterations);
            for i in 0..r.iterations {
                eprintln!(
                    "  iteration {}: |f|^2 = {:.6e}, residual |p - sum f|^2 = {:.6e}",
                    i + 1,
                    r.refined_energy[i],
                    r.residual_energy[i]
                );
            }
            println!(
                "S-path identity: {}",
                if r.s_path_ok { "PASS" } else { "FAIL" }
            );
            println!(
                "A-path identity: {}",
                if r.a_path_ok { "PASS" } else { "FAIL" }
            );
        }
        Command::Synth {
            common,
            out,
            clean_files,
            noise_files,
            seconds,
        } => {
            let cfg = effective_config(RuiConfig::default(), &common)?;
            if seconds.is_nan() || seconds <= 0.0 {
                bail!("--seconds must be positive");
            }
            let len = (seconds * rui_core::SAMPLE_RATE as f64) as usize;
            let seed = cfg.train.seed;
            write_corpus(&out, clean_files, noise_files, len, seed)?;
            log::info!(
                "wrote {clean_files} clean and {noise_files} noise files under {}",
                out.display()
            );
        }
    }
    Ok(())
}

/// `dir/clean/clean_NNN.wav` and `dir/noise/<kind>_NNN.wav`.
pub fn write_corpus(
    dir: &Path,
    clean_files: usize,
    noise_files: usize,
    len: usize,
    seed: u64,
) -> Result<()> {
    let (cd, nd) = (dir.join("clean"), dir.join("noise"));
    fs::create_dir_all(&cd)?;
    fs::create_dir_all(&nd)?;
    for i in 0..clean_files {
        let clip = AudioClip::from_samples(speech_like(
            seed.wrapping_mul(1000).wrapping_add(i as u64),
            len,
        ));
        save_wav(&clip, &cd.join(format!("clean_{i:03}.wav")))?;
    }
    for i in 0..noise_files {
        let kind = NoiseKind::ALL[i % NoiseKind::ALL.len()];
        let clip = AudioClip::from_samples(noise(
            kind,
            seed.wrapping_mul(1000).wrapping_add(500 + i as u64),
            len,
        ));
        save_wav(&clip, &nd.join(format!("{}_{i:03}.wav", kind.name())))?;
    }
    Ok(())
}

/// Parses `argv` and runs the command. Returns the process exit code:
/// 0 on success, 1 on usage errors, 2 on runtime errors.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
