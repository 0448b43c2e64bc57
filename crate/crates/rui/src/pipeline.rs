//! File-level pipeline steps shared by the CLI and the tests.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rui_core::config::RuiConfig;
use rui_core::dataset::Split;
use rui_core::model::RuiModel;
use rui_core::mri::{audit_ledger, AuditReport};
use rui_core::objective::{mean_metrics, score_utterance, UtteranceMetrics};
use rui_core::trainer::{EpochSummary, Example, Trainer};
use rui_core::{AudioClip, Error};

use crate::checkpoint;
use crate::manifest::{list_wavs, utt_id, Manifest};
use crate::pgm::export_spectrogram;
use crate::wav::{load_wav, save_wav};

/// Worker threads from `RUI_THREADS` (default 1).
pub fn threads() -> usize {
    std::env::var("RUI_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Maps `f` over `items` on up to `threads` scoped threads. Results come back
/// in input order whatever the schedule.
pub fn par_map<T: Sync, U: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> Result<U> + Sync,
) -> Result<Vec<U>> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let parts: Vec<Result<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<U>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Materializes every row of one split.
pub fn load_split(manifest: &Manifest, split: Split, segment: usize) -> Result<Vec<Example>> {
    let rows = manifest.rows_in(split);
    par_map(&rows, threads(), |(_, r)| {
        let m = manifest.materialize(r, segment)?;
        Ok(Example {
            noisy: m.noisy,
            clean: m.clean,
        })
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochSummary>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Trains on the manifest's train split with per-epoch validation on its val
/// split. Each epoch appends `epoch,train_loss,val_loss,lr,wall_seconds` to
/// `log`; the best-validation model is written to `checkpoint` whenever it
/// improves, so an aborted run leaves the last good checkpoint behind.
pub fn train(
    cfg: &RuiConfig,
    manifest: &Manifest,
    checkpoint_path: &Path,
    log: &Path,
) -> Result<TrainOutcome> {
    manifest.check_files()?;
    let seg = cfg.data.segment_samples;
    let train_set = load_split(manifest, Split::Train, seg)?;
    let val_set = load_split(manifest, Split::Val, seg)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Inventory(format!(
            "manifest needs train and val rows (found {} train, {} val)",
            train_set.len(),
            val_set.len()
        ))
        .into());
    }
    let model = RuiModel::new(cfg.clone(), cfg.train.seed)?;
    log::info!(
        "training {} parameters on {} train / {} val utterances",
        model.num_params(),
        train_set.len(),
        val_set.len()
    );
    let mut trainer = Trainer::new(model);
    let mut logf = OpenOptions::new()
        .create(true)
        .append(true)
        .open(log)
        .with_context(|| format!("opening {}", log.display()))?;
    let start = Instant::now();
    let mut epochs = Vec::new();
    for _ in 0..cfg.train.epochs_max {
        let s = trainer
            .run_epoch(&train_set, &val_set)
            .context("training aborted; the last good checkpoint is kept")?;
        let line = s.log_line(start.elapsed().as_secs_f64());
        writeln!(logf, "{line}")?;
        logf.flush()?;
        log::info!("{line}");
        if s.improved {
            checkpoint::save(&trainer.model, checkpoint_path)?;
        }
        epochs.push(s);
    }
    Ok(TrainOutcome {
        epochs,
        checkpoint: checkpoint_path.to_path_buf(),
        log: log.to_path_buf(),
    })
}

/// Scores the test split: noisy and `enhance(noisy)` against clean, one row per utterance.
pub fn evaluate_with(
    manifest: &Manifest,
    segment: usize,
    enhance: impl Fn(&AudioClip, &AudioClip) -> Result<AudioClip> + Sync,
) -> Result<Vec<UtteranceMetrics>> {
    manifest.check_files()?;
    let rows = manifest.rows_in(Split::Test);
    if rows.is_empty() {
        return Err(Error::Inventory("manifest has no test rows".into()).into());
    }
    par_map(&rows, threads(), |&(i, r)| {
        let m = manifest.materialize(r, segment)?;
        let enh = enhance(&m.noisy, &m.clean)?;
        Ok(score_utterance(
            &utt_id(i),
            r.snr_db,
            &m.clean,
            &m.noisy,
            &enh,
        )?)
    })
}

pub fn evaluate(model: &RuiModel, manifest: &Manifest) -> Result<Vec<UtteranceMetrics>> {
    evaluate_with(manifest, model.config.data.segment_samples, |noisy, _| {
        Ok(model.enhance(noisy)?.audio)
    })
}

/// `utt_id,snr_db,si_sdr_noisy,si_sdr_enh,stoi_noisy,stoi_enh`, one line per
/// utterance followed by a `mean` line.
pub fn write_metrics(path: &Path, rows: &[UtteranceMetrics]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "utt_id",
        "snr_db",
        "si_sdr_noisy",
        "si_sdr_enh",
        "stoi_noisy",
        "stoi_enh",
    ])?;
    for r in rows.iter().chain(mean_metrics(rows).as_ref()) {
        w.write_record([
            r.utt_id.clone(),
            format!("{:.4}", r.snr_db),
            format!("{:.4}", r.si_sdr_noisy),
            format!("{:.4}", r.si_sdr_enh),
            format!("{:.6}", r.stoi_noisy),
            format!("{:.6}", r.stoi_enh),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn enh_name(input: &Path) -> String {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{stem}.enh.wav")
}

/// Enhances a WAV file, every WAV in a directory, or the noisy mixtures of
/// a manifest (`.csv`). Returns the files written.
pub fn enhance_path(model: &RuiModel, input: &Path, output: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file()
        && input
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        let manifest = Manifest::read(input)?;
        manifest.check_files()?;
        fs::create_dir_all(output)?;
        let rows: Vec<(usize, _)> = manifest.rows.iter().enumerate().collect();
        return par_map(&rows, threads(), |&(i, r)| {
            let m = manifest.materialize(r, model.config.data.segment_samples)?;
            let out = output.join(format!("{}.enh.wav", utt_id(i)));
            save_wav(&model.enhance(&m.noisy)?.audio, &out)?;
            Ok(out)
        });
    }
    if input.is_dir() {
        fs::create_dir_all(output)?;
        let files = list_wavs(input)?;
        return par_map(&files, threads(), |f| {
            let out = output.join(enh_name(f));
            save_wav(&model.enhance(&load_wav(f)?)?.audio, &out)?;
            Ok(out)
        });
    }
    if !input.is_file() {
        bail!("input {} does not exist", input.display());
    }
    let out = if output.is_dir() {
        output.join(enh_name(input))
    } else {
        output.to_path_buf()
    };
    save_wav(&model.enhance(&load_wav(input)?)?.audio, &out)?;
    Ok(vec![out])
}

/// Spectrogram panels for one input: noisy, pre-enhanced, each refined term
/// and the final output.
pub fn visualize(model: &RuiModel, input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let e = model.enhance(&load_wav(input)?)?;
    let mut panels = vec![
        ("noisy".to_string(), &e.noisy),
        ("pem".to_string(), &e.ledger.p),
    ];
    for (i, f) in e.ledger.f.iter().enumerate() {
        panels.push((format!("f{}", i + 1), f));
    }
    panels.push(("final".to_string(), &e.ledger.output));
    let mut written = Vec::new();
    for (k, (name, spec)) in panels.into_iter().enumerate() {
        let path = out_dir.join(format!("{k:02}_{name}.pgm"));
        export_spectrogram(spec, &path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn audit(model: &RuiModel, input: &Path) -> Result<AuditReport> {
    let e = model.enhance(&load_wav(input)?)?;
    Ok(audit_ledger(&e.ledger)?)
}
