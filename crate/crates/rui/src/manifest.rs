//! Manifest CSV files and materialization of their rows.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rui_core::dataset::{
    materialize, plan_manifest, MixSpec, Mixture, PlanOptions, SourceFile, Split,
};
use rui_core::Error;

use crate::wav::load_wav;

pub const HEADER: [&str; 6] = [
    "clean_path",
    "noise_path",
    "snr_db",
    "noise_offset",
    "split",
    "seed",
];

/// Sorted `.wav` files directly inside `dir`.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn usable_sources(dir: &Path, base: &Path, what: &str) -> Result<Vec<SourceFile>> {
    let mut out = Vec::new();
    for p in list_wavs(dir)? {
        match load_wav(&p) {
            Ok(c) if c.rms() > 1e-6 => {
                let abs = fs::canonicalize(&p)?;
                let rel = pathdiff::diff_paths(&abs, base).unwrap_or(abs);
                out.push(SourceFile {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    samples: c.len(),
                });
            }
            Ok(_) => log::warn!("skipping silent {what} file {}", p.display()),
            Err(e) => log::warn!("skipping {what} file {}: {e:#}", p.display()),
        }
    }
    if out.is_empty() {
        return Err(
            Error::Inventory(format!("no usable {what} WAV files in {}", dir.display())).into(),
        );
    }
    Ok(out)
}

/// Plans a manifest over the WAVs of two directories and writes it to `out`.
/// Paths in the file are relative to `out`'s directory.
pub fn build_manifest(
    clean_dir: &Path,
    noise_dir: &Path,
    out: &Path,
    opts: &PlanOptions,
) -> Result<Vec<MixSpec>> {
    let parent = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let base = fs::canonicalize(parent)?;
    let clean = usable_sources(clean_dir, &base, "clean")?;
    let noise = usable_sources(noise_dir, &base, "noise")?;
    let rows = plan_manifest(&clean, &noise, opts)?;
    write_manifest(out, &rows)?;
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[MixSpec]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.clean_path.clone(),
            r.noise_path.clone(),
            r.snr_db.to_string(),
            r.noise_offset.to_string(),
            r.split.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A loaded manifest: its rows and the directory their paths are relative to.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub base: PathBuf,
    pub rows: Vec<MixSpec>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r =
            csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if header != HEADER {
            bail!("{}: header must be {}", path.display(), HEADER.join(","));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let ctx = || format!("{} row {}", path.display(), i + 1);
            rows.push(MixSpec {
                clean_path: rec[0].to_string(),
                noise_path: rec[1].to_string(),
                snr_db: rec[2].parse().with_context(ctx)?,
                noise_offset: rec[3].parse().with_context(ctx)?,
                split: rec[4].parse::<Split>().with_context(ctx)?,
                seed: rec[5].parse().with_context(ctx)?,
            });
        }
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        Ok(Self { base, rows })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base.join(rel)
    }

    /// Fails with an inventory error naming every referenced file that is missing.
    pub fn check_files(&self) -> Result<()> {
        let mut missing: Vec<String> = Vec::new();
        for r in &self.rows {
            for p in [&r.clean_path, &r.noise_path] {
                let full = self.resolve(p);
                let shown = full.display().to_string();
                if !full.is_file() && !missing.contains(&shown) {
                    missing.push(shown);
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Inventory(format!("missing files: {}", missing.join(", "))).into());
        }
        Ok(())
    }

    pub fn rows_in(&self, split: Split) -> Vec<(usize, &MixSpec)> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .collect()
    }

    pub fn materialize(&self, row: &MixSpec, segment: usize) -> Result<Mixture> {
        let clean = load_wav(&self.resolve(&row.clean_path))?;
        let noise = load_wav(&self.resolve(&row.noise_path))?;
        Ok(materialize(row, &clean, &noise, segment)?)
    }
}

/// Identifier used for a row in metric tables and output file names.
pub fn utt_id(index: usize) -> String {
    format!("utt{index:05}")
}
