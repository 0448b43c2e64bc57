//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Criteria 6 to 8 train models and dominate the runtime (about two hours on
//! one core). The ablation trains on ~17 minutes of synthetic mixtures by
//! default; `RUI_ACCEPT_FULL=1` uses the two-hour corpus instead. Numeric
//! arguments select criteria, e.g. `cargo test --test acceptance -- 1 2 9`.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rui::cli::write_corpus;
use rui::manifest::{build_manifest, Manifest};
use rui::pipeline::{evaluate, load_split, train};
use rui_core::config::{PemKind, RuiConfig, TrainConfig, UieConfig};
use rui_core::dataset::{mix_at_snr, PlanOptions, Split};
use rui_core::gradsuite::{model_suite, primitive_suite, suite_options};
use rui_core::model::RuiModel;
use rui_core::mri::audit_ledger;
use rui_core::objective::{si_sdr, si_sdr_samples};
use rui_core::spectral::{istft, stft};
use rui_core::stoi::stoi;
use rui_core::synth::{noise, speech_like, NoiseKind};
use rui_core::trainer::{lr_step, ScheduleState, Trainer};
use rui_core::uie::salience;
use rui_core::{AudioClip, ComplexSpectrum, StftConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

fn model(kind: PemKind, n: usize, seed: u64) -> Result<RuiModel> {
    let mut cfg = RuiConfig::default();
    cfg.pem.kind = kind;
    cfg.mri.n_refinements = n;
    Ok(RuiModel::new(cfg, seed)?)
}

fn random_spectrum(rng: &mut ChaCha8Rng, frames: usize) -> ComplexSpectrum {
    let data = (0..frames * 2 * 257)
        .map(|_| rng.random_range(-3.0f32..3.0))
        .collect();
    ComplexSpectrum::from_data(frames, 257, data).expect("shape")
}

fn bits(s: &ComplexSpectrum) -> Vec<u32> {
    s.data.iter().map(|v| v.to_bits()).collect()
}

fn identity_suite() -> Result<Verdict> {
    let start = Instant::now();
    let mut checked = 0;
    for n in [0, 1, 3, 8] {
        let mut m = model(PemKind::Crn, n, 100 + n as u64)?;
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        for (_, t) in m.params.iter_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-0.1f32..0.1));
        }
        for _ in 0..100 {
            let ledger = m.enhance_spectrum(&random_spectrum(&mut rng, 3))?;
            let r = audit_ledger(&ledger)?;
            ensure!(r.s_path_ok && r.a_path_ok && r.iterations == n);
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        secs < 60.0,
        format!(
            "{checked} random inputs over N in {{0,1,3,8}}, both identities bit-exact, {secs:.1} s"
        ),
    )
}

fn zero_init_equivalence() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_spectrum(&mut rng, 8);
    let mut ok = true;
    for kind in [PemKind::Mask, PemKind::Crn] {
        let pem = model(kind, 0, 7)?.enhance_spectrum(&x)?.output;
        for n in [1, 3, 8] {
            ok &= bits(&model(kind, n, 7)?.enhance_spectrum(&x)?.output) == bits(&pem);
        }
    }
    verdict(
        ok,
        "untrained N in {1,3,8} output equals PEM output bit for bit, mask and crn",
    )
}

fn gradient_suite() -> Result<Verdict> {
    let start = Instant::now();
    let mut cases = primitive_suite(suite_options())?;
    cases.extend(model_suite(suite_options())?);
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = cases
        .iter()
        .filter(|c| !c.passed())
        .map(|c| c.name)
        .collect();
    let worst = cases
        .iter()
        .filter_map(|c| c.report.worst().map(|w| (c.name, w.rel_error)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or(("none", 0.0));
    verdict(
        failed.is_empty() && secs < 600.0,
        format!(
            "{} cases at f64, tol 1e-4, worst {:.1e} ({}), failed {:?}, {secs:.1} s",
            cases.len(),
            worst.1,
            worst.0,
            failed
        ),
    )
}

fn stft_round_trip() -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    for hop in [384, 128] {
        let cfg = StftConfig::new(512, hop)?;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let len = 8000 + rng.random_range(0..8000);
            let x =
                AudioClip::from_samples((0..len).map(|_| rng.random_range(-0.5f32..0.5)).collect());
            let y = istft(&stft(&x, &cfg)?, &cfg, len)?;
            let (mut num, mut den) = (0.0f64, 0.0f64);
            for n in cfg.interior(len) {
                num += ((x.samples[n] - y.samples[n]) as f64).powi(2);
                den += (x.samples[n] as f64).powi(2);
            }
            worst = worst.max((num / den).sqrt());
        }
    }
    verdict(
        worst <= 1e-6,
        format!("worst interior relative RMS {worst:.2e} over 20 clips at hops 384 and 128"),
    )
}

fn metric_oracles() -> Result<Verdict> {
    let zero = si_sdr_samples(&[1.0, 1.0], &[1.0, 0.0])?;
    let three = si_sdr_samples(&[1.0, 0.0, 1.0], &[1.0, 1.0, 1.0])?;
    let hand = zero.abs() < 1e-9 && (three - 10.0 * 2f64.log10()).abs() < 1e-9;
    let mut self_min: f64 = 1.0;
    let mut monotone = true;
    let mut sweep = Vec::new();
    for u in 0..5u64 {
        let s = AudioClip::from_samples(speech_like(300 + u, 48000));
        self_min = self_min.min(stoi(&s, &s)?);
        let n = AudioClip::from_samples(noise(NoiseKind::ALL[u as usize % 4], 400 + u, 48000));
        let mut scores = Vec::new();
        for snr in [20.0, 10.0, 0.0, -5.0] {
            let m = mix_at_snr(&s, &n, snr)?;
            scores.push(stoi(&m.clean, &m.noisy)?);
        }
        monotone &= scores.windows(2).all(|w| w[0] > w[1]);
        sweep.push(scores);
    }
    let first = sweep[0]
        .iter()
        .map(|v| format!("{v:.3}"))
        .collect::<Vec<_>>()
        .join(" > ");
    verdict(
        hand && self_min >= 0.999 && monotone,
        format!("si_sdr 0 dB case {zero:.1e}, stoi(s,s) >= {self_min:.4}, sweep strictly decreasing on 5 utterances (first: {first})"),
    )
}

fn lr_schedule() -> Result<Verdict> {
    let cfg = TrainConfig::default();
    let run = |losses: &[f64]| -> Result<f64> {
        let mut s = ScheduleState::new(cfg.lr0);
        for &l in losses {
            s = lr_step(&s, l, &cfg)?;
        }
        Ok(s.current_lr)
    };
    let a = run(&[1.0, 0.9, 0.8])?;
    let b = run(&[1.0, 1.1, 1.2, 1.3])?;
    let c = run(&[1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6])?;
    let ok =
        (a - 0.001).abs() < 1e-15 && (b - 0.00075).abs() < 1e-15 && (c - 0.0005625).abs() < 1e-15;
    verdict(ok, format!("{a} -> {b} -> {c}"))
}

fn comb_identification() -> Result<Verdict> {
    let comb = UieConfig::default().comb(257, 16000.0, 512)?;
    let wrong: Vec<usize> = (0..comb.rows())
        .filter(|&r| {
            let s = salience(comb.row(r), 1, &comb);
            (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])) != Some(r)
        })
        .collect();
    verdict(
        wrong.is_empty(),
        format!(
            "{} of {} candidates identified, misses {wrong:?}",
            comb.rows() - wrong.len(),
            comb.rows()
        ),
    )
}

fn mean_si_sdr(m: &RuiModel, data: &[rui_core::trainer::Example]) -> Result<(f64, f64)> {
    let (mut noisy, mut enh) = (0.0, 0.0);
    for ex in data {
        noisy += si_sdr(&ex.clean, &ex.noisy)?;
        enh += si_sdr(&ex.clean, &m.enhance(&ex.noisy)?.audio)?;
    }
    Ok((noisy / data.len() as f64, enh / data.len() as f64))
}

const OVERFIT_CLIPS: usize = 10;
const OVERFIT_SAMPLES: usize = 16000;
const OVERFIT_EPOCHS: usize = 200;

fn overfit_gate() -> Result<Verdict> {
    let start = Instant::now();
    let data: Vec<_> = (0..OVERFIT_CLIPS as u64)
        .map(|i| {
            let c = AudioClip::from_samples(speech_like(500 + i, OVERFIT_SAMPLES));
            let n = AudioClip::from_samples(noise(
                NoiseKind::ALL[i as usize % 4],
                600 + i,
                OVERFIT_SAMPLES,
            ));
            let m = mix_at_snr(&c, &n, -5.0 + 2.5 * i as f64).expect("mixable");
            rui_core::trainer::Example {
                noisy: m.noisy,
                clean: m.clean,
            }
        })
        .collect();
    let mut t = Trainer::new(model(PemKind::Crn, 2, 1)?);
    t.config.batch = 1;
    let mut best = f64::NEG_INFINITY;
    let mut epochs = 0;
    let mut noisy = 0.0;
    while epochs < OVERFIT_EPOCHS {
        for _ in 0..20 {
            t.run_epoch(&data, &data)?;
        }
        epochs += 20;
        let (n, e) = mean_si_sdr(&t.best_model(), &data)?;
        noisy = n;
        best = best.max(e);
        if best - noisy >= 5.0 {
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        best - noisy >= 5.0 && secs <= 7200.0,
        format!(
            "{OVERFIT_CLIPS} clips x {:.1} s, CRN N=2: train SI-SDR {noisy:.2} -> {best:.2} dB (+{:.2}) after {epochs} epochs, {:.0} s",
            OVERFIT_SAMPLES as f64 / 16000.0,
            best - noisy,
            secs
        ),
    )
}

struct Corpus {
    _dir: tempfile::TempDir,
    train: Manifest,
    test: Manifest,
    segment: usize,
    epochs: usize,
}

fn mini_corpus() -> Result<Corpus> {
    let full = std::env::var("RUI_ACCEPT_FULL").is_ok_and(|v| v == "1");
    // (clean files, file seconds, train+val seconds, test seconds, epochs)
    let (files, file_secs, target, test_target, epochs) = if full {
        (120, 60.0, 7200.0, 600.0, 10)
    } else {
        (60, 20.0, 1000.0, 120.0, 10)
    };
    let segment = 32000;
    let dir = tempfile::tempdir()?;
    let (tr, te) = (dir.path().join("train"), dir.path().join("test"));
    let len = (file_secs * 16000.0) as usize;
    write_corpus(&tr, files, 4, len, 1)?;
    write_corpus(&te, (files / 4).max(4), 4, len, 2)?;
    let plan = |target_seconds, snr_range, val_every| PlanOptions {
        target_seconds,
        segment_samples: segment,
        snr_range,
        val_every,
        seed: 7,
    };
    let cfg = RuiConfig::default();
    let train_path = dir.path().join("train.csv");
    let test_path = dir.path().join("test.csv");
    build_manifest(
        &tr.join("clean"),
        &tr.join("noise"),
        &train_path,
        &plan(target, (cfg.data.snr_lo, cfg.data.snr_hi), Some(5)),
    )?;
    build_manifest(
        &te.join("clean"),
        &te.join("noise"),
        &test_path,
        &plan(
            test_target,
            (cfg.data.test_snr_lo, cfg.data.test_snr_hi),
            None,
        ),
    )?;
    Ok(Corpus {
        train: Manifest::read(&train_path)?,
        test: Manifest::read(&test_path)?,
        _dir: dir,
        segment,
        epochs,
    })
}

/// Held-out mean SI-SDR of enhanced speech for one trained configuration.
fn train_and_score(c: &Corpus, kind: PemKind, n: usize, seed: u64, work: &Path) -> Result<f64> {
    let mut cfg = RuiConfig::default();
    cfg.pem.kind = kind;
    cfg.mri.n_refinements = n;
    cfg.train.seed = seed;
    cfg.train.epochs_max = c.epochs;
    cfg.data.segment_samples = c.segment;
    let tag = format!("{}_{n}_{seed}", kind.as_str());
    let out = train(
        &cfg,
        &c.train,
        &work.join(format!("{tag}.ckpt")),
        &work.join(format!("{tag}.log")),
    )?;
    let m = rui::checkpoint::load(&out.checkpoint)?;
    let rows = evaluate(&m, &c.test)?;
    Ok(rows.iter().map(|r| r.si_sdr_enh).sum::<f64>() / rows.len() as f64)
}

struct Ablation {
    /// `[kind][n]` per seed, kinds ordered mask, crn.
    scores: Vec<[[f64; 2]; 2]>,
    noisy: f64,
    secs: f64,
}

fn run_ablation() -> Result<Ablation> {
    let start = Instant::now();
    let c = mini_corpus()?;
    let work = tempfile::tempdir()?;
    let test = load_split(&c.test, Split::Test, c.segment)?;
    let noisy = test
        .iter()
        .map(|e| si_sdr(&e.clean, &e.noisy))
        .sum::<rui_core::Result<f64>>()?
        / test.len() as f64;
    let mut scores = Vec::new();
    for seed in 0..3 {
        let mut s = [[0.0; 2]; 2];
        for (k, kind) in [PemKind::Mask, PemKind::Crn].into_iter().enumerate() {
            for (n, slot) in s[k].iter_mut().enumerate() {
                *slot = train_and_score(&c, kind, n, seed, work.path())?;
                eprintln!(
                    "  ablation seed {seed} {} N={n}: {:.3} dB",
                    kind.as_str(),
                    *slot
                );
            }
        }
        scores.push(s);
    }
    Ok(Ablation {
        scores,
        noisy,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn mean_of(a: &Ablation, k: usize, n: usize) -> f64 {
    a.scores.iter().map(|s| s[k][n]).sum::<f64>() / a.scores.len() as f64
}

fn per_seed(a: &Ablation, k: usize) -> String {
    a.scores
        .iter()
        .map(|s| format!("{:.2}/{:.2}", s[k][0], s[k][1]))
        .collect::<Vec<_>>()
        .join(", ")
}

fn ablation_trend(a: &Ablation) -> Result<Verdict> {
    let (pem, rui) = (mean_of(a, 1, 0), mean_of(a, 1, 1));
    verdict(
        rui >= pem + 0.3,
        format!(
            "CRN PEM-only {pem:.2} dB vs RUI(N=1) {rui:.2} dB (+{:.2}, need +0.30); per seed N=0/N=1: {}; noisy {:.2} dB; {:.0} s",
            rui - pem,
            per_seed(a, 1),
            a.noisy,
            a.secs
        ),
    )
}

fn flexibility_trend(a: &Ablation) -> Result<Verdict> {
    let dm = mean_of(a, 0, 1) - mean_of(a, 0, 0);
    let dc = mean_of(a, 1, 1) - mean_of(a, 1, 0);
    verdict(dm > dc, format!("refinement gain over mask PEM {dm:+.2} dB vs over CRN PEM {dc:+.2} dB; mask per seed N=0/N=1: {}", per_seed(a, 0)))
}

fn main() -> ExitCode {
    // Numeric arguments select criteria; anything else (libtest flags) is ignored.
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |id: u32| only.is_empty() || only.contains(&id);
    let mut failed = 0;
    let mut report = |id: u32, name: &str, r: Result<Verdict>| {
        let (pass, detail) = match r {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {:<28} {}  {detail}",
            name,
            if pass { "PASS" } else { "FAIL" }
        );
    };
    if wanted(1) {
        report(1, "identity suite", identity_suite());
    }
    if wanted(2) {
        report(2, "zero-init equivalence", zero_init_equivalence());
    }
    if wanted(3) {
        report(3, "gradient suite", gradient_suite());
    }
    if wanted(4) {
        report(4, "stft round trip", stft_round_trip());
    }
    if wanted(5) {
        report(5, "metric oracles", metric_oracles());
    }
    if wanted(6) {
        report(6, "overfit gate", overfit_gate());
    }
    if wanted(7) || wanted(8) {
        match run_ablation() {
            Ok(a) => {
                report(7, "ablation trend", ablation_trend(&a));
                report(8, "flexibility trend", flexibility_trend(&a));
            }
            Err(e) => {
                let msg = format!("{e:#}");
                report(7, "ablation trend", Err(anyhow::anyhow!(msg.clone())));
                report(8, "flexibility trend", Err(anyhow::anyhow!(msg)));
            }
        }
    }
    if wanted(9) {
        report(9, "lr schedule", lr_schedule());
    }
    if wanted(10) {
        report(10, "comb self-identification", comb_identification());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
