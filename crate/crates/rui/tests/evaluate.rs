use rui::cli::write_corpus;
use rui::manifest::{build_manifest, Manifest};
use rui::pipeline::{evaluate_with, par_map, write_metrics};
use rui_core::dataset::PlanOptions;

fn test_manifest(dir: &std::path::Path) -> Manifest {
    write_corpus(dir, 4, 2, 40000, 6).unwrap();
    let opts = PlanOptions {
        target_seconds: 10.0,
        segment_samples: 32000,
        snr_range: (-5.0, 30.0),
        val_every: None,
        seed: 2,
    };
    build_manifest(
        &dir.join("clean"),
        &dir.join("noise"),
        &dir.join("test.csv"),
        &opts,
    )
    .unwrap();
    Manifest::read(&dir.join("test.csv")).unwrap()
}

#[test]
fn identity_enhancer_scores_like_the_mixture() {
    let dir = tempfile::tempdir().unwrap();
    let m = test_manifest(dir.path());
    let rows = evaluate_with(&m, 32000, |noisy, _| Ok(noisy.clone())).unwrap();
    assert_eq!(rows.len(), 5);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.utt_id, format!("utt{i:05}"));
        assert_eq!(r.si_sdr_enh, r.si_sdr_noisy);
        assert_eq!(r.stoi_enh, r.stoi_noisy);
        assert!((r.snr_db - m.rows[i].snr_db).abs() < 1e-12);
    }
}

#[test]
fn oracle_enhancer_hits_the_ceiling() {
    let dir = tempfile::tempdir().unwrap();
    let m = test_manifest(dir.path());
    let rows = evaluate_with(&m, 32000, |_, clean| Ok(clean.clone())).unwrap();
    for r in &rows {
        assert_eq!(r.si_sdr_enh, 60.0);
        assert!(r.stoi_enh >= 0.999);
        assert!(r.si_sdr_noisy < 60.0);
    }
    let out = dir.path().join("metrics.csv");
    write_metrics(&out, &rows).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), rows.len() + 2);
    assert!(text.lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn manifests_without_test_rows_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 4, 1, 40000, 1).unwrap();
    let opts = PlanOptions {
        target_seconds: 10.0,
        segment_samples: 32000,
        snr_range: (0.0, 5.0),
        val_every: Some(5),
        seed: 1,
    };
    build_manifest(
        &dir.path().join("clean"),
        &dir.path().join("noise"),
        &dir.path().join("t.csv"),
        &opts,
    )
    .unwrap();
    let m = Manifest::read(&dir.path().join("t.csv")).unwrap();
    assert!(evaluate_with(&m, 32000, |n, _| Ok(n.clone())).is_err());
}

#[test]
fn parallel_map_keeps_order() {
    let items: Vec<u64> = (0..37).collect();
    for threads in [1, 3, 8] {
        let out = par_map(&items, threads, |&x| Ok(x * x)).unwrap();
        assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
    }
    assert!(par_map(&items, 4, |&x| if x == 20 {
        anyhow::bail!("boom")
    } else {
        Ok(x)
    })
    .is_err());
}
