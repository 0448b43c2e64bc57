use std::collections::HashSet;
use std::fs;

use rui::cli::write_corpus;
use rui::manifest::{build_manifest, Manifest};
use rui::wav::save_wav;
use rui_core::dataset::{PlanOptions, Split};
use rui_core::{AudioClip, Error};

fn opts(seed: u64) -> PlanOptions {
    PlanOptions {
        target_seconds: 100.0,
        segment_samples: 16000,
        snr_range: (-5.0, 20.0),
        val_every: Some(5),
        seed,
    }
}

#[test]
fn prepare_is_deterministic_and_splits_disjointly() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 10, 3, 20000, 1).unwrap();
    let (clean, noise) = (dir.path().join("clean"), dir.path().join("noise"));
    let a = dir.path().join("out/a.csv");
    let b = dir.path().join("out/b.csv");
    build_manifest(&clean, &noise, &a, &opts(4)).unwrap();
    build_manifest(&clean, &noise, &b, &opts(4)).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let m = Manifest::read(&a).unwrap();
    assert_eq!(m.rows.len(), 100);
    assert_eq!(m.rows_in(Split::Val).len(), 20);
    assert_eq!(m.rows_in(Split::Train).len(), 80);
    let tc: HashSet<_> = m
        .rows_in(Split::Train)
        .iter()
        .map(|(_, r)| r.clean_path.clone())
        .collect();
    let vc: HashSet<_> = m
        .rows_in(Split::Val)
        .iter()
        .map(|(_, r)| r.clean_path.clone())
        .collect();
    assert!(tc.is_disjoint(&vc));
    for r in &m.rows {
        assert!(r.clean_path.starts_with("../clean/"), "{}", r.clean_path);
        assert!(r.noise_path.starts_with("../noise/"));
    }
    m.check_files().unwrap();
    let mix = m.materialize(&m.rows[0], 16000).unwrap();
    assert_eq!(mix.noisy.len(), 16000);
}

#[test]
fn manifest_survives_moving_the_tree() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("a");
    write_corpus(&root, 4, 2, 20000, 2).unwrap();
    build_manifest(
        &root.join("clean"),
        &root.join("noise"),
        &root.join("m.csv"),
        &opts(1),
    )
    .unwrap();
    let moved = dir.path().join("b");
    fs::rename(&root, &moved).unwrap();
    let m = Manifest::read(&moved.join("m.csv")).unwrap();
    m.check_files().unwrap();
}

#[test]
fn silent_and_broken_files_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 3, 1, 20000, 3).unwrap();
    let clean = dir.path().join("clean");
    save_wav(
        &AudioClip::from_samples(vec![0.0; 20000]),
        &clean.join("zz_silent.wav"),
    )
    .unwrap();
    fs::write(clean.join("zz_broken.wav"), b"not a wav").unwrap();
    let rows = build_manifest(
        &clean,
        &dir.path().join("noise"),
        &dir.path().join("m.csv"),
        &opts(1),
    )
    .unwrap();
    assert!(rows.iter().all(|r| !r.clean_path.contains("zz_")));
}

#[test]
fn missing_files_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 3, 1, 20000, 3).unwrap();
    let path = dir.path().join("m.csv");
    build_manifest(
        &dir.path().join("clean"),
        &dir.path().join("noise"),
        &path,
        &opts(1),
    )
    .unwrap();
    let m = Manifest::read(&path).unwrap();
    let gone = m.resolve(&m.rows[0].clean_path);
    fs::remove_file(&gone).unwrap();
    let err = m.check_files().unwrap_err();
    match err.downcast_ref::<Error>() {
        Some(Error::Inventory(msg)) => assert!(msg.contains(&gone.display().to_string()), "{msg}"),
        other => panic!("expected inventory error, got {other:?}"),
    }
}

#[test]
fn empty_directories_are_inventory_errors() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("clean")).unwrap();
    fs::create_dir_all(dir.path().join("noise")).unwrap();
    let err = build_manifest(
        &dir.path().join("clean"),
        &dir.path().join("noise"),
        &dir.path().join("m.csv"),
        &opts(1),
    )
    .unwrap_err();
    assert!(matches!(
        err.downcast_ref::<Error>(),
        Some(Error::Inventory(_))
    ));
}

#[test]
fn bad_header_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    fs::write(&p, "a,b\n1,2\n").unwrap();
    assert!(Manifest::read(&p).is_err());
}
