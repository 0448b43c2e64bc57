use rui::pgm::{decode_pgm, encode_pgm, export_spectrogram};
use rui_core::spectral::stft;
use rui_core::synth::speech_like;
use rui_core::{AudioClip, ComplexSpectrum, StftConfig};

#[test]
fn encode_decode_round_trip() {
    let px: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
    let bytes = encode_pgm(4, 3, &px);
    assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
    assert_eq!(decode_pgm(&bytes), Some((4, 3, px)));
    assert_eq!(decode_pgm(b"P6\n1 1\n255\n\0"), None);
    assert_eq!(decode_pgm(b"P5\n2 2\n255\n\0"), None);
}

#[test]
fn spectrogram_has_one_column_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.pgm");
    let spec = stft(
        &AudioClip::from_samples(speech_like(1, 8000)),
        &StftConfig::default(),
    )
    .unwrap();
    export_spectrogram(&spec, &p).unwrap();
    let (w, h, px) = decode_pgm(&std::fs::read(&p).unwrap()).unwrap();
    assert_eq!((w, h), (spec.frames, 257));
    assert!(px.iter().any(|&v| v > 0));
}

#[test]
fn silence_is_black_and_full_scale_is_white() {
    let mut spec = ComplexSpectrum::zeros(2, 257);
    spec.set(1, 0, 1.0, 0.0);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("z.pgm");
    export_spectrogram(&spec, &p).unwrap();
    let (w, h, px) = decode_pgm(&std::fs::read(&p).unwrap()).unwrap();
    // bin 0 sits in the bottom row
    assert_eq!(px[(h - 1) * w + 1], 255);
    assert_eq!(px.iter().filter(|&&v| v != 0).count(), 1);
}
