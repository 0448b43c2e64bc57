use rui_core::config::UieConfig;
use rui_core::spectral::stft;
use rui_core::uie::{attention_weights, salience, CombPitchMatrix};
use rui_core::{AudioClip, StftConfig};

fn comb() -> CombPitchMatrix {
    UieConfig::default().comb(257, 16000.0, 512).unwrap()
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
}

#[test]
fn every_comb_row_identifies_itself() {
    let c = comb();
    assert_eq!(c.rows(), 64);
    let mut wrong = Vec::new();
    for r in 0..c.rows() {
        let s = salience(c.row(r), 1, &c);
        if argmax(&s) != r {
            wrong.push((r, argmax(&s)));
        }
    }
    assert!(wrong.is_empty(), "misidentified (row, argmax): {wrong:?}");
}

#[test]
fn harmonic_tone_attends_near_its_pitch() {
    let c = comb();
    let cfg = StftConfig::default();
    for f0 in [110.0, 180.0, 240.0, 330.0] {
        let x: Vec<f32> = (0..8000)
            .map(|n| {
                let t = n as f64 / 16000.0;
                (1..=16)
                    .map(|k| (2.0 * std::f64::consts::PI * k as f64 * f0 * t).sin() / 16.0)
                    .sum::<f64>() as f32
            })
            .collect();
        let spec = stft(&AudioClip::from_samples(x), &cfg).unwrap();
        let mag: Vec<f64> = spec.magnitudes().iter().map(|&m| m as f64).collect();
        let s = salience(&mag, spec.frames, &c);
        let frame = &s[2 * c.rows()..3 * c.rows()];
        let best = c.pitch_grid[argmax(frame)];
        assert!(
            (best / f0).log2().abs() < 0.06,
            "{f0} Hz attended {best} Hz"
        );
        let a = attention_weights(frame, UieConfig::default().temperature);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
