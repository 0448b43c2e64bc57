//! Harmonic attention: correlates the noisy magnitude spectrum with a bank
//! of comb templates (one per candidate pitch), turns the correlations into
//! attention weights, and projects the noisy spectrum together with the
//! attended harmonic template into a multi-channel flow.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::compute::{Bindings, ConvGeom, Graph, ParamStore, Tensor, Var};
use crate::config::UieConfig;
use crate::error::{Error, Result};
use crate::pem::compress;
use crate::real::Real;

/// Added under the square root of |X| so magnitudes stay differentiable at 0.
pub const MAG_EPS: f64 = 1e-12;
const SALIENCE_EPS: f64 = 1e-8;

/// `P × F` bank of L1-normalized harmonic combs.
#[derive(Debug, Clone, PartialEq)]
pub struct CombPitchMatrix {
    pub pitch_grid: Vec<f64>,
    pub bins: usize,
    /// Row-major `P × F`.
    pub weights: Vec<f64>,
}

impl CombPitchMatrix {
    pub fn rows(&self) -> usize {
        self.pitch_grid.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.bins..(r + 1) * self.bins]
    }

    /// Index of the candidate closest to `hz`.
    pub fn nearest(&self, hz: f64) -> usize {
        let mut best = 0;
        for (i, &p) in self.pitch_grid.iter().enumerate() {
            if (p - hz).abs() < (self.pitch_grid[best] - hz).abs() {
                best = i;
            }
        }
        best
    }

    pub fn to_tensor<R: Real>(&self) -> Tensor<R> {
        Tensor::new(
            &[self.rows(), self.bins],
            self.weights.iter().map(|&w| R::from_f64(w)).collect(),
        )
        .expect("comb shape")
    }

    /// `F × P` transpose, the right operand for salience products.
    pub fn transposed_tensor<R: Real>(&self) -> Tensor<R> {
        let (p, f) = (self.rows(), self.bins);
        let mut data = vec![R::zero(); p * f];
        for r in 0..p {
            for k in 0..f {
                data[k * p + r] = R::from_f64(self.weights[r * f + k]);
            }
        }
        Tensor::new(&[f, p], data).expect("comb shape")
    }
}

/// `n` log-spaced frequencies from `lo` to `hi` inclusive.
pub fn log_pitch_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let ratio = hi / lo;
    (0..n)
        .map(|i| lo * num_traits::Float::powf(ratio, i as f64 / (n - 1) as f64))
        .collect()
}

/// Places a unit-peak triangle at the fractional bin of every harmonic
/// below Nyquist (split linearly across the two neighbouring bins), then
/// L1-normalizes each row.
pub fn build_comb_matrix(
    pitch_grid: &[f64],
    bins: usize,
    fs: f64,
    fft_size: usize,
    k_max: usize,
) -> Result<CombPitchMatrix> {
    if pitch_grid.is_empty() {
        return Err(Error::Config("pitch grid is empty".into()));
    }
    if k_max == 0 {
        return Err(Error::Config("k_max must be at least 1".into()));
    }
    if pitch_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "pitch grid must be strictly ascending".into(),
        ));
    }
    if pitch_grid.iter().any(|&p| !(50.0..=500.0).contains(&p)) {
        return Err(Error::Config(
            "pitch candidates must lie in [50, 500] Hz".into(),
        ));
    }
    let bin_hz = fs / fft_size as f64;
    let nyquist = fs / 2.0;
    let mut weights = vec![0.0; pitch_grid.len() * bins];
    for (r, &f0) in pitch_grid.iter().enumerate() {
        let row = &mut weights[r * bins..(r + 1) * bins];
        for k in 1..=k_max {
            let hz = k as f64 * f0;
            if hz >= nyquist {
                break;
            }
            let pos = hz / bin_hz;
            let lo = num_traits::Float::floor(pos) as usize;
            let frac = pos - lo as f64;
            if lo < bins {
                row[lo] += 1.0 - frac;
            }
            if frac > 0.0 && lo + 1 < bins {
                row[lo + 1] += frac;
            }
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|w| *w /= total);
        }
    }
    Ok(CombPitchMatrix {
        pitch_grid: pitch_grid.to_vec(),
        bins,
        weights,
    })
}

impl UieConfig {
    pub fn comb(&self, bins: usize, fs: f64, fft_size: usize) -> Result<CombPitchMatrix> {
        let grid = log_pitch_grid(self.pitch_min, self.pitch_max, self.pitch_bins);
        build_comb_matrix(&grid, bins, fs, fft_size, self.kmax)
    }
}

/// Per-frame comb salience `s[t, r] = Σ_f comb[r, f]·mag[t, f]` for a
/// `T × F` magnitude array.
pub fn salience(mag: &[f64], frames: usize, comb: &CombPitchMatrix) -> Vec<f64> {
    let (p, f) = (comb.rows(), comb.bins);
    let mut s = vec![0.0; frames * p];
    for t in 0..frames {
        let m = &mag[t * f..(t + 1) * f];
        for r in 0..p {
            s[t * p + r] = comb.row(r).iter().zip(m).map(|(w, v)| w * v).sum();
        }
    }
    s
}

/// Attention weights over candidates for one frame of salience. Salience is
/// divided by its mean over candidates before the temperature is applied, so
/// the weights do not depend on the input level.
pub fn attention_weights(s: &[f64], temperature: f64) -> Vec<f64> {
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let z: Vec<f64> = s
        .iter()
        .map(|&v| v / (mean + SALIENCE_EPS) / temperature)
        .collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| num_traits::Float::exp(v - m)).collect();
    let tot: f64 = e.iter().sum();
    e.into_iter().map(|v| v / tot).collect()
}

/// Graph version of the comb attention: returns the `T × F` harmonic
/// template for a `T × 2F` spectrum.
pub fn harmonic_template<R: Real>(
    g: &mut Graph<R>,
    spec: Var,
    comb_t: Var,
    comb: Var,
    temperature: f64,
) -> Result<Var> {
    let s = g.shape(spec).to_vec();
    if s.len() != 2 || !s[1].is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "harmonic attention: spectrum shape {s:?}"
        )));
    }
    let (t, f) = (s[0], s[1] / 2);
    if g.shape(comb_t)[0] != f {
        return Err(Error::Shape(format!(
            "harmonic attention: comb has {} bins, spectrum has {f}",
            g.shape(comb_t)[0]
        )));
    }
    let re = g.slice(spec, 1, 0, f)?;
    let im = g.slice(spec, 1, f, f)?;
    let re2 = g.square(re)?;
    let im2 = g.square(im)?;
    let pow = g.add(re2, im2)?;
    let pow = g.add_scalar(pow, R::from_f64(MAG_EPS))?;
    let mag = g.sqrt(pow)?;
    let sal = g.matmul(mag, comb_t)?;
    let p = g.shape(sal)[1];
    let mean = g.mean_axis(sal, 1)?;
    let mean = g.add_scalar(mean, R::from_f64(SALIENCE_EPS))?;
    let mean = g.reshape(mean, &[t, 1])?;
    let mean = g.broadcast_to(mean, &[t, p])?;
    let norm = g.div(sal, mean)?;
    let logits = g.scale(norm, R::from_f64(1.0 / temperature))?;
    let alpha = g.softmax(logits, 1)?;
    g.matmul(alpha, comb)
}

/// Parameters of the projection from (re, im, template) to the flow channels.
pub fn init_params<R: Real>(
    store: &mut ParamStore<R>,
    channels: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.init_uniform("uie.proj.w", &[channels, 3, 3, 3], 3 * 3 * 3, rng)?;
    store.init_zeros("uie.proj.b", &[channels])
}

pub fn param_count(channels: usize) -> usize {
    channels * 27 + channels
}

/// Flow `a` with shape `T × C × F` from a `T × 2F` noisy spectrum, computed
/// from its compressed planes and the harmonic template.
pub fn harmonic_attention<R: Real>(
    g: &mut Graph<R>,
    b: &Bindings,
    x: Var,
    comb_t: Var,
    comb: Var,
    temperature: f64,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (t, f) = (s[0], s[1] / 2);
    let h = harmonic_template(g, x, comb_t, comb, temperature)?;
    // the template sums to one per frame; scale it to unit mean per bin
    let h = g.scale(h, R::from_f64(f as f64))?;
    let h = g.reshape(h, &[t, 1, f])?;
    let xc = compress(g, x, f)?;
    let xr = g.reshape(xc, &[t, 2, f])?;
    let stacked = g.concat(&[xr, h], 1)?;
    let w = b.get("uie.proj.w")?;
    let bias = b.get("uie.proj.b")?;
    g.conv2d(stacked, w, Some(bias), ConvGeom::causal(3, 3, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comb_default() -> CombPitchMatrix {
        UieConfig::default().comb(257, 16000.0, 512).unwrap()
    }

    #[test]
    fn integer_bin_pitch_lands_on_multiples_of_four() {
        let c = build_comb_matrix(&[125.0], 257, 16000.0, 512, 16).unwrap();
        let nz: Vec<usize> = (0..257).filter(|&k| c.row(0)[k] != 0.0).collect();
        let expected: Vec<usize> = (1..=16).map(|k| 4 * k).collect();
        assert_eq!(nz, expected);
        for &k in &nz {
            assert!((c.row(0)[k] - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn fractional_bin_split() {
        // 110 / 31.25 = 3.52: 0.48 on bin 3, 0.52 on bin 4 before normalization
        let c = build_comb_matrix(&[110.0], 257, 16000.0, 512, 1).unwrap();
        assert!((c.row(0)[3] - 0.48).abs() < 1e-12);
        assert!((c.row(0)[4] - 0.52).abs() < 1e-12);
        let c16 = build_comb_matrix(&[110.0], 257, 16000.0, 512, 16).unwrap();
        assert!((c16.row(0)[3] / c16.row(0)[4] - 0.48 / 0.52).abs() < 1e-12);
    }

    #[test]
    fn rows_are_l1_normalized_and_supported_near_harmonics() {
        let c = comb_default();
        assert_eq!(c.rows(), 64);
        for r in 0..c.rows() {
            assert!((c.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(c.row(r).iter().all(|&w| w >= 0.0));
            let f0 = c.pitch_grid[r];
            for (k, &w) in c.row(r).iter().enumerate() {
                if w > 0.0 {
                    let hz = k as f64 * 31.25;
                    let near = (1..=16).any(|h| (hz - h as f64 * f0).abs() < 31.25);
                    assert!(near, "row {r} bin {k}");
                }
            }
        }
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = log_pitch_grid(50.0, 500.0, 64);
        assert!((g[0] - 50.0).abs() < 1e-12 && (g[63] - 500.0).abs() < 1e-9);
        let r = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_grid_is_config_error() {
        assert!(matches!(
            build_comb_matrix(&[], 257, 16000.0, 512, 16),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn low_temperature_is_one_hot() {
        let s = [0.3, 0.9, 0.5, 0.1];
        let a = attention_weights(&s, 1e-3);
        assert!((a[1] - 1.0).abs() < 1e-12);
        assert!(a[0] < 1e-12 && a[2] < 1e-12 && a[3] < 1e-12);
    }

    #[test]
    fn salience_is_scale_equivariant() {
        let c = comb_default();
        let mag: Vec<f64> = (0..2 * 257)
            .map(|i| ((i * 37) % 101) as f64 / 10.0)
            .collect();
        let s1 = salience(&mag, 2, &c);
        let scaled: Vec<f64> = mag.iter().map(|v| v * 3.5).collect();
        let s2 = salience(&scaled, 2, &c);
        for (a, b) in s1.iter().zip(&s2) {
            assert!((a * 3.5 - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }
}
