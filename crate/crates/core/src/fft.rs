//! Iterative radix-2 FFT with precomputed twiddles.

use alloc::vec::Vec;

use crate::real::Real;

/// Complex FFT plan for a power-of-two length.
#[derive(Debug, Clone)]
pub struct Fft<R> {
    n: usize,
    cos: Vec<R>,
    sin: Vec<R>,
    bitrev: Vec<usize>,
}

impl<R: Real> Fft<R> {
    pub fn new(n: usize) -> Self {
        assert!(
            n.is_power_of_two() && n >= 2,
            "fft length must be a power of two"
        );
        let half = n / 2;
        let mut cos = Vec::with_capacity(half);
        let mut sin = Vec::with_capacity(half);
        for k in 0..half {
            let ang = -2.0 * core::f64::consts::PI * k as f64 / n as f64;
            cos.push(R::from_f64(num_traits::Float::cos(ang)));
            sin.push(R::from_f64(num_traits::Float::sin(ang)));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| i.reverse_bits() >> (usize::BITS - bits))
            .collect();
        Self {
            n,
            cos,
            sin,
            bitrev,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// In-place forward transform, `X[k] = Σ x[n] e^{-2πi kn/N}`.
    pub fn forward(&self, re: &mut [R], im: &mut [R]) {
        debug_assert_eq!(re.len(), self.n);
        debug_assert_eq!(im.len(), self.n);
        for i in 0..self.n {
            let j = self.bitrev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.n {
            let step = self.n / len;
            let half = len / 2;
            for start in (0..self.n).step_by(len) {
                for k in 0..half {
                    let wr = self.cos[k * step];
                    let wi = self.sin[k * step];
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }

    /// One-sided spectrum (`N/2 + 1` bins) of a real frame.
    pub fn rfft(&self, frame: &[R], out_re: &mut [R], out_im: &mut [R]) {
        let mut re: Vec<R> = frame.to_vec();
        let mut im = alloc::vec![R::zero(); self.n];
        self.forward(&mut re, &mut im);
        let bins = self.n / 2 + 1;
        out_re[..bins].copy_from_slice(&re[..bins]);
        out_im[..bins].copy_from_slice(&im[..bins]);
    }

    /// Real inverse of a one-sided spectrum. The imaginary parts of the DC
    /// and Nyquist bins are ignored.
    pub fn irfft(&self, spec_re: &[R], spec_im: &[R], out: &mut [R]) {
        let n = self.n;
        let half = n / 2;
        let mut re = alloc::vec![R::zero(); n];
        let mut im = alloc::vec![R::zero(); n];
        re[0] = spec_re[0];
        re[half] = spec_re[half];
        for k in 1..half {
            // conjugate of the Hermitian-extended spectrum, so a forward
            // transform computes the inverse
            re[k] = spec_re[k];
            im[k] = -spec_im[k];
            re[n - k] = spec_re[k];
            im[n - k] = spec_im[k];
        }
        self.forward(&mut re, &mut im);
        let scale = R::one() / R::from_f64(n as f64);
        for (o, r) in out.iter_mut().zip(re.iter()) {
            *o = *r * scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for k in 0..n {
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * core::f64::consts::PI * (k * t % n) as f64 / n as f64;
                re[k] += v * ang.cos();
                im[k] += v * ang.sin();
            }
        }
        (re, im)
    }

    #[test]
    fn matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &n in &[2usize, 8, 64, 512] {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (dr, di) = dft(&x);
            let plan = Fft::<f64>::new(n);
            let mut re = vec![0.0; n / 2 + 1];
            let mut im = vec![0.0; n / 2 + 1];
            plan.rfft(&x, &mut re, &mut im);
            for k in 0..=n / 2 {
                assert!((re[k] - dr[k]).abs() < 1e-9, "n={n} k={k}");
                assert!((im[k] - di[k]).abs() < 1e-9, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn irfft_inverts_rfft() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 512;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let plan = Fft::<f64>::new(n);
        let mut re = vec![0.0; n / 2 + 1];
        let mut im = vec![0.0; n / 2 + 1];
        plan.rfft(&x, &mut re, &mut im);
        let mut y = vec![0.0; n];
        plan.irfft(&re, &im, &mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
