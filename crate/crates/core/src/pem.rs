//! Pre-enhancement modules. Both variants map a `T × 2F` noisy spectrum to
//! a preliminary `T × 2F` estimate and are causal in time.
//!
//! | variant | layers | parameters (defaults) |
//! |---|---|---|
//! | mask | layer norm over log-magnitude, GRU(257→128), GRU(128→128), linear 128→257, sigmoid | 281 347 |
//! | crn | conv 2→8→16→32 (3×5, freq stride 2), per-bin GRU(32→64) + linear 64→32, transposed conv 32→16→8→2 with additive skips | 40 658 |

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::compute::{Bindings, ConvGeom, Graph, ParamStore, Var};
use crate::config::{PemConfig, PemKind};
use crate::error::{Error, Result};
use crate::real::Real;

/// Log-magnitude floor for the mask variant's features.
pub const LOG_FLOOR: f64 = 1e-10;
/// Magnitude exponent of the CRN's input features.
const COMPRESSION: f64 = 0.3;
const COMPRESS_FLOOR: f64 = 1e-12;
const KT: usize = 3;
const KF: usize = 5;

pub fn init_params<R: Real>(
    store: &mut ParamStore<R>,
    cfg: &PemConfig,
    bins: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    match cfg.kind {
        PemKind::Mask => init_mask(store, cfg.mask_hidden, bins, rng),
        PemKind::Crn => init_crn(store, cfg.crn_channels, cfg.crn_hidden, rng),
    }
}

fn init_gru<R: Real>(
    store: &mut ParamStore<R>,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.init_uniform(&format!("{prefix}.w_ih"), &[input, 3 * hidden], input, rng)?;
    store.init_uniform(
        &format!("{prefix}.w_hh"),
        &[hidden, 3 * hidden],
        hidden,
        rng,
    )?;
    store.init_zeros(&format!("{prefix}.b_ih"), &[3 * hidden])?;
    store.init_zeros(&format!("{prefix}.b_hh"), &[3 * hidden])
}

fn init_mask<R: Real>(
    store: &mut ParamStore<R>,
    hidden: usize,
    bins: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.init_ones("pem.mask.norm.gain", &[bins])?;
    store.init_zeros("pem.mask.norm.bias", &[bins])?;
    init_gru(store, "pem.mask.gru1", bins, hidden, rng)?;
    init_gru(store, "pem.mask.gru2", hidden, hidden, rng)?;
    store.init_uniform("pem.mask.head.w", &[hidden, bins], hidden, rng)?;
    store.init_zeros("pem.mask.head.b", &[bins])
}

fn init_crn<R: Real>(
    store: &mut ParamStore<R>,
    ch: [usize; 3],
    hidden: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let enc_in = [2, ch[0], ch[1]];
    for i in 0..3 {
        let (ci, co) = (enc_in[i], ch[i]);
        store.init_uniform(
            &format!("pem.crn.enc{}.w", i + 1),
            &[co, ci, KT, KF],
            ci * KT * KF,
            rng,
        )?;
        store.init_zeros(&format!("pem.crn.enc{}.b", i + 1), &[co])?;
    }
    init_gru(store, "pem.crn.gru", ch[2], hidden, rng)?;
    store.init_uniform("pem.crn.proj.w", &[hidden, ch[2]], hidden, rng)?;
    store.init_zeros("pem.crn.proj.b", &[ch[2]])?;
    // decoder k maps ch[k] back to the width below it
    let dec_out = [2, ch[0], ch[1]];
    for i in 0..3 {
        let (ci, co) = (ch[i], dec_out[i]);
        store.init_uniform(
            &format!("pem.crn.dec{}.w", i + 1),
            &[co, ci, KT, KF],
            ci * KT * KF,
            rng,
        )?;
        store.init_zeros(&format!("pem.crn.dec{}.b", i + 1), &[co])?;
    }
    // the mask starts near 1 + 0j so the untrained network roughly passes X through
    if let Some(b) = store.get_mut("pem.crn.dec1.b") {
        b.data_mut()[0] = R::one();
    }
    Ok(())
}

/// Parameter count implied by the architecture, for cross-checking stores.
pub fn param_count(cfg: &PemConfig, bins: usize) -> usize {
    let gru = |i: usize, h: usize| 3 * h * (i + h) + 6 * h;
    match cfg.kind {
        PemKind::Mask => {
            let h = cfg.mask_hidden;
            2 * bins + gru(bins, h) + gru(h, h) + h * bins + bins
        }
        PemKind::Crn => {
            let ch = cfg.crn_channels;
            let conv = |ci: usize, co: usize| co * ci * KT * KF + co;
            let enc = conv(2, ch[0]) + conv(ch[0], ch[1]) + conv(ch[1], ch[2]);
            let dec = conv(ch[0], 2) + conv(ch[1], ch[0]) + conv(ch[2], ch[1]);
            enc + gru(ch[2], cfg.crn_hidden) + cfg.crn_hidden * ch[2] + ch[2] + dec
        }
    }
}

pub fn forward<R: Real>(g: &mut Graph<R>, b: &Bindings, cfg: &PemConfig, x: Var) -> Result<Var> {
    let s = g.shape(x);
    if s.len() != 2 || s[0] < 1 || !s[1].is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "pre-enhancement input must be T × 2F with T ≥ 1, got {s:?}"
        )));
    }
    match cfg.kind {
        PemKind::Mask => mask_forward(g, b, x),
        PemKind::Crn => crn_forward(g, b, x),
    }
}

fn gru_layer<R: Real>(g: &mut Graph<R>, b: &Bindings, prefix: &str, x: Var) -> Result<Var> {
    let w_ih = b.get(&format!("{prefix}.w_ih"))?;
    let w_hh = b.get(&format!("{prefix}.w_hh"))?;
    let b_ih = b.get(&format!("{prefix}.b_ih"))?;
    let b_hh = b.get(&format!("{prefix}.b_hh"))?;
    g.gru(x, w_ih, w_hh, b_ih, b_hh)
}

/// Magnitude mask over the noisy spectrum; the output keeps the noisy phase.
pub fn mask_forward<R: Real>(g: &mut Graph<R>, b: &Bindings, x: Var) -> Result<Var> {
    let (t, f2) = (g.shape(x)[0], g.shape(x)[1]);
    let f = f2 / 2;
    let gain = b.get("pem.mask.norm.gain")?;
    if g.shape(gain) != [f] {
        return Err(Error::Shape(format!(
            "mask parameters expect {} bins, input has {f}",
            g.shape(gain)[0]
        )));
    }
    // ½·ln(|X|² + floor²) ≈ ln max(|X|, floor)
    let re = g.slice(x, 1, 0, f)?;
    let im = g.slice(x, 1, f, f)?;
    let re2 = g.square(re)?;
    let im2 = g.square(im)?;
    let p = g.add(re2, im2)?;
    let p = g.add_scalar(p, R::from_f64(LOG_FLOOR * LOG_FLOOR))?;
    let lp = g.log(p)?;
    let feats = g.scale(lp, R::from_f64(0.5))?;
    let norm = g.layer_norm(feats, gain, b.get("pem.mask.norm.bias")?, R::from_f64(1e-5))?;
    let h = g.reshape(norm, &[t, 1, f])?;
    let h = gru_layer(g, b, "pem.mask.gru1", h)?;
    let h = gru_layer(g, b, "pem.mask.gru2", h)?;
    let hidden = g.shape(h)[2];
    let h = g.reshape(h, &[t, hidden])?;
    let logits = g.matmul(h, b.get("pem.mask.head.w")?)?;
    let logits = g.add_bcast(logits, b.get("pem.mask.head.b")?)?;
    let m = g.sigmoid(logits)?;
    let m2 = g.concat(&[m, m], 1)?;
    g.mul(m2, x)
}

fn conv<R: Real>(
    g: &mut Graph<R>,
    b: &Bindings,
    name: &str,
    x: Var,
    stride_f: usize,
) -> Result<Var> {
    let w = b.get(&format!("{name}.w"))?;
    let bias = b.get(&format!("{name}.b"))?;
    g.conv2d(x, w, Some(bias), ConvGeom::causal(KT, KF, stride_f))
}

/// Encoder–recurrence–decoder over the compressed noisy spectrum. The two
/// decoded planes are the real and imaginary parts of a complex ratio mask
/// applied to the noisy spectrum.
pub fn crn_forward<R: Real>(g: &mut Graph<R>, b: &Bindings, x: Var) -> Result<Var> {
    let (t, f2) = (g.shape(x)[0], g.shape(x)[1]);
    let f = f2 / 2;
    let xc = compress(g, x, f)?;
    let x3 = g.reshape(xc, &[t, 2, f])?;
    let mut skips = Vec::with_capacity(3);
    let mut h = x3;
    for i in 1..=3 {
        let c = conv(g, b, &format!("pem.crn.enc{i}"), h, 2)?;
        h = g.elu(c)?;
        skips.push(h);
    }
    let (c3, f3) = (g.shape(h)[1], g.shape(h)[2]);
    // one recurrence per downsampled frequency position, shared weights
    let seq = g.permute(h, &[0, 2, 1])?;
    let r = gru_layer(g, b, "pem.crn.gru", seq)?;
    let hidden = g.shape(r)[2];
    let r = g.reshape(r, &[t * f3, hidden])?;
    let r = g.matmul(r, b.get("pem.crn.proj.w")?)?;
    let r = g.add_bcast(r, b.get("pem.crn.proj.b")?)?;
    let r = g.reshape(r, &[t, f3, c3])?;
    let mut d = g.permute(r, &[0, 2, 1])?;
    for i in (1..=3).rev() {
        let skip = skips[i - 1];
        let merged = g.add(d, skip)?;
        let up = g.upsample_last(merged, 2)?;
        let c = conv(g, b, &format!("pem.crn.dec{i}"), up, 1)?;
        d = if i > 1 { g.elu(c)? } else { c };
    }
    let fo = g.shape(d)[2];
    if fo != f {
        return Err(Error::Shape(format!(
            "crn needs F = 8k + 1 bins so the decoder restores them; got {f}, decoded {fo}"
        )));
    }
    let m = g.reshape(d, &[t, f2])?;
    complex_mul(g, m, x, f)
}

/// Power-law compressed spectrum `X·|X|^(c−1)`: magnitude `|X|^c`, phase kept.
pub(crate) fn compress<R: Real>(g: &mut Graph<R>, x: Var, f: usize) -> Result<Var> {
    let re = g.slice(x, 1, 0, f)?;
    let im = g.slice(x, 1, f, f)?;
    let re2 = g.square(re)?;
    let im2 = g.square(im)?;
    let p = g.add(re2, im2)?;
    let p = g.add_scalar(p, R::from_f64(COMPRESS_FLOOR))?;
    let lp = g.log(p)?;
    let e = g.scale(lp, R::from_f64((COMPRESSION - 1.0) / 2.0))?;
    let s = g.exp(e)?;
    let s2 = g.concat(&[s, s], 1)?;
    g.mul(x, s2)
}

/// Element-wise complex product of two `T × 2F` spectra.
pub(crate) fn complex_mul<R: Real>(g: &mut Graph<R>, a: Var, b: Var, f: usize) -> Result<Var> {
    let (ar, ai) = (g.slice(a, 1, 0, f)?, g.slice(a, 1, f, f)?);
    let (br, bi) = (g.slice(b, 1, 0, f)?, g.slice(b, 1, f, f)?);
    let rr = g.mul(ar, br)?;
    let ii = g.mul(ai, bi)?;
    let ri = g.mul(ar, bi)?;
    let ir = g.mul(ai, br)?;
    let re = g.sub(rr, ii)?;
    let im = g.add(ri, ir)?;
    g.concat(&[re, im], 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spec(t: usize, f: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            &[t, 2 * f],
            (0..t * 2 * f)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        )
        .unwrap()
    }

    fn store(kind: PemKind) -> (PemConfig, ParamStore<f64>) {
        let cfg = PemConfig {
            kind,
            ..PemConfig::default()
        };
        let mut p = ParamStore::new();
        init_params(&mut p, &cfg, 257, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (cfg, p)
    }

    #[test]
    fn param_counts_match_table() {
        let (cfg, p) = store(PemKind::Crn);
        assert_eq!(p.num_scalars(), 40_658);
        assert_eq!(param_count(&cfg, 257), 40_658);
        let (cfg, p) = store(PemKind::Mask);
        assert_eq!(p.num_scalars(), 281_347);
        assert_eq!(param_count(&cfg, 257), 281_347);
    }

    #[test]
    fn crn_shape_contract() {
        let (cfg, p) = store(PemKind::Crn);
        let mut g = Graph::new();
        let b = p.bind(&mut g).unwrap();
        let x = g.constant(random_spec(41, 257, 2)).unwrap();
        let y = forward(&mut g, &b, &cfg, x).unwrap();
        assert_eq!(g.shape(y), &[41, 514]);
    }

    #[test]
    fn mask_bounded_and_phase_preserving() {
        let (cfg, p) = store(PemKind::Mask);
        let mut g = Graph::new();
        let b = p.bind(&mut g).unwrap();
        let mut spec = random_spec(6, 257, 3);
        // one silent frame
        for v in &mut spec.data_mut()[2 * 514..3 * 514] {
            *v = 0.0;
        }
        let x = g.constant(spec.clone()).unwrap();
        let y = forward(&mut g, &b, &cfg, x).unwrap();
        let (xs, ys) = (spec.data(), g.value(y).data());
        for t in 0..6 {
            for k in 0..257 {
                let (xr, xi) = (xs[t * 514 + k], xs[t * 514 + 257 + k]);
                let (yr, yi) = (ys[t * 514 + k], ys[t * 514 + 257 + k]);
                assert!(yr.hypot(yi) <= xr.hypot(xi) + 1e-12);
                if xr.hypot(xi) > 0.0 {
                    let d = (yi.atan2(yr) - xi.atan2(xr)).abs();
                    assert!(d < 1e-6, "phase moved by {d}");
                }
                if t == 2 {
                    assert_eq!(yr.hypot(yi), 0.0);
                }
            }
        }
    }

    #[test]
    fn crn_is_causal() {
        let (cfg, p) = store(PemKind::Crn);
        let base = random_spec(12, 257, 5);
        let mut changed = base.clone();
        let t0 = 7;
        for v in &mut changed.data_mut()[t0 * 514..(t0 + 1) * 514] {
            *v += 1.0;
        }
        let run = |s: Tensor<f64>| {
            let mut g = Graph::new();
            let b = p.bind(&mut g).unwrap();
            let x = g.constant(s).unwrap();
            let y = forward(&mut g, &b, &cfg, x).unwrap();
            g.value(y).clone()
        };
        let (a, c) = (run(base), run(changed));
        assert_eq!(&a.data()[..t0 * 514], &c.data()[..t0 * 514]);
        assert_ne!(
            &a.data()[t0 * 514..(t0 + 1) * 514],
            &c.data()[t0 * 514..(t0 + 1) * 514]
        );
    }

    #[test]
    fn wrong_bin_count_is_shape_error() {
        let (cfg, p) = store(PemKind::Mask);
        let mut g = Graph::new();
        let b = p.bind(&mut g).unwrap();
        let x = g.constant(random_spec(3, 129, 1)).unwrap();
        assert!(matches!(forward(&mut g, &b, &cfg, x), Err(Error::Shape(_))));
    }
}
