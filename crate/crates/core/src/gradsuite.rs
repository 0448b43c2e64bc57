//! Finite-difference checks of every graph operation and of the model
//! components built from them. Each case reduces its output to a scalar
//! with fixed random weights and compares analytic gradients against
//! central differences in f64.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compute::{
    grad_check, Bindings, ConvGeom, GradCheckOptions, GradCheckReport, Graph, ParamStore, Tensor,
    Var,
};
use crate::config::{PemConfig, PemKind, UieConfig};
use crate::error::Result;
use crate::mri::{self, RefineContext};
use crate::objective::{perceptual_loss_graph, si_snr_loss, BarkBands};
use crate::spectral::{ComplexSpectrum, StftConfig};
use crate::{pem, uie};

/// Tolerance and step used by the suites.
pub fn suite_options() -> GradCheckOptions {
    GradCheckOptions {
        eps: 1e-4,
        tol: 1e-4,
        samples: 16,
        seed: 0,
        abs_floor: 1e-6,
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Values in `±[0.2, 1]`, away from the kinks of relu and elu.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.2..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// `Σ w ⊙ y` with weights drawn from the output shape and `salt`.
fn project(g: &mut Graph<f64>, y: Var, salt: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = uniform(
        &mut ChaCha8Rng::seed_from_u64(0x5eed ^ salt),
        &shape,
        -1.0,
        1.0,
    );
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn store(items: Vec<(&str, Tensor<f64>)>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (n, t) in items {
        s.insert(n, t).expect("unique parameter names");
    }
    s
}

fn check<F>(
    name: &'static str,
    params: &ParamStore<f64>,
    opts: GradCheckOptions,
    f: F,
) -> Result<CaseResult>
where
    F: Fn(&mut Graph<f64>, &Bindings) -> Result<Var>,
{
    Ok(CaseResult {
        name,
        report: grad_check(f, params, opts)?,
    })
}

/// One case per graph operation.
pub fn primitive_suite(opts: GradCheckOptions) -> Result<Vec<CaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37);
    let r = &mut rng;
    let mut out = Vec::new();

    let ab = store(vec![
        ("a", uniform(r, &[3, 4], -1.0, 1.0)),
        ("b", uniform(r, &[3, 4], -1.0, 1.0)),
    ]);
    out.push(check("add", &ab, opts, |g, b| {
        let y = g.add(b.get("a")?, b.get("b")?)?;
        project(g, y, 1)
    })?);
    out.push(check("sub", &ab, opts, |g, b| {
        let y = g.sub(b.get("a")?, b.get("b")?)?;
        project(g, y, 2)
    })?);
    out.push(check("mul", &ab, opts, |g, b| {
        let y = g.mul(b.get("a")?, b.get("b")?)?;
        project(g, y, 3)
    })?);
    let pos = store(vec![
        ("a", uniform(r, &[3, 4], -1.0, 1.0)),
        ("b", uniform(r, &[3, 4], 0.5, 2.0)),
    ]);
    out.push(check("div", &pos, opts, |g, b| {
        let y = g.div(b.get("a")?, b.get("b")?)?;
        project(g, y, 4)
    })?);

    let a = store(vec![("a", uniform(r, &[2, 5], -1.0, 1.0))]);
    out.push(check("scale", &a, opts, |g, b| {
        let y = g.scale(b.get("a")?, -2.5)?;
        project(g, y, 5)
    })?);
    out.push(check("add_scalar", &a, opts, |g, b| {
        let y = g.add_scalar(b.get("a")?, 0.75)?;
        let y = g.square(y)?;
        project(g, y, 6)
    })?);
    out.push(check("square", &a, opts, |g, b| {
        let y = g.square(b.get("a")?)?;
        project(g, y, 7)
    })?);
    out.push(check("sigmoid", &a, opts, |g, b| {
        let y = g.sigmoid(b.get("a")?)?;
        project(g, y, 8)
    })?);
    out.push(check("tanh", &a, opts, |g, b| {
        let y = g.tanh(b.get("a")?)?;
        project(g, y, 9)
    })?);
    out.push(check("exp", &a, opts, |g, b| {
        let y = g.exp(b.get("a")?)?;
        project(g, y, 10)
    })?);

    let kinked = store(vec![("a", signed(r, &[3, 6]))]);
    out.push(check("relu", &kinked, opts, |g, b| {
        let y = g.relu(b.get("a")?)?;
        project(g, y, 11)
    })?);
    out.push(check("elu", &kinked, opts, |g, b| {
        let y = g.elu(b.get("a")?)?;
        project(g, y, 12)
    })?);

    let positive = store(vec![("a", uniform(r, &[3, 6], 0.3, 2.0))]);
    out.push(check("log", &positive, opts, |g, b| {
        let y = g.log(b.get("a")?)?;
        project(g, y, 13)
    })?);
    out.push(check("sqrt", &positive, opts, |g, b| {
        let y = g.sqrt(b.get("a")?)?;
        project(g, y, 14)
    })?);

    let bc = store(vec![
        ("a", uniform(r, &[2, 3, 4], -1.0, 1.0)),
        ("b", uniform(r, &[3, 1], -1.0, 1.0)),
    ]);
    out.push(check("broadcast_to", &bc, opts, |g, b| {
        let y = g.broadcast_to(b.get("b")?, &[2, 3, 4])?;
        project(g, y, 15)
    })?);
    out.push(check("add_bcast", &bc, opts, |g, b| {
        let y = g.add_bcast(b.get("a")?, b.get("b")?)?;
        let y = g.square(y)?;
        project(g, y, 16)
    })?);
    out.push(check("mul_bcast", &bc, opts, |g, b| {
        let y = g.mul_bcast(b.get("a")?, b.get("b")?)?;
        project(g, y, 17)
    })?);

    let mm = store(vec![
        ("a", uniform(r, &[3, 5], -1.0, 1.0)),
        ("b", uniform(r, &[5, 4], -1.0, 1.0)),
    ]);
    out.push(check("matmul", &mm, opts, |g, b| {
        let y = g.matmul(b.get("a")?, b.get("b")?)?;
        project(g, y, 18)
    })?);

    let conv = store(vec![
        ("x", uniform(r, &[5, 2, 9], -1.0, 1.0)),
        ("w", uniform(r, &[3, 2, 3, 5], -0.5, 0.5)),
        ("b", uniform(r, &[3], -0.5, 0.5)),
    ]);
    out.push(check("conv2d", &conv, opts, |g, b| {
        let y = g.conv2d(
            b.get("x")?,
            b.get("w")?,
            Some(b.get("b")?),
            ConvGeom::causal(3, 5, 1),
        )?;
        project(g, y, 19)
    })?);
    out.push(check("conv2d_strided", &conv, opts, |g, b| {
        let y = g.conv2d(
            b.get("x")?,
            b.get("w")?,
            Some(b.get("b")?),
            ConvGeom::causal(3, 5, 2),
        )?;
        project(g, y, 20)
    })?);
    out.push(check("conv2d_unpadded", &conv, opts, |g, b| {
        let geom = ConvGeom {
            stride_t: 2,
            stride_f: 1,
            pad_t: (0, 0),
            pad_f: (0, 0),
        };
        let y = g.conv2d(b.get("x")?, b.get("w")?, None, geom)?;
        project(g, y, 21)
    })?);
    let up = store(vec![("x", uniform(r, &[2, 3, 4], -1.0, 1.0))]);
    out.push(check("upsample_last", &up, opts, |g, b| {
        let y = g.upsample_last(b.get("x")?, 2)?;
        project(g, y, 22)
    })?);

    let sm = store(vec![("a", uniform(r, &[3, 5], -2.0, 2.0))]);
    out.push(check("softmax_rows", &sm, opts, |g, b| {
        let y = g.softmax(b.get("a")?, 1)?;
        project(g, y, 23)
    })?);
    out.push(check("softmax_cols", &sm, opts, |g, b| {
        let y = g.softmax(b.get("a")?, 0)?;
        project(g, y, 24)
    })?);
    let ln = store(vec![
        ("x", uniform(r, &[4, 6], -1.0, 1.0)),
        ("gain", uniform(r, &[6], 0.5, 1.5)),
        ("bias", uniform(r, &[6], -0.5, 0.5)),
    ]);
    out.push(check("layer_norm", &ln, opts, |g, b| {
        let y = g.layer_norm(b.get("x")?, b.get("gain")?, b.get("bias")?, 1e-5)?;
        project(g, y, 25)
    })?);

    let shp = store(vec![
        ("a", uniform(r, &[2, 3, 4], -1.0, 1.0)),
        ("b", uniform(r, &[2, 2, 4], -1.0, 1.0)),
    ]);
    out.push(check("concat", &shp, opts, |g, b| {
        let y = g.concat(&[b.get("a")?, b.get("b")?], 1)?;
        project(g, y, 26)
    })?);
    out.push(check("slice", &shp, opts, |g, b| {
        let y = g.slice(b.get("a")?, 2, 1, 2)?;
        project(g, y, 27)
    })?);
    out.push(check("reshape", &shp, opts, |g, b| {
        let y = g.reshape(b.get("a")?, &[6, 4])?;
        project(g, y, 28)
    })?);
    out.push(check("permute", &shp, opts, |g, b| {
        let y = g.permute(b.get("a")?, &[2, 0, 1])?;
        project(g, y, 29)
    })?);
    out.push(check("transpose", &mm, opts, |g, b| {
        let y = g.transpose(b.get("a")?)?;
        project(g, y, 30)
    })?);
    out.push(check("sum_axis", &shp, opts, |g, b| {
        let y = g.sum_axis(b.get("a")?, 1)?;
        project(g, y, 31)
    })?);
    out.push(check("mean_axis", &shp, opts, |g, b| {
        let y = g.mean_axis(b.get("a")?, 2)?;
        project(g, y, 32)
    })?);
    out.push(check("sum_mean", &shp, opts, |g, b| {
        let s = g.sum(b.get("a")?)?;
        let m = g.mean(b.get("b")?)?;
        let p = g.mul(s, m)?;
        g.square(p)
    })?);

    let (input, hidden) = (3, 4);
    let gru = store(vec![
        ("x", uniform(r, &[5, 2, input], -1.0, 1.0)),
        ("w_ih", uniform(r, &[input, 3 * hidden], -0.6, 0.6)),
        ("w_hh", uniform(r, &[hidden, 3 * hidden], -0.6, 0.6)),
        ("b_ih", uniform(r, &[3 * hidden], -0.3, 0.3)),
        ("b_hh", uniform(r, &[3 * hidden], -0.3, 0.3)),
    ]);
    out.push(check("gru", &gru, opts, |g, b| {
        let y = g.gru(
            b.get("x")?,
            b.get("w_ih")?,
            b.get("w_hh")?,
            b.get("b_ih")?,
            b.get("b_hh")?,
        )?;
        project(g, y, 33)
    })?);

    let stft = StftConfig::default();
    let frames = 4;
    let len = stft.window_len + (frames - 1) * stft.hop;
    let spec = store(vec![(
        "x",
        uniform(r, &[frames, 2 * stft.bins()], -1.0, 1.0),
    )]);
    out.push(check("istft", &spec, opts, |g, b| {
        let y = g.istft(b.get("x")?, &stft, len)?;
        project(g, y, 34)
    })?);
    Ok(out)
}

const SMALL_BINS: usize = 33;
const SMALL_FFT: usize = 64;
const FRAMES: usize = 5;

fn randomize(params: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, spread: f64) {
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-spread..spread);
        }
    }
}

fn pem_case(kind: PemKind, opts: GradCheckOptions, rng: &mut ChaCha8Rng) -> Result<CaseResult> {
    let cfg = PemConfig {
        kind,
        mask_hidden: 8,
        ..PemConfig::default()
    };
    let mut params = ParamStore::new();
    pem::init_params(&mut params, &cfg, SMALL_BINS, rng)?;
    randomize(&mut params, rng, 0.05);
    params.insert("x", uniform(rng, &[FRAMES, 2 * SMALL_BINS], -1.0, 1.0))?;
    let name = match kind {
        PemKind::Mask => "pem_mask",
        PemKind::Crn => "pem_crn",
    };
    check(name, &params, opts, move |g, b| {
        let y = pem::forward(g, b, &cfg, b.get("x")?)?;
        project(g, y, 40)
    })
}

/// Both pre-enhancement variants, the comb attention, a two-block
/// refinement and both loss terms.
pub fn model_suite(opts: GradCheckOptions) -> Result<Vec<CaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7f4a);
    let r = &mut rng;
    let mut out = Vec::new();
    out.push(pem_case(PemKind::Mask, opts, r)?);
    out.push(pem_case(PemKind::Crn, opts, r)?);

    let ucfg = UieConfig::default();
    let comb = ucfg.comb(SMALL_BINS, 16000.0, SMALL_FFT)?;
    let channels = 4;
    let mut params = ParamStore::new();
    uie::init_params(&mut params, channels, r)?;
    params.insert("x", uniform(r, &[FRAMES, 2 * SMALL_BINS], -1.0, 1.0))?;
    let tau = ucfg.temperature;
    let (ct, c) = (comb.transposed_tensor::<f64>(), comb.to_tensor::<f64>());
    out.push(check("harmonic_attention", &params, opts, |g, b| {
        let comb_t = g.constant(ct.clone())?;
        let comb = g.constant(c.clone())?;
        let a = uie::harmonic_attention(g, b, b.get("x")?, comb_t, comb, tau)?;
        project(g, a, 41)
    })?);

    let n = 2;
    mri::init_params(&mut params, n, channels, SMALL_BINS, r)?;
    // the output projections start at zero; move every weight off its init
    randomize(&mut params, r, 0.2);
    params.insert("p", uniform(r, &[FRAMES, 2 * SMALL_BINS], -1.0, 1.0))?;
    out.push(check("refine", &params, opts, |g, b| {
        let comb_t = g.constant(ct.clone())?;
        let comb = g.constant(c.clone())?;
        let a = uie::harmonic_attention(g, b, b.get("x")?, comb_t, comb, tau)?;
        let ctx = RefineContext {
            comb_t,
            comb,
            temperature: tau,
        };
        let ledger = mri::refine(g, b, b.get("p")?, Some(a), n, &ctx)?;
        project(g, ledger.output, 42)
    })?);

    let len = 1024;
    let reference: Vec<f32> = (0..len).map(|_| r.random_range(-0.5f32..0.5)).collect();
    let est: Vec<f64> = reference
        .iter()
        .map(|&v| v as f64 + r.random_range(-0.3..0.3))
        .collect();
    let params = store(vec![("est", Tensor::new(&[len], est)?)]);
    out.push(check("si_snr_loss", &params, opts, |g, b| {
        si_snr_loss(g, b.get("est")?, &reference)
    })?);

    let bins = StftConfig::default().bins();
    let bands = BarkBands::new(24, bins, 16000.0)?;
    let frames = 3;
    let data = (0..frames * 2 * bins)
        .map(|_| r.random_range(-1.0f32..1.0))
        .collect();
    let reference = ComplexSpectrum::from_data(frames, bins, data)?;
    let params = store(vec![("est", uniform(r, &[frames, 2 * bins], -1.0, 1.0))]);
    out.push(check("perceptual_loss", &params, opts, |g, b| {
        perceptual_loss_graph(g, &bands, b.get("est")?, &reference)
    })?);
    Ok(out)
}
