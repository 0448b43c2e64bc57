//! Multiple refinement iterator.
//!
//! Refinement `i` sees the subtractive path input `r_i = p − f_0 − … − f_{i−1}`
//! together with the flow `a`, and emits `f_i`. The additive path forms the
//! output `p + f_0 + … + f_{N−1}`. Both sums are evaluated strictly left to
//! right, so the ledger identities hold bit-exactly.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::compute::{Bindings, ConvGeom, Graph, ParamStore, Var};
use crate::config::MAX_REFINEMENTS;
use crate::error::{Error, Result};
use crate::pem::{complex_mul, compress};
use crate::real::Real;
use crate::spectral::ComplexSpectrum;
use crate::uie::harmonic_template;

/// Vars of one dual-path evaluation on a graph.
#[derive(Debug, Clone)]
pub struct GraphLedger {
    pub p: Var,
    pub f: Vec<Var>,
    pub s_inputs: Vec<Var>,
    pub output: Var,
}

/// Runs the dual-path recursion with an arbitrary refinement function
/// `block(graph, i, r_i) -> f_i`.
pub fn dual_path<R: Real, F>(
    g: &mut Graph<R>,
    p: Var,
    n: usize,
    mut block: F,
) -> Result<GraphLedger>
where
    F: FnMut(&mut Graph<R>, usize, Var) -> Result<Var>,
{
    if n > MAX_REFINEMENTS {
        return Err(Error::Config(format!(
            "{n} refinements requested, at most {MAX_REFINEMENTS} allowed"
        )));
    }
    let mut f = Vec::with_capacity(n);
    let mut s_inputs = Vec::with_capacity(n);
    let mut residual = p;
    let mut output = p;
    for i in 0..n {
        s_inputs.push(residual);
        let fi = block(g, i, residual)?;
        if g.shape(fi) != g.shape(p) {
            return Err(Error::Shape(format!(
                "refinement {i} produced {:?}, expected {:?}",
                g.shape(fi),
                g.shape(p)
            )));
        }
        f.push(fi);
        output = g.add(output, fi)?;
        if i + 1 < n {
            residual = g.sub(residual, fi)?;
        }
    }
    Ok(GraphLedger {
        p,
        f,
        s_inputs,
        output,
    })
}

fn name(i: usize, part: &str) -> alloc::string::String {
    format!("mri.r{}.{part}", i + 1)
}

/// Parameters of `n` independent refinement blocks over `bins` frequency
/// bins. Output projections start at zero so an untrained refiner returns
/// `p` unchanged.
pub fn init_params<R: Real>(
    store: &mut ParamStore<R>,
    n: usize,
    channels: usize,
    bins: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    for i in 0..n {
        let cin = channels + 2;
        store.init_uniform(&name(i, "mix.w"), &[channels, cin, 1, 3], cin * 3, rng)?;
        store.init_zeros(&name(i, "mix.b"), &[channels])?;
        store.init_ones(&name(i, "gate.a"), &[channels, 1])?;
        store.init_zeros(&name(i, "gate.b"), &[channels, 1])?;
        store.init_uniform(&name(i, "freq.w"), &[bins, bins], bins, rng)?;
        store.init_uniform(
            &name(i, "fuse.w"),
            &[channels, 2 * channels, 1, 1],
            2 * channels,
            rng,
        )?;
        store.init_zeros(&name(i, "fuse.b"), &[channels])?;
        store.init_zeros(&name(i, "out.w"), &[2, channels, 3, 3])?;
        store.init_zeros(&name(i, "out.b"), &[2])?;
    }
    Ok(())
}

pub fn param_count(n: usize, channels: usize, bins: usize) -> usize {
    let c = channels;
    n * ((c * (c + 2) * 3 + c) + 2 * c + bins * bins + (2 * c * c + c) + (2 * c * 9 + 2))
}

/// Constants shared by every refinement block of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct RefineContext {
    pub comb_t: Var,
    pub comb: Var,
    pub temperature: f64,
}

/// One refinement block: channel-mixing convolution over the compressed
/// `[r_i; a]`, a per-channel gate driven by the comb-attention template of
/// `|r_i|`, a fully connected transform along frequency (shared by all
/// channels) fused back with a 1×1 convolution, and a convolution to two
/// planes that act as a complex mask on `r_i`.
pub fn refinement_block<R: Real>(
    g: &mut Graph<R>,
    b: &Bindings,
    i: usize,
    r: Var,
    a: Var,
    ctx: &RefineContext,
) -> Result<Var> {
    let (t, f2) = (g.shape(r)[0], g.shape(r)[1]);
    let f = f2 / 2;
    let sa = g.shape(a).to_vec();
    if sa.len() != 3 || sa[0] != t || sa[2] != f {
        return Err(Error::Shape(format!(
            "flow a {sa:?} does not match residual {t}×{f2}"
        )));
    }
    let c = sa[1];
    let rc = compress(g, r, f)?;
    let r3 = g.reshape(rc, &[t, 2, f])?;
    let x = g.concat(&[r3, a], 1)?;
    let mix = g.conv2d(
        x,
        b.get(&name(i, "mix.w"))?,
        Some(b.get(&name(i, "mix.b"))?),
        ConvGeom::causal(1, 3, 1),
    )?;
    let u = g.elu(mix)?;

    let h = harmonic_template(g, r, ctx.comb_t, ctx.comb, ctx.temperature)?;
    let h = g.scale(h, R::from_f64(f as f64))?;
    let h = g.reshape(h, &[t, 1, f])?;
    let h = g.broadcast_to(h, &[t, c, f])?;
    let gate = g.mul_bcast(h, b.get(&name(i, "gate.a"))?)?;
    let gate = g.add_bcast(gate, b.get(&name(i, "gate.b"))?)?;
    let gate = g.sigmoid(gate)?;
    let v = g.mul(u, gate)?;

    let flat = g.reshape(v, &[t * c, f])?;
    let w = g.matmul(flat, b.get(&name(i, "freq.w"))?)?;
    let w = g.reshape(w, &[t, c, f])?;
    let vw = g.concat(&[v, w], 1)?;
    let fused = g.conv2d(
        vw,
        b.get(&name(i, "fuse.w"))?,
        Some(b.get(&name(i, "fuse.b"))?),
        ConvGeom::causal(1, 1, 1),
    )?;
    let v = g.elu(fused)?;

    let out = g.conv2d(
        v,
        b.get(&name(i, "out.w"))?,
        Some(b.get(&name(i, "out.b"))?),
        ConvGeom::causal(3, 3, 1),
    )?;
    let m = g.reshape(out, &[t, f2])?;
    complex_mul(g, m, r, f)
}

/// Full refinement of `p` guided by `a`.
pub fn refine<R: Real>(
    g: &mut Graph<R>,
    b: &Bindings,
    p: Var,
    a: Option<Var>,
    n: usize,
    ctx: &RefineContext,
) -> Result<GraphLedger> {
    dual_path(g, p, n, |g, i, r| {
        let a = a.ok_or_else(|| Error::Shape("refinement requires the flow a".into()))?;
        refinement_block(g, b, i, r, a, ctx)
    })
}

/// Record of one refinement pass: preliminary estimate, per-iteration
/// refined information and subtractive inputs, and the final output.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementLedger {
    pub p: ComplexSpectrum,
    pub f: Vec<ComplexSpectrum>,
    pub s_inputs: Vec<ComplexSpectrum>,
    pub output: ComplexSpectrum,
}

impl RefinementLedger {
    pub fn from_graph<R: Real>(g: &Graph<R>, l: &GraphLedger) -> Result<Self> {
        let spec = |v: Var| -> Result<ComplexSpectrum> {
            let s = g.shape(v);
            ComplexSpectrum::from_data(s[0], s[1] / 2, g.value(v).to_f32())
        };
        Ok(Self {
            p: spec(l.p)?,
            f: l.f.iter().map(|&v| spec(v)).collect::<Result<_>>()?,
            s_inputs: l.s_inputs.iter().map(|&v| spec(v)).collect::<Result<_>>()?,
            output: spec(l.output)?,
        })
    }
}

/// Outcome of a successful ledger audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub iterations: usize,
    /// `‖f_i‖²` per iteration.
    pub refined_energy: Vec<f64>,
    /// `‖p − f_0 − … − f_i‖²` per iteration.
    pub residual_energy: Vec<f64>,
    pub s_path_ok: bool,
    pub a_path_ok: bool,
}

fn bits_equal(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn energy(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum()
}

/// Recomputes both path identities from `p` and the `f_i` with the same
/// left-to-right order and compares bit patterns.
pub fn audit_ledger(ledger: &RefinementLedger) -> Result<AuditReport> {
    let n = ledger.f.len();
    if ledger.s_inputs.len() != n {
        return Err(Error::Audit {
            iteration: 0,
            detail: format!(
                "{} refined terms but {} subtractive inputs",
                n,
                ledger.s_inputs.len()
            ),
        });
    }
    let p = &ledger.p.data;
    let mut residual = p.clone();
    let mut output = p.clone();
    let mut refined_energy = Vec::with_capacity(n);
    let mut residual_energy = Vec::with_capacity(n);
    for i in 0..n {
        if !bits_equal(&ledger.s_inputs[i].data, &residual) {
            return Err(Error::Audit {
                iteration: i.saturating_sub(1),
                detail: format!(
                    "S-path input {i} differs from p minus the preceding refined terms"
                ),
            });
        }
        let fi = &ledger.f[i].data;
        if fi.len() != p.len() {
            return Err(Error::Audit {
                iteration: i,
                detail: "refined term has the wrong size".into(),
            });
        }
        for ((r, o), &v) in residual.iter_mut().zip(output.iter_mut()).zip(fi) {
            *r -= v;
            *o += v;
        }
        refined_energy.push(energy(fi));
        residual_energy.push(energy(&residual));
    }
    if !bits_equal(&ledger.output.data, &output) {
        return Err(Error::Audit {
            iteration: n.saturating_sub(1),
            detail: "A-path output differs from p plus the refined terms".into(),
        });
    }
    Ok(AuditReport {
        iterations: n,
        refined_energy,
        residual_energy,
        s_path_ok: true,
        a_path_ok: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, t: usize, f: usize) -> Tensor<f32> {
        Tensor::new(
            &[t, 2 * f],
            (0..t * 2 * f)
                .map(|_| rng.random_range(-3.0f32..3.0))
                .collect(),
        )
        .unwrap()
    }

    fn injected(n: usize, seed: u64) -> RefinementLedger {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::<f32>::new();
        let p = g.constant(random(&mut rng, 4, 9)).unwrap();
        let fs: Vec<Tensor<f32>> = (0..n).map(|_| random(&mut rng, 4, 9)).collect();
        let l = dual_path(&mut g, p, n, |g, i, _| g.constant(fs[i].clone())).unwrap();
        RefinementLedger::from_graph(&g, &l).unwrap()
    }

    #[test]
    fn zero_refinements_returns_p() {
        let l = injected(0, 1);
        assert!(l.f.is_empty() && l.s_inputs.is_empty());
        assert_eq!(l.output, l.p);
        audit_ledger(&l).unwrap();
    }

    #[test]
    fn injected_terms_satisfy_identities() {
        for n in [1, 3, 8] {
            let l = injected(n, n as u64);
            // independent oracle: plain f32 left-to-right sums
            for i in 0..n {
                for k in 0..l.p.data.len() {
                    let mut r = l.p.data[k];
                    for j in 0..i {
                        r -= l.f[j].data[k];
                    }
                    assert_eq!(r.to_bits(), l.s_inputs[i].data[k].to_bits());
                }
            }
            for k in 0..l.p.data.len() {
                let mut o = l.p.data[k];
                for j in 0..n {
                    o += l.f[j].data[k];
                }
                assert_eq!(o.to_bits(), l.output.data[k].to_bits());
            }
            let rep = audit_ledger(&l).unwrap();
            assert_eq!(rep.refined_energy.len(), n);
        }
    }

    #[test]
    fn corrupted_term_is_located() {
        for bad in 0..3 {
            let mut l = injected(3, 11);
            l.f[bad].data[5] += 0.25;
            match audit_ledger(&l) {
                Err(Error::Audit { iteration, .. }) => assert_eq!(iteration, bad),
                other => panic!("expected audit failure, got {other:?}"),
            }
        }
    }

    #[test]
    fn more_than_eight_is_config_error() {
        let mut g = Graph::<f32>::new();
        let p = g.constant(Tensor::zeros(&[2, 4])).unwrap();
        let err = dual_path(&mut g, p, 9, |_, _, r| Ok(r)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn param_count_formula() {
        let mut p = ParamStore::<f32>::new();
        init_params(&mut p, 3, 14, 257, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.num_scalars(), param_count(3, 14, 257));
        assert_eq!(param_count(1, 14, 257), 67_423);
    }
}
