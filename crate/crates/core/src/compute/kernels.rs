//! Dense loops behind the graph operations. All accumulation orders are
//! fixed so results do not depend on scheduling.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// Dot product with eight interleaved partial sums, combined in a fixed
/// order. Independent lanes let the loop vectorize.
#[inline]
pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    const L: usize = 8;
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [R::zero(); L];
    let mut ca = a.chunks_exact(L);
    let mut cb = b.chunks_exact(L);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..L {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = R::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `c[m,n] += a[m,k]·b[k,n]`
pub fn matmul_acc<R: Real>(a: &[R], b: &[R], c: &mut [R], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == R::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `da[m,k] += Σ_n dc[m,n]·b[k,n]`
pub fn matmul_grad_a<R: Real>(dc: &[R], b: &[R], da: &mut [R], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            da[i * k + p] += dot(drow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `db[k,n] += Σ_m a[m,k]·dc[m,n]`
pub fn matmul_grad_b<R: Real>(a: &[R], dc: &[R], db: &mut [R], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == R::zero() {
                continue;
            }
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (g, &d) in dbrow.iter_mut().zip(drow) {
                *g += av * d;
            }
        }
    }
}

/// Geometry of a 2-D convolution over `[time, channel, freq]` feature maps.
/// Padding is given separately before/after on each axis so time can be
/// padded causally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride_t: usize,
    pub stride_f: usize,
    pub pad_t: (usize, usize),
    pub pad_f: (usize, usize),
}

impl ConvGeom {
    /// Causal in time (all time padding in the past), symmetric in frequency.
    pub fn causal(kt: usize, kf: usize, stride_f: usize) -> Self {
        Self {
            stride_t: 1,
            stride_f,
            pad_t: (kt - 1, 0),
            pad_f: (kf / 2, kf / 2),
        }
    }

    pub fn out_len(&self, t: usize, f: usize, kt: usize, kf: usize) -> Option<(usize, usize)> {
        let tp = t + self.pad_t.0 + self.pad_t.1;
        let fp = f + self.pad_f.0 + self.pad_f.1;
        if tp < kt || fp < kf || self.stride_t == 0 || self.stride_f == 0 {
            return None;
        }
        Some(((tp - kt) / self.stride_t + 1, (fp - kf) / self.stride_f + 1))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub t_in: usize,
    pub c_in: usize,
    pub f_in: usize,
    pub t_out: usize,
    pub c_out: usize,
    pub f_out: usize,
    pub kt: usize,
    pub kf: usize,
}

/// Output frequency indices `fo` for which `fo·stride + kf − pad` is a
/// valid input index.
#[inline]
fn valid_fo(d: &ConvDims, g: &ConvGeom, kf: usize) -> (usize, usize) {
    let pad = g.pad_f.0;
    let s = g.stride_f;
    let lo = if pad > kf { (pad - kf).div_ceil(s) } else { 0 };
    let top = d.f_in + pad;
    let hi = if top > kf {
        ((top - kf - 1) / s + 1).min(d.f_out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[inline]
fn input_t(to: usize, kt: usize, g: &ConvGeom, t_in: usize) -> Option<usize> {
    let v = to * g.stride_t + kt;
    if v < g.pad_t.0 {
        return None;
    }
    let ti = v - g.pad_t.0;
    (ti < t_in).then_some(ti)
}

/// Rows of length `f` regrouped by residue modulo `s`: row `i`, phase `q`
/// holds `x[i, q], x[i, q + s], …` in a stretch of `f.div_ceil(s)` values.
/// Strided access then becomes a contiguous slice.
fn to_phases<R: Real>(x: &[R], f: usize, s: usize) -> Vec<R> {
    let fp = f.div_ceil(s);
    let rows = x.len() / f;
    let mut out = vec![R::zero(); rows * s * fp];
    for i in 0..rows {
        for (k, &v) in x[i * f..(i + 1) * f].iter().enumerate() {
            out[(i * s + k % s) * fp + k / s] = v;
        }
    }
    out
}

fn add_from_phases<R: Real>(ph: &[R], x: &mut [R], f: usize, s: usize) {
    let fp = f.div_ceil(s);
    let rows = x.len() / f;
    for i in 0..rows {
        for (k, v) in x[i * f..(i + 1) * f].iter_mut().enumerate() {
            *v += ph[(i * s + k % s) * fp + k / s];
        }
    }
}

/// Per frequency tap: the valid output range `lo..hi` and the offset of the
/// first input read relative to the start of the input row in phase layout.
fn taps(d: &ConvDims, g: &ConvGeom, fp: usize) -> Vec<(usize, usize, usize)> {
    let s = g.stride_f;
    (0..d.kf)
        .map(|kf| {
            let (lo, hi) = valid_fo(d, g, kf);
            let off = if lo < hi { lo * s + kf - g.pad_f.0 } else { 0 };
            (lo, hi, (off % s) * fp + off / s)
        })
        .collect()
}

pub fn conv2d_forward<R: Real>(
    x: &[R],
    w: &[R],
    b: Option<&[R]>,
    d: &ConvDims,
    g: &ConvGeom,
) -> Vec<R> {
    let s = g.stride_f;
    let fp = d.f_in.div_ceil(s);
    let phased;
    let xp: &[R] = if s == 1 {
        x
    } else {
        phased = to_phases(x, d.f_in, s);
        &phased
    };
    let taps = taps(d, g, fp);
    let mut out = vec![R::zero(); d.t_out * d.c_out * d.f_out];
    for to in 0..d.t_out {
        for co in 0..d.c_out {
            let orow = &mut out[(to * d.c_out + co) * d.f_out..(to * d.c_out + co + 1) * d.f_out];
            if let Some(b) = b {
                orow.iter_mut().for_each(|v| *v = b[co]);
            }
            for kt in 0..d.kt {
                let Some(ti) = input_t(to, kt, g, d.t_in) else {
                    continue;
                };
                for ci in 0..d.c_in {
                    let wbase = ((co * d.c_in + ci) * d.kt + kt) * d.kf;
                    let row = (ti * d.c_in + ci) * s * fp;
                    for (kf, &(lo, hi, rel)) in taps.iter().enumerate() {
                        if lo >= hi {
                            continue;
                        }
                        let wv = w[wbase + kf];
                        let start = row + rel;
                        for (o, &xv) in orow[lo..hi].iter_mut().zip(&xp[start..start + (hi - lo)]) {
                            *o += wv * xv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input, weight and bias gradients for a convolution.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<R: Real>(
    x: &[R],
    w: &[R],
    dout: &[R],
    d: &ConvDims,
    g: &ConvGeom,
    dx: Option<&mut [R]>,
    mut dw: Option<&mut [R]>,
    db: Option<&mut [R]>,
) {
    if let Some(db) = db {
        for to in 0..d.t_out {
            for co in 0..d.c_out {
                let row = &dout[(to * d.c_out + co) * d.f_out..(to * d.c_out + co + 1) * d.f_out];
                db[co] += row.iter().copied().sum::<R>();
            }
        }
    }
    let s = g.stride_f;
    let fp = d.f_in.div_ceil(s);
    let phased;
    let xp: &[R] = if s == 1 {
        x
    } else {
        phased = to_phases(x, d.f_in, s);
        &phased
    };
    let mut dx_ph = match (&dx, s) {
        (Some(_), s) if s > 1 => Some(vec![R::zero(); d.t_in * d.c_in * s * fp]),
        _ => None,
    };
    let mut dx = dx;
    let taps = taps(d, g, fp);
    for to in 0..d.t_out {
        for co in 0..d.c_out {
            let drow = &dout[(to * d.c_out + co) * d.f_out..(to * d.c_out + co + 1) * d.f_out];
            for kt in 0..d.kt {
                let Some(ti) = input_t(to, kt, g, d.t_in) else {
                    continue;
                };
                for ci in 0..d.c_in {
                    let wbase = ((co * d.c_in + ci) * d.kt + kt) * d.kf;
                    let row = (ti * d.c_in + ci) * s * fp;
                    for (kf, &(lo, hi, rel)) in taps.iter().enumerate() {
                        if lo >= hi {
                            continue;
                        }
                        let start = row + rel;
                        let dseg = &drow[lo..hi];
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[wbase + kf] += dot(dseg, &xp[start..start + (hi - lo)]);
                        }
                        let target = match (dx_ph.as_deref_mut(), dx.as_deref_mut()) {
                            (Some(ph), _) => Some(ph),
                            (None, Some(dx)) => Some(dx),
                            _ => None,
                        };
                        if let Some(t) = target {
                            let wv = w[wbase + kf];
                            for (o, &dv) in t[start..start + (hi - lo)].iter_mut().zip(dseg) {
                                *o += wv * dv;
                            }
                        }
                    }
                }
            }
        }
    }
    if let (Some(ph), Some(dx)) = (dx_ph, dx) {
        add_from_phases(&ph, dx, d.f_in, s);
    }
}

#[inline]
pub fn sigmoid<R: Real>(v: R) -> R {
    if v >= R::zero() {
        R::one() / (R::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (R::one() + e)
    }
}

/// Saved activations of a gated recurrent layer, needed for backward.
#[derive(Debug, Clone)]
pub struct GruCache<R> {
    pub steps: usize,
    pub batch: usize,
    pub input: usize,
    pub hidden: usize,
    pub r: Vec<R>,
    pub z: Vec<R>,
    pub n: Vec<R>,
    pub hn: Vec<R>,
}

/// Two-gate recurrence over `x: [steps, batch, input]` with zero initial
/// state. Weight layouts: `w_ih [input, 3·hidden]`, `w_hh [hidden,
/// 3·hidden]`, gate blocks ordered (reset, update, candidate):
///
/// ```text
/// r  = σ(x·W_ir + b_ir + h·W_hr + b_hr)
/// z  = σ(x·W_iz + b_iz + h·W_hz + b_hz)
/// n  = tanh(x·W_in + b_in + r ⊙ (h·W_hn + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[allow(clippy::too_many_arguments)]
pub fn gru_forward<R: Real>(
    x: &[R],
    w_ih: &[R],
    w_hh: &[R],
    b_ih: &[R],
    b_hh: &[R],
    steps: usize,
    batch: usize,
    input: usize,
    hidden: usize,
) -> (Vec<R>, GruCache<R>) {
    let g3 = 3 * hidden;
    let rows = steps * batch;
    let mut gi = vec![R::zero(); rows * g3];
    for row in 0..rows {
        gi[row * g3..(row + 1) * g3].copy_from_slice(b_ih);
    }
    matmul_acc(x, w_ih, &mut gi, rows, input, g3);

    let mut out = vec![R::zero(); rows * hidden];
    let mut cache = GruCache {
        steps,
        batch,
        input,
        hidden,
        r: vec![R::zero(); rows * hidden],
        z: vec![R::zero(); rows * hidden],
        n: vec![R::zero(); rows * hidden],
        hn: vec![R::zero(); rows * hidden],
    };
    let mut h_prev = vec![R::zero(); batch * hidden];
    let mut gh = vec![R::zero(); batch * g3];
    for t in 0..steps {
        for bi in 0..batch {
            gh[bi * g3..(bi + 1) * g3].copy_from_slice(b_hh);
        }
        if t > 0 {
            matmul_acc(&h_prev, w_hh, &mut gh, batch, hidden, g3);
        }
        for bi in 0..batch {
            let row = t * batch + bi;
            let gir = &gi[row * g3..(row + 1) * g3];
            let ghr = &gh[bi * g3..(bi + 1) * g3];
            for j in 0..hidden {
                let r = sigmoid(gir[j] + ghr[j]);
                let z = sigmoid(gir[hidden + j] + ghr[hidden + j]);
                let hn = ghr[2 * hidden + j];
                let n = (gir[2 * hidden + j] + r * hn).tanh();
                let hp = h_prev[bi * hidden + j];
                let h = (R::one() - z) * n + z * hp;
                let k = row * hidden + j;
                cache.r[k] = r;
                cache.z[k] = z;
                cache.n[k] = n;
                cache.hn[k] = hn;
                out[k] = h;
            }
        }
        h_prev.copy_from_slice(&out[t * batch * hidden..(t + 1) * batch * hidden]);
    }
    (out, cache)
}

pub struct GruGrads<'a, R> {
    pub dx: Option<&'a mut [R]>,
    pub dw_ih: Option<&'a mut [R]>,
    pub dw_hh: Option<&'a mut [R]>,
    pub db_ih: Option<&'a mut [R]>,
    pub db_hh: Option<&'a mut [R]>,
}

/// Backpropagation through time for [`gru_forward`].
pub fn gru_backward<R: Real>(
    x: &[R],
    w_ih: &[R],
    w_hh: &[R],
    out: &[R],
    dout: &[R],
    c: &GruCache<R>,
    grads: GruGrads<'_, R>,
) {
    let (steps, batch, input, hidden) = (c.steps, c.batch, c.input, c.hidden);
    let g3 = 3 * hidden;
    let rows = steps * batch;
    let mut dgi = vec![R::zero(); rows * g3];
    let mut dh_next = vec![R::zero(); batch * hidden];
    let mut dgh = vec![R::zero(); batch * g3];
    let zero_h = vec![R::zero(); batch * hidden];
    let GruGrads {
        dx,
        dw_ih,
        mut dw_hh,
        db_ih,
        mut db_hh,
    } = grads;
    for t in (0..steps).rev() {
        let h_prev: &[R] = if t > 0 {
            &out[(t - 1) * batch * hidden..t * batch * hidden]
        } else {
            &zero_h
        };
        for bi in 0..batch {
            let row = t * batch + bi;
            for j in 0..hidden {
                let k = row * hidden + j;
                let dh = dout[k] + dh_next[bi * hidden + j];
                let (r, z, n, hn) = (c.r[k], c.z[k], c.n[k], c.hn[k]);
                let hp = h_prev[bi * hidden + j];
                let dn_pre = dh * (R::one() - z) * (R::one() - n * n);
                let dz_pre = dh * (hp - n) * z * (R::one() - z);
                let dr_pre = dn_pre * hn * r * (R::one() - r);
                let gi_row = &mut dgi[row * g3..(row + 1) * g3];
                gi_row[j] = dr_pre;
                gi_row[hidden + j] = dz_pre;
                gi_row[2 * hidden + j] = dn_pre;
                let gh_row = &mut dgh[bi * g3..(bi + 1) * g3];
                gh_row[j] = dr_pre;
                gh_row[hidden + j] = dz_pre;
                gh_row[2 * hidden + j] = dn_pre * r;
                dh_next[bi * hidden + j] = dh * z;
            }
        }
        if let Some(db) = db_hh.as_deref_mut() {
            for bi in 0..batch {
                for (d, &g) in db.iter_mut().zip(&dgh[bi * g3..(bi + 1) * g3]) {
                    *d += g;
                }
            }
        }
        if t > 0 {
            if let Some(dw) = dw_hh.as_deref_mut() {
                matmul_grad_b(h_prev, &dgh, dw, batch, hidden, g3);
            }
            matmul_grad_a(&dgh, w_hh, &mut dh_next, batch, hidden, g3);
        }
    }
    if let Some(db) = db_ih {
        for row in 0..rows {
            for (d, &g) in db.iter_mut().zip(&dgi[row * g3..(row + 1) * g3]) {
                *d += g;
            }
        }
    }
    if let Some(dw) = dw_ih {
        matmul_grad_b(x, &dgi, dw, rows, input, g3);
    }
    if let Some(dx) = dx {
        matmul_grad_a(&dgi, w_ih, dx, rows, input, g3);
    }
}
