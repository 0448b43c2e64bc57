//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and backward is a single reverse sweep.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvDims, ConvGeom, GruCache, GruGrads};
use super::tensor::{split_axis, strides, Tensor};
use crate::error::{Error, Result};
use crate::fft::Fft;
use crate::real::Real;
use crate::spectral::{synthesize, synthesize_adjoint, StftConfig};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<R> {
    Input,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, R),
    AddScalar(Var),
    Broadcast(Var),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
        geom: ConvGeom,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Elu(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<R>,
        inv_std: Vec<R>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    SumAxis {
        x: Var,
        axis: usize,
    },
    SumAll(Var),
    Gru {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b_ih: Var,
        b_hh: Var,
        cache: GruCache<R>,
    },
    Istft {
        x: Var,
        cfg: StftConfig,
        frames: usize,
    },
    FlipGrad(Var),
}

#[derive(Debug, Clone)]
struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    needs_grad: bool,
}

/// One forward computation; owns every intermediate value.
#[derive(Debug, Clone, Default)]
pub struct Graph<R> {
    nodes: Vec<Node<R>>,
}

/// Gradients of a scalar with respect to every node that needs one.
#[derive(Debug, Clone)]
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, v: Var) -> Option<&Tensor<R>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<R>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{op}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, name: &str, value: Tensor<R>, op: Op<R>, needs_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NaN {
                op: String::from(name),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that is differentiated against.
    pub fn leaf(&mut self, value: Tensor<R>) -> Result<Var> {
        self.push("leaf", value, Op::Input, true)
    }

    /// Input without gradient.
    pub fn constant(&mut self, value: Tensor<R>) -> Result<Var> {
        self.push("constant", value, Op::Input, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[R] {
        self.nodes[v.0].value.data()
    }

    fn binary(
        &mut self,
        name: &str,
        a: Var,
        b: Var,
        f: impl Fn(R, R) -> R,
        op: Op<R>,
    ) -> Result<Var> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(name, value, op, ng)
    }

    fn unary(&mut self, name: &str, x: Var, f: impl Fn(R) -> R, op: Op<R>) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let value = Tensor::new(self.shape(x), data)?;
        let ng = self.ng(x);
        self.push(name, value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, c: R) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: R) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    /// Right-aligned broadcast of `x` to `shape`; each source dimension must
    /// be 1 or equal to the target.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        let map = broadcast_strides(&src, shape)?;
        let n: usize = shape.iter().product();
        let xs = self.data(x);
        let mut data = Vec::with_capacity(n);
        for_each_broadcast(shape, &map, |si| data.push(xs[si]));
        let value = Tensor::new(shape, data)?;
        let ng = self.ng(x);
        self.push("broadcast", value, Op::Broadcast(x), ng)
    }

    /// `a + broadcast(b)`
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let bb = if self.shape(b) == shape.as_slice() {
            b
        } else {
            self.broadcast_to(b, &shape)?
        };
        self.add(a, bb)
    }

    /// `a ⊙ broadcast(b)`
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let bb = if self.shape(b) == shape.as_slice() {
            b
        } else {
            self.broadcast_to(b, &shape)?
        };
        self.mul(a, bb)
    }

    /// `[m, k] × [k, n] → [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: {sa:?} × {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![R::zero(); m * n];
        kernels::matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        self.push("matmul", Tensor::new(&[m, n], out)?, Op::MatMul(a, b), ng)
    }

    /// 2-D convolution of `x: [time, c_in, freq]` with `w: [c_out, c_in,
    /// k_time, k_freq]` and optional bias `[c_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::Shape(format!(
                "conv2d: input {sx:?} with weight {sw:?}"
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(Error::Shape(format!(
                    "conv2d: bias {:?} for {} outputs",
                    self.shape(b),
                    sw[0]
                )));
            }
        }
        let (t_out, f_out) = geom.out_len(sx[0], sx[2], sw[2], sw[3]).ok_or_else(|| {
            Error::Shape(format!("conv2d: input {sx:?} smaller than kernel {sw:?}"))
        })?;
        let dims = ConvDims {
            t_in: sx[0],
            c_in: sx[1],
            f_in: sx[2],
            t_out,
            c_out: sw[0],
            f_out,
            kt: sw[2],
            kf: sw[3],
        };
        let out = kernels::conv2d_forward(
            self.data(x),
            self.data(w),
            b.map(|b| self.data(b)),
            &dims,
            &geom,
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(
            "conv2d",
            Tensor::new(&[t_out, dims.c_out, f_out], out)?,
            Op::Conv2d {
                x,
                w,
                b,
                dims,
                geom,
            },
            ng,
        )
    }

    /// Zero insertion along the last axis: `[.., f] → [.., (f−1)·factor + 1]`.
    /// Followed by a stride-1 convolution this is a transposed convolution.
    pub fn upsample_last(&mut self, x: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let f = *shape
            .last()
            .ok_or_else(|| Error::Shape("upsample: scalar input".into()))?;
        if f == 0 || factor == 0 {
            return Err(Error::Shape("upsample: empty axis".into()));
        }
        let fo = (f - 1) * factor + 1;
        let rows = shape.iter().rev().skip(1).product::<usize>();
        let mut out = vec![R::zero(); rows * fo];
        let xs = self.data(x);
        for r in 0..rows {
            for j in 0..f {
                out[r * fo + j * factor] = xs[r * f + j];
            }
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = fo;
        let ng = self.ng(x);
        self.push(
            "upsample",
            Tensor::new(&oshape, out)?,
            Op::Upsample { x, factor },
            ng,
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(R::zero()), Op::Relu(x))
    }

    /// Exponential linear unit with unit scale.
    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "elu",
            x,
            |v| if v > R::zero() { v } else { v.exp_m1() },
            Op::Elu(x),
        )
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, |v| v.ln(), Op::Log(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, Op::Square(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!(
                "softmax: axis {axis} for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xs = self.data(x);
        let mut out = vec![R::zero(); xs.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let mut m = R::neg_infinity();
                for k in 0..len {
                    m = m.max(xs[idx(k)]);
                }
                let mut s = R::zero();
                for k in 0..len {
                    let e = (xs[idx(k)] - m).exp();
                    out[idx(k)] = e;
                    s += e;
                }
                for k in 0..len {
                    out[idx(k)] /= s;
                }
            }
        }
        let ng = self.ng(x);
        self.push(
            "softmax",
            Tensor::new(&shape, out)?,
            Op::Softmax { x, axis },
            ng,
        )
    }

    /// Normalizes over the last axis, then applies per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: R) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::Shape("layer_norm: scalar input".into()))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Shape(format!("layer_norm: gain/bias must be [{d}]")));
        }
        let rows = self.value(x).len() / d;
        let (xs, g, b) = (self.data(x), self.data(gain), self.data(bias));
        let mut out = vec![R::zero(); xs.len()];
        let mut xhat = vec![R::zero(); xs.len()];
        let mut inv_std = vec![R::zero(); rows];
        let dn = R::from_f64(d as f64);
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<R>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / dn;
            let is = R::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            "layer_norm",
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(
                *xs.first()
                    .ok_or_else(|| Error::Shape("concat: no inputs".into()))?,
            )
            .to_vec();
        if axis >= first.len() {
            return Err(Error::Shape(format!(
                "concat: axis {axis} for shape {first:?}"
            )));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(Error::Shape(format!(
                    "concat: {s:?} incompatible with {first:?} on axis {axis}"
                )));
            }
            total += s[axis];
        }
        let mut oshape = first.clone();
        oshape[axis] = total;
        let (outer, _, inner) = split_axis(&oshape, axis);
        let mut out = Vec::with_capacity(oshape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis];
                let d = self.data(v);
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let ng = xs.iter().any(|&v| self.ng(v));
        self.push(
            "concat",
            Tensor::new(&oshape, out)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            ng,
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape(format!(
                "slice: [{start}, {}) of axis {axis} in {shape:?}",
                start + len
            )));
        }
        let (outer, alen, inner) = split_axis(&shape, axis);
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let ng = self.ng(x);
        self.push(
            "slice",
            Tensor::new(&oshape, out)?,
            Op::Slice { x, axis, start },
            ng,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let ng = self.ng(x);
        self.push("reshape", value, Op::Reshape(x), ng)
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || core::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Shape(format!(
                "permute: {perm:?} for shape {shape:?}"
            )));
        }
        let oshape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let istr = strides(&shape);
        let map: Vec<usize> = perm.iter().map(|&p| istr[p]).collect();
        let d = self.data(x);
        let mut out = Vec::with_capacity(d.len());
        for_each_broadcast(&oshape, &map, |si| out.push(d[si]));
        let ng = self.ng(x);
        self.push(
            "permute",
            Tensor::new(&oshape, out)?,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            ng,
        )
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!(
                "sum: axis {axis} for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let d = self.data(x);
        let mut out = vec![R::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &d[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let mut oshape = shape;
        oshape.remove(axis);
        let ng = self.ng(x);
        self.push(
            "sum",
            Tensor::new(&oshape, out)?,
            Op::SumAxis { x, axis },
            ng,
        )
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::Shape(format!("mean: axis {axis} out of range")))?;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, R::one() / R::from_f64(n as f64))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().copied().sum::<R>();
        let ng = self.ng(x);
        self.push("sum", Tensor::scalar(s), Op::SumAll(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len().max(1);
        let s = self.sum(x)?;
        self.scale(s, R::one() / R::from_f64(n as f64))
    }

    /// Gated recurrent layer over `x: [steps, batch, input]`, zero initial
    /// state; see [`kernels::gru_forward`] for the cell equations.
    pub fn gru(&mut self, x: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(Error::Shape(format!(
                "gru: input must be [steps, batch, input], got {sx:?}"
            )));
        }
        let (steps, batch, input) = (sx[0], sx[1], sx[2]);
        let sh = self.shape(w_hh).to_vec();
        if sh.len() != 2 || sh[1] != 3 * sh[0] {
            return Err(Error::Shape(format!(
                "gru: w_hh must be [h, 3h], got {sh:?}"
            )));
        }
        let hidden = sh[0];
        if self.shape(w_ih) != [input, 3 * hidden]
            || self.shape(b_ih) != [3 * hidden]
            || self.shape(b_hh) != [3 * hidden]
        {
            return Err(Error::Shape(format!(
                "gru: weights inconsistent with input {input} and hidden {hidden}"
            )));
        }
        let (out, cache) = kernels::gru_forward(
            self.data(x),
            self.data(w_ih),
            self.data(w_hh),
            self.data(b_ih),
            self.data(b_hh),
            steps,
            batch,
            input,
            hidden,
        );
        let ng = [x, w_ih, w_hh, b_ih, b_hh].iter().any(|&v| self.ng(v));
        self.push(
            "gru",
            Tensor::new(&[steps, batch, hidden], out)?,
            Op::Gru {
                x,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                cache,
            },
            ng,
        )
    }

    /// Differentiable inverse STFT of a `[frames, 2·bins]` spectrum.
    pub fn istft(&mut self, x: Var, cfg: &StftConfig, out_len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[1] != 2 * cfg.bins() {
            return Err(Error::Shape(format!(
                "istft: spectrum {s:?} for {} bins",
                cfg.bins()
            )));
        }
        let fft = Fft::<R>::new(cfg.fft_size);
        let out = synthesize(self.data(x), s[0], cfg, &fft, out_len);
        let ng = self.ng(x);
        self.push(
            "istft",
            Tensor::new(&[out_len], out)?,
            Op::Istft {
                x,
                cfg: cfg.clone(),
                frames: s[0],
            },
            ng,
        )
    }

    /// Identity whose backward negates the gradient. Only useful to check
    /// that gradient verification notices a broken backward.
    #[doc(hidden)]
    pub fn flip_grad_for_testing(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).clone();
        let ng = self.ng(x);
        self.push("flip_grad", value, Op::FlipGrad(x), ng)
    }

    /// Gradients of the one-element node `root` with respect to every node
    /// that needs one.
    pub fn backward(&self, root: Var) -> Result<Gradients<R>> {
        if self.value(root).len() != 1 {
            return Err(Error::Shape(format!(
                "backward: root has shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Tensor<R>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(self.shape(root), R::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(
        &self,
        i: usize,
        g: &Tensor<R>,
        grads: &mut [Option<Tensor<R>>],
    ) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        let out = node.value.data();
        match &node.op {
            Op::Input => {}
            Op::Add(a, b) => {
                self.acc_with(grads, *a, |d| axpy(d, gd, R::one()));
                self.acc_with(grads, *b, |d| axpy(d, gd, R::one()));
            }
            Op::Sub(a, b) => {
                self.acc_with(grads, *a, |d| axpy(d, gd, R::one()));
                self.acc_with(grads, *b, |d| axpy(d, gd, -R::one()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                self.acc_with(grads, *a, |d| zip3(d, gd, bv, |g, y| g * y));
                self.acc_with(grads, *b, |d| zip3(d, gd, av, |g, x| g * x));
            }
            Op::Div(a, b) => {
                let bv = self.data(*b);
                self.acc_with(grads, *a, |d| zip3(d, gd, bv, |g, y| g / y));
                self.acc_with(grads, *b, |d| {
                    for ((d, &g), (&o, &y)) in d.iter_mut().zip(gd).zip(out.iter().zip(bv)) {
                        *d -= g * o / y;
                    }
                });
            }
            Op::Scale(x, c) => self.acc_with(grads, *x, |d| axpy(d, gd, *c)),
            Op::AddScalar(x) | Op::Reshape(x) => {
                self.acc_with(grads, *x, |d| axpy(d, gd, R::one()))
            }
            Op::FlipGrad(x) => self.acc_with(grads, *x, |d| axpy(d, gd, -R::one())),
            Op::Broadcast(x) => {
                let map = broadcast_strides(self.shape(*x), node.value.shape())?;
                self.acc_with(grads, *x, |d| {
                    let mut k = 0;
                    for_each_broadcast(node.value.shape(), &map, |si| {
                        d[si] += gd[k];
                        k += 1;
                    });
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.data(*a), self.data(*b));
                self.acc_with(grads, *a, |d| kernels::matmul_grad_a(gd, bv, d, m, k, n));
                self.acc_with(grads, *b, |d| kernels::matmul_grad_b(av, gd, d, m, k, n));
            }
            Op::Conv2d {
                x,
                w,
                b,
                dims,
                geom,
            } => {
                let (xv, wv) = (self.data(*x), self.data(*w));
                let mut dx = self.ng(*x).then(|| vec![R::zero(); xv.len()]);
                let mut dw = self.ng(*w).then(|| vec![R::zero(); wv.len()]);
                let mut db = b
                    .filter(|b| self.ng(*b))
                    .map(|_| vec![R::zero(); dims.c_out]);
                kernels::conv2d_backward(
                    xv,
                    wv,
                    gd,
                    dims,
                    geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    self.acc_with(grads, *x, |d| axpy(d, &dx, R::one()));
                }
                if let Some(dw) = dw {
                    self.acc_with(grads, *w, |d| axpy(d, &dw, R::one()));
                }
                if let (Some(b), Some(db)) = (b, db) {
                    self.acc_with(grads, *b, |d| axpy(d, &db, R::one()));
                }
            }
            Op::Upsample { x, factor } => {
                let f = *self.shape(*x).last().unwrap();
                let fo = *node.value.shape().last().unwrap();
                let rows = self.value(*x).len() / f;
                self.acc_with(grads, *x, |d| {
                    for r in 0..rows {
                        for j in 0..f {
                            d[r * f + j] += gd[r * fo + j * factor];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => self.acc_with(grads, *x, |d| {
                zip3(d, gd, out, |g, y| g * y * (R::one() - y))
            }),
            Op::Tanh(x) => self.acc_with(grads, *x, |d| {
                zip3(d, gd, out, |g, y| g * (R::one() - y * y))
            }),
            Op::Relu(x) => {
                let xv = self.data(*x);
                self.acc_with(grads, *x, |d| {
                    zip3(d, gd, xv, |g, v| if v > R::zero() { g } else { R::zero() })
                })
            }
            Op::Elu(x) => {
                let xv = self.data(*x);
                self.acc_with(grads, *x, |d| {
                    for ((d, &g), (&v, &y)) in d.iter_mut().zip(gd).zip(xv.iter().zip(out)) {
                        *d += if v > R::zero() { g } else { g * (y + R::one()) };
                    }
                })
            }
            Op::Exp(x) => self.acc_with(grads, *x, |d| zip3(d, gd, out, |g, y| g * y)),
            Op::Log(x) => {
                let xv = self.data(*x);
                self.acc_with(grads, *x, |d| zip3(d, gd, xv, |g, v| g / v))
            }
            Op::Sqrt(x) => self.acc_with(grads, *x, |d| zip3(d, gd, out, |g, y| g / (y + y))),
            Op::Square(x) => {
                let xv = self.data(*x);
                self.acc_with(grads, *x, |d| zip3(d, gd, xv, |g, v| g * (v + v)))
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                self.acc_with(grads, *x, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * len + k) * inner + i;
                            let dot = (0..len).map(|k| gd[idx(k)] * out[idx(k)]).sum::<R>();
                            for k in 0..len {
                                d[idx(k)] += out[idx(k)] * (gd[idx(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let dn = *node.value.shape().last().unwrap();
                let rows = inv_std.len();
                let gv = self.data(*gain);
                self.acc_with(grads, *gain, |d| {
                    for r in 0..rows {
                        for j in 0..dn {
                            d[j] += gd[r * dn + j] * xhat[r * dn + j];
                        }
                    }
                });
                self.acc_with(grads, *bias, |d| {
                    for r in 0..rows {
                        for j in 0..dn {
                            d[j] += gd[r * dn + j];
                        }
                    }
                });
                let n = R::from_f64(dn as f64);
                self.acc_with(grads, *x, |d| {
                    for r in 0..rows {
                        let mut s1 = R::zero();
                        let mut s2 = R::zero();
                        for j in 0..dn {
                            let dxh = gd[r * dn + j] * gv[j];
                            s1 += dxh;
                            s2 += dxh * xhat[r * dn + j];
                        }
                        for j in 0..dn {
                            let dxh = gd[r * dn + j] * gv[j];
                            d[r * dn + j] +=
                                inv_std[r] / n * (n * dxh - s1 - xhat[r * dn + j] * s2);
                        }
                    }
                });
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    self.acc_with(grads, v, |d| {
                        for o in 0..outer {
                            let src = &gd
                                [(o * total + offset) * inner..(o * total + offset + len) * inner];
                            axpy(
                                &mut d[o * len * inner..(o + 1) * len * inner],
                                src,
                                R::one(),
                            );
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, alen, inner) = split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                self.acc_with(grads, *x, |d| {
                    for o in 0..outer {
                        let base = (o * alen + start) * inner;
                        axpy(
                            &mut d[base..base + len * inner],
                            &gd[o * len * inner..(o + 1) * len * inner],
                            R::one(),
                        );
                    }
                });
            }
            Op::Permute { x, perm } => {
                let istr = strides(self.shape(*x));
                let map: Vec<usize> = perm.iter().map(|&p| istr[p]).collect();
                self.acc_with(grads, *x, |d| {
                    let mut k = 0;
                    for_each_broadcast(node.value.shape(), &map, |si| {
                        d[si] += gd[k];
                        k += 1;
                    });
                });
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                self.acc_with(grads, *x, |d| {
                    for o in 0..outer {
                        for k in 0..len {
                            let dst = &mut d[(o * len + k) * inner..(o * len + k + 1) * inner];
                            axpy(dst, &gd[o * inner..(o + 1) * inner], R::one());
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let g0 = gd[0];
                self.acc_with(grads, *x, |d| d.iter_mut().for_each(|v| *v += g0));
            }
            Op::Gru {
                x,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                cache,
            } => {
                let alloc = |v: Var| self.ng(v).then(|| vec![R::zero(); self.value(v).len()]);
                let (mut dx, mut dwi, mut dwh, mut dbi, mut dbh) = (
                    alloc(*x),
                    alloc(*w_ih),
                    alloc(*w_hh),
                    alloc(*b_ih),
                    alloc(*b_hh),
                );
                kernels::gru_backward(
                    self.data(*x),
                    self.data(*w_ih),
                    self.data(*w_hh),
                    out,
                    gd,
                    cache,
                    GruGrads {
                        dx: dx.as_deref_mut(),
                        dw_ih: dwi.as_deref_mut(),
                        dw_hh: dwh.as_deref_mut(),
                        db_ih: dbi.as_deref_mut(),
                        db_hh: dbh.as_deref_mut(),
                    },
                );
                for (v, d) in [
                    (*x, dx),
                    (*w_ih, dwi),
                    (*w_hh, dwh),
                    (*b_ih, dbi),
                    (*b_hh, dbh),
                ] {
                    if let Some(d) = d {
                        self.acc_with(grads, v, |acc| axpy(acc, &d, R::one()));
                    }
                }
            }
            Op::Istft { x, cfg, frames } => {
                let fft = Fft::<R>::new(cfg.fft_size);
                let dx = synthesize_adjoint(gd, *frames, cfg, &fft);
                self.acc_with(grads, *x, |d| axpy(d, &dx, R::one()));
            }
        }
        Ok(())
    }

    fn acc_with(&self, grads: &mut [Option<Tensor<R>>], v: Var, f: impl FnOnce(&mut [R])) {
        if !self.ng(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v)));
        }
        f(slot.as_mut().unwrap().data_mut());
    }
}

#[inline]
fn axpy<R: Real>(d: &mut [R], g: &[R], a: R) {
    for (d, &g) in d.iter_mut().zip(g) {
        *d += a * g;
    }
}

#[inline]
fn zip3<R: Real>(d: &mut [R], g: &[R], v: &[R], f: impl Fn(R, R) -> R) {
    for ((d, &g), &v) in d.iter_mut().zip(g).zip(v) {
        *d += f(g, v);
    }
}

/// Source strides (0 on broadcast axes) for a right-aligned broadcast.
fn broadcast_strides(src: &[usize], dst: &[usize]) -> Result<Vec<usize>> {
    if src.len() > dst.len() {
        return Err(Error::Shape(format!(
            "broadcast: {src:?} has more axes than {dst:?}"
        )));
    }
    let sstr = strides(src);
    let lead = dst.len() - src.len();
    let mut map = vec![0; dst.len()];
    for (i, &d) in dst.iter().enumerate().skip(lead) {
        let s = src[i - lead];
        if s == d {
            map[i] = sstr[i - lead];
        } else if s != 1 {
            return Err(Error::Shape(format!("broadcast: {src:?} to {dst:?}")));
        }
    }
    Ok(map)
}

/// Visits every multi-index of `shape` in row-major order, passing the
/// source offset computed with `map` strides.
fn for_each_broadcast(shape: &[usize], map: &[usize], mut f: impl FnMut(usize)) {
    let n: usize = shape.iter().product();
    if n == 0 {
        return;
    }
    if shape.is_empty() {
        f(0);
        return;
    }
    let nd = shape.len();
    let last = shape[nd - 1];
    let lstride = map[nd - 1];
    let mut idx = vec![0usize; nd];
    let mut base = 0usize;
    loop {
        for j in 0..last {
            f(base + j * lstride);
        }
        // advance the outer indices
        let mut ax = nd - 1;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            base += map[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            base -= map[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}
