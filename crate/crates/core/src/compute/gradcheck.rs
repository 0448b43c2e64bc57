//! Central finite-difference verification of analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{Bindings, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates sampled per parameter (all of them when fewer exist).
    pub samples: usize,
    pub seed: u64,
    /// Gradients smaller than this are compared in absolute terms.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            tol: 1e-4,
            samples: 32,
            seed: 0,
            abs_floor: 1e-6,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

/// Worst coordinate found for one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn evaluate<F>(f: &F, params: &ParamStore<f64>) -> Result<(f64, Graph<f64>, Bindings, Var)>
where
    F: Fn(&mut Graph<f64>, &Bindings) -> Result<Var>,
{
    let mut g = Graph::new();
    let b = params.bind(&mut g)?;
    let root = f(&mut g, &b)?;
    let v = g.value(root).item();
    if !v.is_finite() {
        return Err(Error::NaN {
            op: String::from("objective"),
        });
    }
    Ok((v, g, b, root))
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences on a seeded subset of coordinates of every parameter.
pub fn grad_check<F>(
    f: F,
    params: &ParamStore<f64>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bindings) -> Result<Var>,
{
    let (_, g, b, root) = evaluate(&f, params)?;
    let mut grads = g.backward(root)?;
    let analytic = b.collect(&g, &mut grads);
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    for (name, t) in params.iter() {
        let n = t.len();
        let mut idx: Vec<usize> = if n <= opts.samples {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.samples).into_vec()
        };
        idx.sort_unstable();
        let ga = analytic.get(name).expect("analytic gradient per parameter");
        let mut worst = ParamCheck {
            name: String::from(name),
            checked: idx.len(),
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_error: 0.0,
            passed: true,
        };
        for &i in &idx {
            let orig = t.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + opts.eps;
            let (fp, ..) = evaluate(&f, &probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - opts.eps;
            let (fm, ..) = evaluate(&f, &probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let a = ga.data()[i];
            let denom = a.abs().max(numeric.abs()).max(opts.abs_floor);
            let rel = (a - numeric).abs() / denom;
            if rel >= worst.rel_error {
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
                worst.rel_error = rel;
            }
        }
        worst.passed = worst.rel_error <= opts.tol;
        report.params.push(worst);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::Tensor;
    use rand::Rng;

    fn noise_store(seed: u64, n: usize) -> ParamStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        p.insert(
            "w",
            Tensor::new(&[n], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        )
        .unwrap();
        p
    }

    #[test]
    fn quadratic_matches_within_1e6() {
        let p = noise_store(1, 50);
        let report = grad_check(
            |g, b| {
                let w = b.get("w")?;
                let sq = g.square(w)?;
                g.sum(sq)
            },
            &p,
            GradCheckOptions::default().with_tol(1e-6),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.params[0].checked, 32);
    }

    #[test]
    fn flags_sign_flipped_backward() {
        let mut p = noise_store(2, 10);
        p.insert("v", Tensor::new(&[10], alloc::vec![0.5; 10]).unwrap())
            .unwrap();
        let report = grad_check(
            |g, b| {
                let w = b.get("w")?;
                let bad = g.flip_grad_for_testing(w)?;
                let v = b.get("v")?;
                let prod = g.mul(bad, v)?;
                let sq = g.square(prod)?;
                g.sum(sq)
            },
            &p,
            GradCheckOptions::default(),
        )
        .unwrap();
        let failed: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, ["w"]);
    }

    #[test]
    fn nan_objective_is_reported() {
        let p = noise_store(3, 4);
        let err = grad_check(
            |g, b| {
                let w = b.get("w")?;
                let l = g.log(w)?; // negative entries
                g.sum(l)
            },
            &p,
            GradCheckOptions::default(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::NaN {
                op: String::from("log")
            }
        );
    }
}
