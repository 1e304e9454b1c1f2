//! Central finite-difference verification of taped gradients.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Pass threshold on the worst relative error.
    pub tol: f64,
    /// Denominator floor, so entries whose true gradient is ~0 are judged on
    /// absolute error instead of amplified roundoff.
    pub floor: f64,
    /// Check at most this many entries per parameter (chosen by `seed`).
    pub max_entries: Option<usize>,
    pub seed: u64,
    /// Use the five-point stencil (error O(h⁴)) instead of the central
    /// difference (O(h²)). Costs four evaluations per entry instead of two.
    pub five_point: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-5,
            floor: 1e-4,
            max_entries: None,
            seed: 0,
            five_point: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }
}

/// Compares the tape's gradient of `f` against `(f(p+h) - f(p-h)) / 2h`,
/// or the five-point stencil when [`GradCheckOptions::five_point`] is set.
///
/// `f` receives the tape and one leaf per entry of `params` and must return
/// a scalar. It is evaluated twice at the base point; differing values are
/// reported as an error since finite differences would be meaningless.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = values.iter().map(|v| tape.param(Arc::new(v.clone()))).collect();
        let out = f(&tape, &vars)?;
        scalar_of(&out.value())
    };

    let tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|v| tape.param(Arc::new(v.clone()))).collect();
    let loss = f(&tape, &vars)?;
    let base = scalar_of(&loss.value())?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
    drop(grads);

    let again = eval(params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Contract(format!(
            "grad_check: function is not deterministic ({base} vs {again})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (pi, param) in params.iter().enumerate() {
        let numel = param.numel();
        let entries: Vec<usize> = match opts.max_entries {
            Some(k) if k < numel => {
                let mut idx = sample(&mut rng, numel, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..numel).collect(),
        };
        let mut check = ParamCheck {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            checked: entries.len(),
            analytic: Vec::with_capacity(entries.len()),
            numeric: Vec::with_capacity(entries.len()),
        };
        for &e in &entries {
            let orig = param.data()[e];
            let mut at = |x: f64| -> Result<f64> {
                work[pi].data_mut()[e] = x;
                eval(&work)
            };
            let h = opts.h;
            let numeric = if opts.five_point {
                let (p1, m1, p2, m2) = (at(orig + h)?, at(orig - h)?, at(orig + 2.0 * h)?, at(orig - 2.0 * h)?);
                (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
            } else {
                (at(orig + h)? - at(orig - h)?) / (2.0 * h)
            };
            work[pi].data_mut()[e] = orig;

            let a = analytic[pi].data()[e];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            check.max_abs_error = check.max_abs_error.max(abs);
            check.max_rel_error = check.max_rel_error.max(rel);
            check.analytic.push(a);
            check.numeric.push(numeric);
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tol: opts.tol,
    })
}

/// [`grad_check`] over selected parameters of a store; every other
/// parameter keeps its stored value.
pub fn grad_check_params<F>(
    f: F,
    store: &ParamStore<f64>,
    ids: &[ParamId],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &Bound<'t, f64>) -> Result<Var<'t, f64>>,
{
    let values: Vec<Tensor<f64>> = ids.iter().map(|&id| store.get(id).clone()).collect();
    grad_check(
        |tape, vars| {
            let overrides: Vec<_> = ids.iter().copied().zip(vars.iter().copied()).collect();
            let bound = store.bind_overriding(tape, &overrides);
            f(tape, &bound)
        },
        &values,
        opts,
    )
}

fn scalar_of(t: &Tensor<f64>) -> Result<f64> {
    if t.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}
