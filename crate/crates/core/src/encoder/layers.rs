use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{lit, Bound, ParamId, ParamStore, Real, Tensor, Var};

/// Dense layer `x·W + b` with `W: fan_in × fan_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    /// Weights ~ N(0, 1/fan_in), bias zero.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.normal(format!("{name}.w"), &[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), rng);
        let b = bias.then(|| store.zeros(format!("{name}.b"), &[1, fan_out]));
        Self { w, b }
    }

    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.matmul(bound[self.w])?;
        match self.b {
            Some(b) => y.add_row(bound[b]),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        Self {
            gamma: store.ones(format!("{name}.gamma"), &[d]),
            beta: store.zeros(format!("{name}.beta"), &[d]),
        }
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(ctx.bound[self.gamma], ctx.bound[self.beta], ctx.ln_eps)
    }
}

/// Inverted dropout with its own random stream.
#[derive(Debug)]
pub struct Dropout {
    p: f64,
    rng: RefCell<ChaCha8Rng>,
}

impl Dropout {
    pub fn new(p: f64, rng: ChaCha8Rng) -> Self {
        Self { p, rng: RefCell::new(rng) }
    }

    pub fn from_seed(p: f64, seed: u64) -> Self {
        Self::new(p, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn apply<'t, T: Real>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.p <= 0.0 {
            return Ok(x);
        }
        let keep = lit::<T>(1.0 / (1.0 - self.p));
        let shape = x.shape();
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<T> = (0..shape.iter().product::<usize>())
            .map(|_| if rng.random::<f64>() < self.p { T::zero() } else { keep })
            .collect();
        x.mul(x.tape().constant(Tensor::new(&shape, mask)?))
    }
}

/// Everything a forward pass needs besides the activations.
pub struct Ctx<'a, 't, T: Real> {
    pub bound: &'a Bound<'t, T>,
    /// `None` in evaluation mode and in gradient checks.
    pub dropout: Option<&'a Dropout>,
    pub ln_eps: f64,
}

impl<'a, 't, T: Real> Ctx<'a, 't, T> {
    pub fn eval(bound: &'a Bound<'t, T>) -> Self {
        Self {
            bound,
            dropout: None,
            ln_eps: 1e-5,
        }
    }

    pub fn drop(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self.dropout {
            Some(d) => d.apply(x),
            None => Ok(x),
        }
    }
}
