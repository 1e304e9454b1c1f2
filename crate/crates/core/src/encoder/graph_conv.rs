use rand::Rng;

use super::layers::{Ctx, LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Real, Var};

/// `GELU(Ā · Y · W_G)`.
pub fn graph_conv<'t, T: Real>(adj: Var<'t, T>, y: Var<'t, T>, w_g: Var<'t, T>) -> Result<Var<'t, T>> {
    adj.matmul(y)?.matmul(w_g)?.gelu()
}

/// Bottleneck residual block around one graph convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrbParams {
    pub ln_a: LayerNorm,
    pub down: Linear,
    pub ln_b: LayerNorm,
    pub w_g: ParamId,
    pub ln_c: LayerNorm,
    pub up: Linear,
}

impl GrbParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize, rng: &mut impl Rng) -> Result<Self> {
        if d % 2 != 0 || d == 0 {
            return Err(Error::Config(format!("graph residual block needs an even hidden size, got {d}")));
        }
        let h = d / 2;
        Ok(Self {
            ln_a: LayerNorm::new(store, &format!("{name}.ln_a"), d),
            down: Linear::new(store, &format!("{name}.down"), d, h, true, rng),
            ln_b: LayerNorm::new(store, &format!("{name}.ln_b"), h),
            w_g: store.normal(format!("{name}.w_g"), &[h, h], 1.0 / (h as f64).sqrt(), rng),
            ln_c: LayerNorm::new(store, &format!("{name}.ln_c"), h),
            up: Linear::new(store, &format!("{name}.up"), h, d, true, rng),
        })
    }
}

/// Closed-form parameter count of [`GrbParams`] at hidden size `d`.
pub fn grb_param_count(d: usize) -> usize {
    let h = d / 2;
    d * h + h + h * h + h * d + d + 2 * d + 2 * h + 2 * h
}

/// The residual branch `Z` alone:
/// `LN_a → GELU → W_down → LN_b → GELU → GraphConv → LN_c → GELU → W_up`.
pub fn grb_branch<'t, T: Real>(ctx: &Ctx<'_, 't, T>, adj: Var<'t, T>, y: Var<'t, T>, p: &GrbParams) -> Result<Var<'t, T>> {
    let z = p.ln_a.forward(ctx, y)?.gelu()?;
    let z = p.down.forward(ctx.bound, z)?;
    let z = p.ln_b.forward(ctx, z)?.gelu()?;
    let z = graph_conv(adj, z, ctx.bound[p.w_g])?;
    let z = p.ln_c.forward(ctx, z)?.gelu()?;
    p.up.forward(ctx.bound, z)
}

/// `Y + Z(Ā, Y)`.
pub fn graph_residual_block<'t, T: Real>(
    ctx: &Ctx<'_, 't, T>,
    adj: Var<'t, T>,
    y: Var<'t, T>,
    p: &GrbParams,
) -> Result<Var<'t, T>> {
    y.add(grb_branch(ctx, adj, y, p)?)
}
