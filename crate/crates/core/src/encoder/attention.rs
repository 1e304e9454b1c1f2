use rand::Rng;

use super::layers::Ctx;
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Real, Var};

/// `W_Q, W_K, W_V, W_O`, all `d × d`, no biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MhsaParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl MhsaParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        check_heads(d, heads)?;
        let std = 1.0 / (d as f64).sqrt();
        Ok(Self {
            wq: store.normal(format!("{name}.wq"), &[d, d], std, rng),
            wk: store.normal(format!("{name}.wk"), &[d, d], std, rng),
            wv: store.normal(format!("{name}.wv"), &[d, d], std, rng),
            wo: store.normal(format!("{name}.wo"), &[d, d], std, rng),
            heads,
        })
    }
}

fn check_heads(d: usize, heads: usize) -> Result<()> {
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("{heads} heads do not divide hidden size {d}")));
    }
    Ok(())
}

pub struct MhsaOutput<'t, T: Real> {
    pub y: Var<'t, T>,
    /// One `n × n` row-stochastic map per head.
    pub attn: Vec<Var<'t, T>>,
}

/// `Q, K, V = X·W_Q, X·W_K, X·W_V`; per head `softmax(Q_h K_hᵀ / √(d/h)) V_h`;
/// heads concatenated and projected by `W_O`.
pub fn mhsa_forward<'t, T: Real>(ctx: &Ctx<'_, 't, T>, x: Var<'t, T>, p: &MhsaParams) -> Result<MhsaOutput<'t, T>> {
    let shape = x.shape();
    let d = shape[shape.len() - 1];
    check_heads(d, p.heads)?;
    let b = ctx.bound;
    let q = x.matmul(b[p.wq])?;
    let k = x.matmul(b[p.wk])?;
    let v = x.matmul(b[p.wv])?;
    let dh = d / p.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(p.heads);
    let mut attn = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (qh, kh, vh) = if p.heads == 1 {
            (q, k, v)
        } else {
            (q.slice(1, h * dh, dh)?, k.slice(1, h * dh, dh)?, v.slice(1, h * dh, dh)?)
        };
        let a = qh.matmul_t(kh)?.scale(scale)?.softmax_rows()?;
        outs.push(a.matmul(vh)?);
        attn.push(a);
    }
    let cat = if outs.len() == 1 { outs[0] } else { Var::concat(&outs, 1)? };
    Ok(MhsaOutput {
        y: cat.matmul(b[p.wo])?,
        attn,
    })
}
