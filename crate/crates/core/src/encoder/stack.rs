use rand::Rng;

use super::block::{encoder_block_forward, BlockParams, BlockSpec, GrbDesign, GrbKind};
use super::layers::{Ctx, Linear};
use crate::error::{Error, Result};
use crate::graph::TokenLayout;
use crate::numerics::{ParamStore, Real, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct StackSpec {
    pub token_dim: usize,
    /// Hidden size of each encoder, e.g. `[1024, 256, 64]`.
    pub dims: Vec<usize>,
    pub blocks_per_encoder: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Graph module on/off per encoder.
    pub grb_encoders: Vec<bool>,
    pub grb_kind: GrbKind,
    pub grb_design: GrbDesign,
}

impl StackSpec {
    pub fn block_spec(&self, encoder: usize) -> BlockSpec {
        BlockSpec {
            d: self.dims[encoder],
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            graph: self.grb_encoders[encoder].then_some((self.grb_kind, self.grb_design)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::Config("at least one encoder is required".into()));
        }
        if self.grb_encoders.len() != self.dims.len() {
            return Err(Error::Config(format!(
                "{} graph flags for {} encoders",
                self.grb_encoders.len(),
                self.dims.len()
            )));
        }
        if self.blocks_per_encoder == 0 || self.mlp_ratio == 0 || self.token_dim == 0 {
            return Err(Error::Config("blocks, mlp ratio and token dim must be >= 1".into()));
        }
        for (k, &d) in self.dims.iter().enumerate() {
            if self.heads == 0 || d % self.heads != 0 {
                return Err(Error::Config(format!("{} heads do not divide hidden size {d}", self.heads)));
            }
            if self.grb_encoders[k] && self.grb_kind == GrbKind::ResidualBlock && d % 2 != 0 {
                return Err(Error::Config(format!("graph residual block needs an even hidden size, got {d}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderParams {
    /// `d_in × d_k` input projection.
    pub proj: Linear,
    pub blocks: Vec<BlockParams>,
    /// `d_k × 3` intermediate coarse-mesh head (all encoders but the last).
    pub tap: Option<Linear>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackParams {
    pub encoders: Vec<EncoderParams>,
    /// `d_last × 3` regression head.
    pub head: Linear,
}

impl StackParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, spec: &StackSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let last = spec.dims.len() - 1;
        let mut encoders = Vec::with_capacity(spec.dims.len());
        let mut d_in = spec.token_dim;
        for (k, &d) in spec.dims.iter().enumerate() {
            let prefix = format!("{name}.enc{}", k + 1);
            let proj = Linear::new(store, &format!("{prefix}.proj"), d_in, d, true, rng);
            let bspec = spec.block_spec(k);
            let blocks = (0..spec.blocks_per_encoder)
                .map(|b| BlockParams::new(store, &format!("{prefix}.block{}", b + 1), &bspec, rng))
                .collect::<Result<_>>()?;
            let tap = (k < last).then(|| Linear::new(store, &format!("{prefix}.tap"), d, 3, true, rng));
            encoders.push(EncoderParams { proj, blocks, tap });
            d_in = d;
        }
        let head = Linear::new(store, &format!("{name}.head"), spec.dims[last], 3, true, rng);
        Ok(Self { encoders, head })
    }
}

/// Sequential blocks; returns every block's per-head attention.
pub fn graphormer_encoder_forward<'t, T: Real>(
    ctx: &Ctx<'_, 't, T>,
    adj: Var<'t, T>,
    x: Var<'t, T>,
    blocks: &[BlockParams],
) -> Result<(Var<'t, T>, Vec<Vec<Var<'t, T>>>)> {
    let mut h = x;
    let mut maps = Vec::with_capacity(blocks.len());
    for b in blocks {
        let (out, attn) = encoder_block_forward(ctx, adj, h, b)?;
        h = out;
        maps.push(attn);
    }
    Ok((h, maps))
}

pub struct StackOutput<'t, T: Real> {
    pub coarse: Var<'t, T>,
    pub joints: Var<'t, T>,
    /// Coarse vertices read out at each encoder exit; the last is `coarse`.
    pub intermediate_coarse: Vec<Var<'t, T>>,
    /// Output tokens of the last encoder.
    pub tokens: Var<'t, T>,
    /// `attn[encoder][block][head]`.
    pub attn: Vec<Vec<Vec<Var<'t, T>>>>,
}

pub fn stack_forward<'t, T: Real>(
    ctx: &Ctx<'_, 't, T>,
    adj: Var<'t, T>,
    tokens: Var<'t, T>,
    layout: TokenLayout,
    p: &StackParams,
) -> Result<StackOutput<'t, T>> {
    let n = layout.total();
    let tshape = tokens.shape();
    let ashape = adj.shape();
    if tshape[0] != n || ashape != [n, n] {
        return Err(Error::Config(format!(
            "token count mismatch: layout {n}, tokens {}, adjacency {:?}",
            tshape[0], ashape
        )));
    }
    let vo = layout.vertex_offset();
    let mut h = tokens;
    let mut intermediate = Vec::with_capacity(p.encoders.len());
    let mut attn = Vec::with_capacity(p.encoders.len());
    for enc in &p.encoders {
        h = enc.proj.forward(ctx.bound, h)?;
        let (out, maps) = graphormer_encoder_forward(ctx, adj, h, &enc.blocks)?;
        h = out;
        attn.push(maps);
        if let Some(tap) = enc.tap {
            intermediate.push(tap.forward(ctx.bound, h.slice(0, vo, layout.vertices)?)?);
        }
    }
    let out = p.head.forward(ctx.bound, h)?;
    let joints = out.slice(0, layout.joint_offset(), layout.joints)?;
    let coarse = out.slice(0, vo, layout.vertices)?;
    intermediate.push(coarse);
    Ok(StackOutput {
        coarse,
        joints,
        intermediate_coarse: intermediate,
        tokens: h,
        attn,
    })
}
