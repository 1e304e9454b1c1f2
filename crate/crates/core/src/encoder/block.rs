use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{mhsa_forward, MhsaParams};
use super::graph_conv::{graph_conv, grb_branch, grb_param_count, GrbParams};
use super::layers::{Ctx, LayerNorm, Linear};
use crate::error::Result;
use crate::numerics::{ParamId, ParamStore, Real, Var};

/// Where the graph module sits relative to self-attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrbDesign {
    /// `H = X + G(MHSA(LN X))`
    After,
    /// `H = X + MHSA(G(LN X))`
    Before,
    /// `H = X + MHSA(LN X) + branch(LN X)`
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrbKind {
    /// A single `GELU(Ā Y W_G)` with `W_G: d × d`.
    BasicConv,
    /// The bottleneck Graph Residual Block.
    ResidualBlock,
    /// No graph module; the MLP hidden layer is widened by as many units as
    /// it takes to match the residual block's parameter count.
    MlpEquivalent,
}

impl GrbDesign {
    pub fn name(self) -> &'static str {
        match self {
            Self::After => "after",
            Self::Before => "before",
            Self::Parallel => "parallel",
        }
    }
}

impl GrbKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::BasicConv => "basic_conv",
            Self::ResidualBlock => "residual_block",
            Self::MlpEquivalent => "mlp_equivalent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpec {
    pub d: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// `None` disables the graph module (plain transformer block).
    pub graph: Option<(GrbKind, GrbDesign)>,
}

impl BlockSpec {
    pub fn mlp_hidden(&self) -> usize {
        let base = self.mlp_ratio * self.d;
        match self.graph {
            Some((GrbKind::MlpEquivalent, _)) => base + mlp_equivalent_units(self.d),
            _ => base,
        }
    }
}

/// Hidden units whose `2d + 1` parameters each best match one residual block.
pub fn mlp_equivalent_units(d: usize) -> usize {
    let per = 2 * d + 1;
    (grb_param_count(d) + per / 2) / per
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphModule {
    None,
    Basic { w_g: ParamId },
    Residual(GrbParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockParams {
    pub ln1: LayerNorm,
    pub mhsa: MhsaParams,
    pub graph: GraphModule,
    pub design: GrbDesign,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl BlockParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, spec: &BlockSpec, rng: &mut impl Rng) -> Result<Self> {
        let d = spec.d;
        let ln1 = LayerNorm::new(store, &format!("{name}.ln1"), d);
        let mhsa = MhsaParams::new(store, &format!("{name}.attn"), d, spec.heads, rng)?;
        let (graph, design) = match spec.graph {
            None | Some((GrbKind::MlpEquivalent, _)) => (GraphModule::None, GrbDesign::After),
            Some((GrbKind::BasicConv, design)) => (
                GraphModule::Basic {
                    w_g: store.normal(format!("{name}.gconv.w_g"), &[d, d], 1.0 / (d as f64).sqrt(), rng),
                },
                design,
            ),
            Some((GrbKind::ResidualBlock, design)) => {
                (GraphModule::Residual(GrbParams::new(store, &format!("{name}.grb"), d, rng)?), design)
            }
        };
        let ln2 = LayerNorm::new(store, &format!("{name}.ln2"), d);
        let hidden = spec.mlp_hidden();
        let fc1 = Linear::new(store, &format!("{name}.mlp.fc1"), d, hidden, true, rng);
        let fc2 = Linear::new(store, &format!("{name}.mlp.fc2"), hidden, d, true, rng);
        Ok(Self {
            ln1,
            mhsa,
            graph,
            design,
            ln2,
            fc1,
            fc2,
        })
    }
}

fn apply_graph<'t, T: Real>(
    ctx: &Ctx<'_, 't, T>,
    adj: Var<'t, T>,
    y: Var<'t, T>,
    g: &GraphModule,
    residual: bool,
) -> Result<Var<'t, T>> {
    match g {
        GraphModule::None => Ok(y),
        GraphModule::Basic { w_g } => graph_conv(adj, y, ctx.bound[*w_g]),
        GraphModule::Residual(p) => {
            let z = grb_branch(ctx, adj, y, p)?;
            if residual {
                y.add(z)
            } else {
                Ok(z)
            }
        }
    }
}

/// Pre-norm block: graph module and MHSA share the first residual branch
/// (arranged by `design`), then `H + MLP(LN2 H)` with a GELU MLP.
pub fn encoder_block_forward<'t, T: Real>(
    ctx: &Ctx<'_, 't, T>,
    adj: Var<'t, T>,
    x: Var<'t, T>,
    p: &BlockParams,
) -> Result<(Var<'t, T>, Vec<Var<'t, T>>)> {
    let n1 = p.ln1.forward(ctx, x)?;
    let (h, attn) = if matches!(p.graph, GraphModule::None) {
        let m = mhsa_forward(ctx, n1, &p.mhsa)?;
        (x.add(ctx.drop(m.y)?)?, m.attn)
    } else {
        match p.design {
            GrbDesign::After => {
                let m = mhsa_forward(ctx, n1, &p.mhsa)?;
                let g = apply_graph(ctx, adj, ctx.drop(m.y)?, &p.graph, true)?;
                (x.add(g)?, m.attn)
            }
            GrbDesign::Before => {
                let g = apply_graph(ctx, adj, n1, &p.graph, true)?;
                let m = mhsa_forward(ctx, g, &p.mhsa)?;
                (x.add(ctx.drop(m.y)?)?, m.attn)
            }
            GrbDesign::Parallel => {
                let m = mhsa_forward(ctx, n1, &p.mhsa)?;
                let g = apply_graph(ctx, adj, n1, &p.graph, false)?;
                (x.add(ctx.drop(m.y)?)?.add(g)?, m.attn)
            }
        }
    };
    let n2 = p.ln2.forward(ctx, h)?;
    let mlp = p.fc2.forward(ctx.bound, p.fc1.forward(ctx.bound, n2)?.gelu()?)?;
    Ok((h.add(ctx.drop(mlp)?)?, attn))
}
