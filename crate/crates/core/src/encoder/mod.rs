//! Multi-head self-attention, graph convolution, the Graph Residual Block,
//! the pre-norm encoder block and the dimension-reducing encoder stack.

mod attention;
mod block;
mod graph_conv;
mod layers;
mod stack;

pub use attention::{mhsa_forward, MhsaOutput, MhsaParams};
pub use block::{encoder_block_forward, mlp_equivalent_units, BlockParams, BlockSpec, GraphModule, GrbDesign, GrbKind};
pub use graph_conv::{graph_conv, graph_residual_block, grb_branch, grb_param_count, GrbParams};
pub use layers::{Ctx, Dropout, LayerNorm, Linear};
pub use stack::{graphormer_encoder_forward, stack_forward, EncoderParams, StackOutput, StackParams, StackSpec};
