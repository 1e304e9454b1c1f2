//! Image to mesh: feature extraction, tokenization with template positions,
//! the encoder stack, the camera head and coarse-to-fine upsampling.

mod accounting;
mod features;
mod model;

pub use accounting::{count_params, flops_estimate, param_group, Breakdown};
pub use features::{
    conv_out_size, im2col_index, write_feature_file, ConvFeatures, ConvLayer, ConvStack, FeatureRecord,
    PrecomputedLoader,
};
pub use model::{
    apply_mask, project_joints, tokenize, upsample_mesh, ForwardOptions, ForwardOutput, Geometry, Model, ModelInput,
    ModelOutput, ModelParams, Tokenizer, INIT_STREAM,
};
