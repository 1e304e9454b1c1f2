//! Run configuration: every architectural, data and training knob, with
//! TOML parsing over a preset base, canonical rendering and a stable hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{GrbDesign, GrbKind, StackSpec};
use crate::error::{Error, Result};
use crate::graph::{DataSpec, TemplateSpec};
use crate::training::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F64,
    F32,
}

/// Where grid features and the global vector come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Trainable four-layer conv stack over the silhouette.
    Conv,
    /// Feature files under `data.features_dir`.
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    PaperFaithful,
}

impl Preset {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::Desk),
            "paper-faithful" | "paper_faithful" => Ok(Self::PaperFaithful),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected `desk` or `paper-faithful`)"
            ))),
        }
    }

    pub fn config(self) -> GraphormerConfig {
        match self {
            Self::Desk => GraphormerConfig::desk(),
            Self::PaperFaithful => GraphormerConfig::paper_faithful(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `f64` (default) or `f32`.
    pub precision: Precision,
    /// `conv` (default) or `precomputed`.
    pub features: FeatureSource,
    /// Grid side `g`; the model sees `g²` grid tokens. Default 7.
    pub grid_size: usize,
    /// Channels `c` per grid cell. Default 32.
    pub grid_channels: usize,
    /// Global feature width `c_g`; tokens are `c_g + 3` wide. Default 64.
    pub global_dim: usize,
    /// Channels of the first two conv layers. Default `[8, 16]`.
    pub conv_channels: Vec<usize>,
    /// Include grid tokens in the sequence. Default true.
    pub grid_features: bool,
    /// Encoder hidden sizes. Default `[64, 32, 16]`.
    pub dims: Vec<usize>,
    /// Default 4.
    pub blocks_per_encoder: usize,
    /// Default 4.
    pub heads: usize,
    /// MLP expansion ratio. Default 4.
    pub mlp_ratio: usize,
    /// 1-based encoders carrying a graph module. Default `[3]`.
    pub grb_encoders: Vec<usize>,
    /// `residual_block` (default), `basic_conv` or `mlp_equivalent`.
    pub grb_kind: GrbKind,
    /// `after` (default), `before` or `parallel`.
    pub grb_design: GrbDesign,
    /// Link each joint token to its nearest coarse vertex. Default true.
    pub joint_vertex_links: bool,
    /// Dropout after attention and MLP while training. Default 0.1.
    pub dropout: f64,
    /// Default 1e-5.
    pub ln_eps: f64,
    /// Train the coarse-to-fine upsampler. Default true.
    pub learn_upsampler: bool,
    pub template: TemplateSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            precision: Precision::F64,
            features: FeatureSource::Conv,
            grid_size: 7,
            grid_channels: 32,
            global_dim: 64,
            conv_channels: vec![8, 16],
            grid_features: true,
            dims: vec![64, 32, 16],
            blocks_per_encoder: 4,
            heads: 4,
            mlp_ratio: 4,
            grb_encoders: vec![3],
            grb_kind: GrbKind::ResidualBlock,
            grb_design: GrbDesign::After,
            joint_vertex_links: true,
            dropout: 0.1,
            ln_eps: 1e-5,
            learn_upsampler: true,
            template: TemplateSpec::desk(),
        }
    }
}

impl ModelConfig {
    pub fn token_dim(&self) -> usize {
        self.global_dim + 3
    }

    pub fn grid_tokens(&self) -> usize {
        if self.grid_features {
            self.grid_size * self.grid_size
        } else {
            0
        }
    }

    pub fn stack_spec(&self) -> StackSpec {
        StackSpec {
            token_dim: self.token_dim(),
            dims: self.dims.clone(),
            blocks_per_encoder: self.blocks_per_encoder,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            grb_encoders: (1..=self.dims.len()).map(|k| self.grb_encoders.contains(&k)).collect(),
            grb_kind: self.grb_kind,
            grb_design: self.grb_design,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Default 256.
    pub train_count: usize,
    /// Default 64.
    pub test_count: usize,
    /// Square silhouette side in pixels. Default 56.
    pub image_size: usize,
    /// Per-axis joint rotation bound in radians. Default 0.5.
    pub angle_range: f64,
    /// Default 0.7.
    pub scale_min: f64,
    /// Default 1.3.
    pub scale_max: f64,
    /// Default 0.2.
    pub translation_range: f64,
    /// Default 1234.
    pub seed: u64,
    /// Feature files for `model.features = "precomputed"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_dir: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_count: 256,
            test_count: 64,
            image_size: 56,
            angle_range: 0.5,
            scale_min: 0.7,
            scale_max: 1.3,
            translation_range: 0.2,
            seed: 1234,
            features_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }
}

impl DataConfig {
    pub fn split_spec(&self, split: Split) -> DataSpec {
        let (count, seed) = match split {
            Split::Train => (self.train_count, self.seed),
            Split::Test => (self.test_count, self.seed ^ 0x9e37_79b9_7f4a_7c15),
        };
        DataSpec {
            count,
            angle_range: self.angle_range,
            image_size: self.image_size,
            scale_min: self.scale_min,
            scale_max: self.scale_max,
            translation_range: self.translation_range,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Default 60.
    pub epochs: usize,
    /// Default 32.
    pub batch_size: usize,
    /// Default 1e-3.
    pub base_lr: f64,
    /// Default 30.
    pub lr_drop_epoch: usize,
    /// Default 10.
    pub lr_drop_factor: f64,
    /// Seeds initialization, shuffling, masking and dropout. Default 0.
    pub seed: u64,
    /// Masked vertex modeling on/off. Default true.
    pub masking: bool,
    /// Default 0.3.
    pub mask_ratio_max: f64,
    /// Global gradient-norm clip; 0 disables. Default 0.
    pub grad_clip: f64,
    /// Write a checkpoint every k epochs; 0 writes only the final one. Default 0.
    pub checkpoint_every: usize,
    /// Record elapsed seconds in the metric log; false writes 0. Default true.
    pub log_wall_time: bool,
    /// Threads for per-sample work. Default 1.
    pub workers: usize,
    /// Abort on any non-finite intermediate value. Default false.
    pub debug_checks: bool,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            base_lr: 1e-3,
            lr_drop_epoch: 30,
            lr_drop_factor: 10.0,
            seed: 0,
            masking: true,
            mask_ratio_max: 0.3,
            grad_clip: 0.0,
            checkpoint_every: 0,
            log_wall_time: true,
            workers: 1,
            debug_checks: false,
            loss_weights: LossWeights::default(),
        }
    }
}

/// Axes of the architecture sweep. Cells with no graph encoders ignore the
/// kind and design axes, so they appear once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    /// Default `[true, false]`.
    pub grid_features: Vec<bool>,
    /// Default `[[], [3]]`.
    pub grb_encoders: Vec<Vec<usize>>,
    /// Default `["basic_conv", "residual_block"]`.
    pub grb_kind: Vec<GrbKind>,
    /// Default `["after"]`.
    pub grb_design: Vec<GrbDesign>,
    /// Training seeds; empty uses `train.seed`. Default empty.
    pub seeds: Vec<u64>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            grid_features: vec![true, false],
            grb_encoders: vec![vec![], vec![3]],
            grb_kind: vec![GrbKind::BasicConv, GrbKind::ResidualBlock],
            grb_design: vec![GrbDesign::After],
            seeds: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub grid_features: bool,
    pub grb_encoders: Vec<usize>,
    pub grb_kind: Option<GrbKind>,
    pub grb_design: Option<GrbDesign>,
    pub seed: u64,
}

impl AblationCell {
    /// `base` with this cell's axes applied.
    pub fn apply(&self, base: &GraphormerConfig) -> GraphormerConfig {
        let mut cfg = base.clone();
        cfg.model.grid_features = self.grid_features;
        cfg.model.grb_encoders = self.grb_encoders.clone();
        if let Some(k) = self.grb_kind {
            cfg.model.grb_kind = k;
        }
        if let Some(d) = self.grb_design {
            cfg.model.grb_design = d;
        }
        cfg.train.seed = self.seed;
        cfg
    }
}

impl AblationSpec {
    /// Cells in spec order: grid, encoders, kind, design, seed.
    pub fn cells(&self, default_seed: u64) -> Vec<AblationCell> {
        let seeds = if self.seeds.is_empty() {
            vec![default_seed]
        } else {
            self.seeds.clone()
        };
        let mut out = Vec::new();
        for &grid in &self.grid_features {
            for enc in &self.grb_encoders {
                let variants: Vec<(Option<GrbKind>, Option<GrbDesign>)> = if enc.is_empty() {
                    vec![(None, None)]
                } else {
                    self.grb_kind
                        .iter()
                        .flat_map(|&k| self.grb_design.iter().map(move |&d| (Some(k), Some(d))))
                        .collect()
                };
                for (kind, design) in variants {
                    for &seed in &seeds {
                        out.push(AblationCell {
                            grid_features: grid,
                            grb_encoders: enc.clone(),
                            grb_kind: kind,
                            grb_design: design,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GraphormerConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub ablation: AblationSpec,
}

impl GraphormerConfig {
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.model.precision = Precision::F32;
        cfg
    }

    /// Paper token counts and widths: 49 + 14 + 431 tokens of width 2051,
    /// encoders 1024/256/64, 200 epochs at 1e-4 dropped ×10 after 100.
    pub fn paper_faithful() -> Self {
        let mut cfg = Self::desk();
        cfg.model.grid_channels = 1024;
        cfg.model.global_dim = 2048;
        cfg.model.conv_channels = vec![64, 256];
        cfg.model.dims = vec![1024, 256, 64];
        cfg.model.template = TemplateSpec::paper_faithful();
        cfg.train.epochs = 200;
        cfg.train.base_lr = 1e-4;
        cfg.train.lr_drop_epoch = 100;
        cfg
    }

    /// Parses `text` as overrides on top of `base`. Unknown keys are errors.
    pub fn from_toml_str(text: &str, base: &GraphormerConfig) -> Result<Self> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, overrides);
        let cfg: GraphormerConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, base: &GraphormerConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, base)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    /// Canonical text with every key materialized.
    pub fn render(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical rendering, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.render().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let bad = |msg: String| Err(Error::Config(msg));
        self.model.template.validate()?;
        self.model.stack_spec().validate()?;
        if let Some(&k) = m.grb_encoders.iter().find(|&&k| k == 0 || k > m.dims.len()) {
            return bad(format!("model.grb_encoders: encoder {k} does not exist (1..={})", m.dims.len()));
        }
        if m.grid_size == 0 || m.grid_channels == 0 || m.global_dim == 0 {
            return bad("model.grid_size, grid_channels and global_dim must be >= 1".into());
        }
        if m.conv_channels.len() != 2 || m.conv_channels.contains(&0) {
            return bad(format!("model.conv_channels needs two positive entries, got {:?}", m.conv_channels));
        }
        if m.features == FeatureSource::Conv && self.data.image_size.div_ceil(8) != m.grid_size {
            return bad(format!(
                "data.image_size {} gives a {}x{} grid after three stride-2 convs, model.grid_size is {}",
                self.data.image_size,
                self.data.image_size.div_ceil(8),
                self.data.image_size.div_ceil(8),
                m.grid_size
            ));
        }
        if m.features == FeatureSource::Precomputed && self.data.features_dir.is_none() {
            return bad("model.features = \"precomputed\" requires data.features_dir".into());
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return bad(format!("model.dropout must be in [0, 1), got {}", m.dropout));
        }
        if !(m.ln_eps > 0.0) {
            return bad("model.ln_eps must be positive".into());
        }
        let d = &self.data;
        if d.image_size < 8 {
            return bad(format!("data.image_size must be >= 8, got {}", d.image_size));
        }
        if !(d.scale_min > 0.0 && d.scale_min <= d.scale_max) {
            return bad("data.scale_min must be positive and <= data.scale_max".into());
        }
        if d.angle_range < 0.0 || d.translation_range < 0.0 {
            return bad("data.angle_range and data.translation_range must be >= 0".into());
        }
        let t = &self.train;
        if t.batch_size == 0 || t.workers == 0 {
            return bad("train.batch_size and train.workers must be >= 1".into());
        }
        if !(t.base_lr >= 0.0) || !(t.lr_drop_factor > 0.0) {
            return bad("train.base_lr must be >= 0 and train.lr_drop_factor > 0".into());
        }
        if !(0.0..=1.0).contains(&t.mask_ratio_max) {
            return bad(format!("train.mask_ratio_max must be in [0, 1], got {}", t.mask_ratio_max));
        }
        if !(t.grad_clip >= 0.0) {
            return bad("train.grad_clip must be >= 0".into());
        }
        t.loss_weights.validate()?;
        for enc in &self.ablation.grb_encoders {
            if let Some(&k) = enc.iter().find(|&&k| k == 0 || k > m.dims.len()) {
                return bad(format!("ablation.grb_encoders: encoder {k} does not exist"));
            }
        }
        if self.ablation.grid_features.is_empty() || self.ablation.grb_encoders.is_empty() {
            return bad("ablation.grid_features and ablation.grb_encoders must not be empty".into());
        }
        if self.ablation.grb_kind.is_empty() || self.ablation.grb_design.is_empty() {
            return bad("ablation.grb_kind and ablation.grb_design must not be empty".into());
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
