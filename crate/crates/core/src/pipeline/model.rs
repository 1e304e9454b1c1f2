use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{ConvStack, FeatureRecord};
use crate::config::{FeatureSource, GraphormerConfig};
use crate::encoder::{stack_forward, Ctx, Dropout, Linear, StackParams};
use crate::error::{Error, Result};
use crate::graph::{
    build_coarsening, build_token_graph, generate_synthetic_template, Camera, Coarsening, Image, NormalizedAdjacency,
    TemplateMesh, TokenLayout, Vec3,
};
use crate::numerics::{Bound, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Random stream used for parameter initialization under `train.seed`.
pub const INIT_STREAM: u64 = 0;

/// Template-derived structure shared by every forward pass.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub template: TemplateMesh,
    pub coarsening: Coarsening,
    pub adjacency: NormalizedAdjacency,
    pub layout: TokenLayout,
    /// Rest joints then rest coarse vertices (group centroids).
    pub query_positions: Vec<Vec3>,
}

impl Geometry {
    pub fn new(config: &GraphormerConfig) -> Result<Self> {
        let m = &config.model;
        let template = generate_synthetic_template(&m.template)?;
        let coarsening = build_coarsening(&template)?;
        let adjacency = build_token_graph(&template, &coarsening, m.grid_tokens(), m.joint_vertex_links)?;
        let layout = TokenLayout {
            grid: m.grid_tokens(),
            joints: template.num_joints(),
            vertices: template.num_coarse(),
        };
        let mut query_positions = template.rest_joints.clone();
        query_positions.extend(coarsening.apply_down(&template.rest_vertices));
        Ok(Self {
            template,
            coarsening,
            adjacency,
            layout,
            query_positions,
        })
    }
}

/// Grid-cell MLP `c → token_dim → token_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub features: Option<ConvStack>,
    pub tokenizer: Option<Tokenizer>,
    pub stack: StackParams,
    /// `V_fine × V_coarse`.
    pub upsampler: ParamId,
    /// `d_last × 3`; outputs `(s, tx, ty)`.
    pub camera: Linear,
}

pub enum ModelInput<'a> {
    Image(&'a Image),
    Features(&'a FeatureRecord),
}

#[derive(Default)]
pub struct ForwardOptions<'a> {
    /// `Some` only while training.
    pub dropout: Option<&'a Dropout>,
    /// Query-token indices (`0..J+V_coarse`) whose inputs are zeroed.
    pub mask: &'a [usize],
}

pub struct ForwardOutput<'t, T: Real> {
    pub fine: Var<'t, T>,
    pub coarse: Var<'t, T>,
    pub intermediate_coarse: Vec<Var<'t, T>>,
    pub joints3d: Var<'t, T>,
    pub joints2d: Var<'t, T>,
    /// `1 × 3`: `(s, tx, ty)`.
    pub camera: Var<'t, T>,
    /// `attn[encoder][block][head]`, each `n × n`.
    pub attn: Vec<Vec<Vec<Var<'t, T>>>>,
}

/// Plain-value prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub fine_vertices: Vec<Vec3>,
    pub coarse_vertices: Vec<Vec3>,
    pub intermediate_coarse: Vec<Vec<Vec3>>,
    pub joints3d: Vec<Vec3>,
    pub joints2d: Vec<[f64; 2]>,
    pub camera: Camera,
    /// Filled only when requested.
    pub attention: Vec<Vec<Vec<Tensor<f64>>>>,
}

pub struct Model<T: Real> {
    pub config: GraphormerConfig,
    pub geometry: Geometry,
    pub store: ParamStore<T>,
    pub params: ModelParams,
    adjacency: Arc<Tensor<T>>,
    positions: Arc<Tensor<T>>,
}

impl<T: Real> Model<T> {
    /// Fresh model initialized from `train.seed`.
    pub fn init(config: &GraphormerConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        rng.set_stream(INIT_STREAM);
        Self::new(config, &mut rng)
    }

    pub fn new(config: &GraphormerConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let geometry = Geometry::new(config)?;
        let m = &config.model;
        let mut store = ParamStore::new();
        let features = (m.features == FeatureSource::Conv).then(|| {
            let [c1, c2] = [m.conv_channels[0], m.conv_channels[1]];
            ConvStack::new(&mut store, "features", config.data.image_size, [c1, c2, m.grid_channels, m.global_dim], rng)
        });
        let td = m.token_dim();
        let tokenizer = m.grid_features.then(|| Tokenizer {
            fc1: Linear::new(&mut store, "tokenizer.fc1", m.grid_channels, td, true, rng),
            fc2: Linear::new(&mut store, "tokenizer.fc2", td, td, true, rng),
        });
        let stack = StackParams::new(&mut store, "stack", &m.stack_spec(), rng)?;
        let upsampler = store.add("upsampler", geometry.coarsening.up0_tensor());
        let d_last = *m.dims.last().expect("validated");
        let camera = Linear::new(&mut store, "camera", d_last, 3, true, rng);
        let cam_bias = camera.b.expect("camera head has a bias");
        store.set(cam_bias, Tensor::from_f64(&[1, 3], &[1.0, 0.0, 0.0])?)?;
        let adjacency = Arc::new(geometry.adjacency.to_tensor());
        let flat: Vec<f64> = geometry.query_positions.iter().flatten().copied().collect();
        let positions = Arc::new(Tensor::from_f64(&[geometry.query_positions.len(), 3], &flat)?);
        Ok(Self {
            config: config.clone(),
            geometry,
            store,
            params: ModelParams {
                features,
                tokenizer,
                stack,
                upsampler,
                camera,
            },
            adjacency,
            positions,
        })
    }

    pub fn layout(&self) -> TokenLayout {
        self.geometry.layout
    }

    /// Whether the optimizer should update parameter `id`.
    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.config.model.learn_upsampler || id != self.params.upsampler
    }

    pub fn forward<'t>(
        &self,
        bound: &Bound<'t, T>,
        input: ModelInput<'_>,
        opts: &ForwardOptions<'_>,
    ) -> Result<ForwardOutput<'t, T>> {
        let tape = bound[self.params.upsampler].tape();
        let m = &self.config.model;
        let ctx = Ctx {
            bound,
            dropout: opts.dropout,
            ln_eps: m.ln_eps,
        };
        let (grid, global) = match (input, &self.params.features) {
            (ModelInput::Image(img), Some(conv)) => {
                let size = self.config.data.image_size;
                if img.height != size || img.width != size {
                    return Err(Error::Config(format!(
                        "image is {}x{}, config expects {size}x{size}",
                        img.height, img.width
                    )));
                }
                let x = tape.constant(Tensor::from_f64(&[size * size, 1], &img.pixels)?);
                let f = conv.forward(bound, x)?;
                (f.grid, f.global)
            }
            (ModelInput::Features(rec), None) => {
                let g2 = m.grid_size * m.grid_size;
                if rec.grid.shape() != [g2, m.grid_channels] || rec.global.shape() != [1, m.global_dim] {
                    return Err(Error::Config(format!(
                        "features are grid {:?} / global {:?}, config expects [{g2}, {}] / [1, {}]",
                        rec.grid.shape(),
                        rec.global.shape(),
                        m.grid_channels,
                        m.global_dim
                    )));
                }
                (tape.constant(rec.grid.cast()), tape.constant(rec.global.cast()))
            }
            (ModelInput::Image(_), None) => {
                return Err(Error::Config("model reads precomputed features but got an image".into()))
            }
            (ModelInput::Features(_), Some(_)) => {
                return Err(Error::Config("model has a conv feature stack but got precomputed features".into()))
            }
        };
        let positions = tape.constant_shared(Arc::clone(&self.positions));
        let grid = self.params.tokenizer.is_some().then_some(grid);
        let mut tokens = tokenize(bound, self.params.tokenizer.as_ref(), grid, global, positions)?;
        if !opts.mask.is_empty() {
            tokens = apply_mask(tokens, self.layout(), opts.mask)?;
        }
        let adj = tape.constant_shared(Arc::clone(&self.adjacency));
        let out = stack_forward(&ctx, adj, tokens, self.layout(), &self.params.stack)?;
        let camera = self.params.camera.forward(bound, out.tokens.mean_rows()?)?;
        let fine = upsample_mesh(bound[self.params.upsampler], out.coarse)?;
        let joints2d = project_joints(out.joints, camera)?;
        Ok(ForwardOutput {
            fine,
            coarse: out.coarse,
            intermediate_coarse: out.intermediate_coarse,
            joints3d: out.joints,
            joints2d,
            camera,
            attn: out.attn,
        })
    }

    /// Evaluation-mode forward pass on a private tape.
    pub fn predict(&self, input: ModelInput<'_>, with_attention: bool) -> Result<ModelOutput> {
        let tape = Tape::with_finite_checks(self.config.train.debug_checks);
        let bound = self.store.bind(&tape);
        let out = self.forward(&bound, input, &ForwardOptions::default())?;
        let cam = out.camera.value();
        let attention = if with_attention {
            out.attn
                .iter()
                .map(|enc| enc.iter().map(|blk| blk.iter().map(|h| h.value().cast()).collect()).collect())
                .collect()
        } else {
            Vec::new()
        };
        Ok(ModelOutput {
            fine_vertices: rows3(&out.fine.value()),
            coarse_vertices: rows3(&out.coarse.value()),
            intermediate_coarse: out.intermediate_coarse.iter().map(|v| rows3(&v.value())).collect(),
            joints3d: rows3(&out.joints3d.value()),
            joints2d: out.joints2d.value().to_f64_vec().chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
            camera: Camera {
                s: cam.data()[0].as_f64(),
                tx: cam.data()[1].as_f64(),
                ty: cam.data()[2].as_f64(),
            },
            attention,
        })
    }
}

/// Grid tokens through the tokenizer MLP, then one `global ++ xyz` token
/// per query position.
pub fn tokenize<'t, T: Real>(
    bound: &Bound<'t, T>,
    tokenizer: Option<&Tokenizer>,
    grid: Option<Var<'t, T>>,
    global: Var<'t, T>,
    positions: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let gshape = global.shape();
    let pshape = positions.shape();
    if gshape.len() != 2 || gshape[0] != 1 || pshape.len() != 2 || pshape[1] != 3 {
        return Err(Error::Config(format!(
            "tokenize expects a 1×c_g global vector and k×3 positions, got {gshape:?} and {pshape:?}"
        )));
    }
    let ones = positions.tape().constant(Tensor::filled(&[pshape[0], 1], T::one()));
    let queries = Var::concat(&[ones.matmul(global)?, positions], 1)?;
    match (tokenizer, grid) {
        (Some(tok), Some(grid)) => {
            let h = tok.fc1.forward(bound, grid)?.gelu()?;
            let g = tok.fc2.forward(bound, h)?;
            if g.shape()[1] != gshape[1] + 3 {
                return Err(Error::Config(format!(
                    "tokenizer emits width {}, queries are {}",
                    g.shape()[1],
                    gshape[1] + 3
                )));
            }
            Var::concat(&[g, queries], 0)
        }
        (None, None) => Ok(queries),
        _ => Err(Error::Config("grid tokens and tokenizer must be both present or both absent".into())),
    }
}

/// Zeroes the listed query tokens.
pub fn apply_mask<'t, T: Real>(tokens: Var<'t, T>, layout: TokenLayout, mask: &[usize]) -> Result<Var<'t, T>> {
    let shape = tokens.shape();
    let mut m = Tensor::filled(&shape, T::one());
    let width = shape[1];
    for &q in mask {
        if q >= layout.queries() {
            return Err(Error::Input(format!("mask index {q} beyond {} query tokens", layout.queries())));
        }
        let row = layout.grid + q;
        m.data_mut()[row * width..(row + 1) * width].fill(T::zero());
    }
    tokens.mul(tokens.tape().constant(m))
}

/// `fine = U · coarse`.
pub fn upsample_mesh<'t, T: Real>(u: Var<'t, T>, coarse: Var<'t, T>) -> Result<Var<'t, T>> {
    u.matmul(coarse)
}

/// `s·(x, y) + (tx, ty)` for every row of `points`, camera `1 × 3`.
pub fn project_joints<'t, T: Real>(points: Var<'t, T>, camera: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = camera.slice(1, 0, 1)?;
    let t = camera.slice(1, 1, 2)?;
    points.slice(1, 0, 2)?.mul_scalar(s)?.add_row(t)
}

pub(crate) fn rows3<T: Real>(t: &Tensor<T>) -> Vec<Vec3> {
    t.to_f64_vec().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}
