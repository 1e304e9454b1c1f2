use std::fs;
use std::path::{Path, PathBuf};

use mesh_graphormer::config::{FeatureSource, GraphormerConfig, Precision, Split};
use mesh_graphormer::graph::{generate_sample, TokenLayout};
use mesh_graphormer::io::{Dtype, TensorBundle};
use mesh_graphormer::numerics::Tensor;
use mesh_graphormer::pipeline::{Model, ModelInput, PrecomputedLoader};
use mesh_graphormer::training::{load_checkpoint, peek_checkpoint};

use crate::{io_err, CliError, CliResult};

#[derive(Debug, Clone)]
pub enum ModelSource {
    Checkpoint(PathBuf),
    /// Freshly initialized from `train.seed`.
    Init(GraphormerConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnExport {
    pub names: Vec<String>,
    /// Head-averaged map of the last block of the last encoder.
    pub map: Tensor<f64>,
    pub query: String,
    /// `1 × n` row of `query`.
    pub row: Tensor<f64>,
}

/// `grid{k}`, `joint{j}` and `vertex{v}` in token order.
pub fn token_names(layout: &TokenLayout) -> Vec<String> {
    (0..layout.grid)
        .map(|k| format!("grid{k}"))
        .chain((0..layout.joints).map(|j| format!("joint{j}")))
        .chain((0..layout.vertices).map(|v| format!("vertex{v}")))
        .collect()
}

/// Parameters evaluated in f64 whatever the stored precision, so softmax
/// rows keep full accuracy.
fn load_f64(source: &ModelSource) -> CliResult<Model<f64>> {
    match source {
        ModelSource::Init(cfg) => Ok(Model::init(cfg)?),
        ModelSource::Checkpoint(path) => match peek_checkpoint(path)?.0 {
            Precision::F64 => Ok(load_checkpoint::<f64>(path)?.model),
            Precision::F32 => {
                let narrow = load_checkpoint::<f32>(path)?.model;
                let mut wide = Model::<f64>::init(&narrow.config)?;
                let ids: Vec<_> = wide.store.ids().collect();
                for (id, p) in ids.into_iter().zip(narrow.store.iter()) {
                    wide.store.set(id, p.value.cast())?;
                }
                Ok(wide)
            }
        },
    }
}

/// Writes `out/attention.grmt` (tensors `attention`, `query_row`) and
/// `out/tokens.txt` (one token name per line).
pub fn attn_export(source: &ModelSource, split: Split, sample: usize, query: &str, out: &Path) -> CliResult<AttnExport> {
    let model = load_f64(source)?;
    let names = token_names(&model.layout());
    let Some(q) = names.iter().position(|n| n == query) else {
        let l = model.layout();
        return Err(CliError::config(format!(
            "unknown query token `{query}`; valid names are grid0..grid{}, joint0..joint{}, vertex0..vertex{}",
            l.grid.saturating_sub(1),
            l.joints.saturating_sub(1),
            l.vertices.saturating_sub(1)
        )));
    };
    let cfg = &model.config;
    let spec = cfg.data.split_spec(split);
    if sample >= spec.count {
        return Err(CliError::config(format!(
            "sample {sample} out of range: {} split has {} samples",
            split.name(),
            spec.count
        )));
    }
    let out_model = match cfg.model.features {
        FeatureSource::Conv => {
            let s = generate_sample(&model.geometry.template, &model.geometry.coarsening, &spec, sample)?;
            model.predict(ModelInput::Image(&s.silhouette), true)?
        }
        FeatureSource::Precomputed => {
            let m = &cfg.model;
            let loader = PrecomputedLoader {
                dir: cfg.data.features_dir.clone().unwrap_or_default().into(),
                grid_tokens: m.grid_size * m.grid_size,
                grid_channels: m.grid_channels,
                global_dim: m.global_dim,
            };
            let rec = loader.load(split, sample)?;
            model.predict(ModelInput::Features(&rec), true)?
        }
    };
    let heads = out_model
        .attention
        .last()
        .and_then(|enc| enc.last())
        .ok_or_else(|| CliError::config("model has no attention layers"))?;
    let n = names.len();
    let mut avg = vec![0.0; n * n];
    for h in heads {
        avg.iter_mut().zip(h.data()).for_each(|(a, x)| *a += x);
    }
    let inv = 1.0 / heads.len() as f64;
    avg.iter_mut().for_each(|a| *a *= inv);
    let map = Tensor::new(&[n, n], avg)?;
    let row = Tensor::new(&[1, n], map.row(q).to_vec())?;

    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut bundle = TensorBundle::new();
    bundle.push("attention", Dtype::F64, map.clone());
    bundle.push("query_row", Dtype::F64, row.clone());
    bundle.save(&out.join("attention.grmt"))?;
    let tokens = out.join("tokens.txt");
    fs::write(&tokens, names.join("\n") + "\n").map_err(|e| io_err(&tokens, e))?;
    Ok(AttnExport {
        names,
        map,
        query: query.to_string(),
        row,
    })
}
