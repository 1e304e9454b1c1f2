use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mesh_graphormer::config::{FeatureSource, GraphormerConfig, Precision, Split};
use mesh_graphormer::graph::{generate_dataset, read_dataset, write_dataset, MeshSample};
use mesh_graphormer::numerics::Real;
use mesh_graphormer::pipeline::Geometry;
use mesh_graphormer::training::{evaluate, load_checkpoint, mean_metrics, peek_checkpoint, TrainData, METRIC_UNIT};
use serde::Serialize;

use crate::{io_err, CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum EvalSource {
    /// Regenerated from the checkpoint's data config.
    Split(Split),
    /// A file written by `gen-data`.
    Dataset(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mpve: f64,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub samples: usize,
    pub unit: String,
    pub dataset: String,
    pub epoch: usize,
    pub config_hash: String,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn check_compatible(samples: &[MeshSample], geo: &Geometry) -> CliResult<()> {
    let Some(first) = samples.first() else {
        return Err(CliError::config("dataset is empty"));
    };
    let pairs = [
        ("joints", first.gt_joints3d.len(), geo.template.num_joints()),
        ("coarse vertices", first.gt_coarse_vertices.len(), geo.template.num_coarse()),
        ("fine vertices", first.gt_fine_vertices.len(), geo.template.num_fine()),
    ];
    for (what, have, want) in pairs {
        if have != want {
            return Err(CliError::config(format!(
                "dataset has {have} {what} per sample, checkpoint config expects {want}"
            )));
        }
    }
    Ok(())
}

/// Deterministic metrics of a checkpoint on a split or a dataset file.
pub fn eval(checkpoint: &Path, source: &EvalSource, workers: usize) -> CliResult<EvalReport> {
    let (precision, _) = peek_checkpoint(checkpoint)?;
    match precision {
        Precision::F32 => eval_typed::<f32>(checkpoint, source, workers),
        Precision::F64 => eval_typed::<f64>(checkpoint, source, workers),
    }
}

fn eval_typed<T: Real>(checkpoint: &Path, source: &EvalSource, workers: usize) -> CliResult<EvalReport> {
    let state = load_checkpoint::<T>(checkpoint)?;
    let model = &state.model;
    let config = &model.config;
    let (data, split, name) = match source {
        EvalSource::Split(split) => (
            TrainData::generate(config, &model.geometry)?,
            *split,
            format!("split:{}", split.name()),
        ),
        EvalSource::Dataset(path) => {
            if config.model.features == FeatureSource::Precomputed {
                return Err(CliError::config(
                    "dataset files carry images only; this checkpoint reads precomputed features",
                ));
            }
            let file = File::open(path).map_err(|e| io_err(path, e))?;
            let samples = read_dataset(&mut BufReader::new(file))?;
            let data = TrainData {
                train: Vec::new(),
                test: samples,
                train_features: None,
                test_features: None,
            };
            (data, Split::Test, path.display().to_string())
        }
    };
    check_compatible(data.samples(split), &model.geometry)?;
    if let Some(s) = data.samples(split).first() {
        let size = config.data.image_size;
        if s.silhouette.height != size || s.silhouette.width != size {
            return Err(CliError::config(format!(
                "dataset images are {}x{}, checkpoint config expects {size}x{size}",
                s.silhouette.height, s.silhouette.width
            )));
        }
    }
    let all = evaluate(model, &data, split, workers.max(1))?;
    let m = mean_metrics(&all).reported();
    if !m.is_finite() {
        return Err(mesh_graphormer::Error::NonFinite("evaluation metrics").into());
    }
    Ok(EvalReport {
        mpve: m.mpve,
        mpjpe: m.mpjpe,
        pa_mpjpe: m.pa_mpjpe,
        samples: all.len(),
        unit: METRIC_UNIT.to_string(),
        dataset: name,
        epoch: state.epoch,
        config_hash: config.hash(),
    })
}

/// Writes one split of the configured synthetic dataset; returns the sample count.
pub fn gen_data(config: &GraphormerConfig, split: Split, out: &Path) -> CliResult<usize> {
    let geo = Geometry::new(config)?;
    let samples = generate_dataset(&geo.template, &geo.coarsening, &config.data.split_spec(split))?;
    let file = File::create(out).map_err(|e| io_err(out, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, &samples)?;
    w.flush().map_err(|e| io_err(out, e))?;
    Ok(samples.len())
}
