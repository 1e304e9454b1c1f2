use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::TrainState;
use super::losses::{compute_losses, LossBreakdown};
use super::masking::{sample_mask_plan, MaskPlan};
use super::metrics::{mean_metrics, metrics, Metrics, METRIC_UNIT};
use super::optim::{clip_grad_norm, lr_schedule};
use crate::config::{FeatureSource, GraphormerConfig, Split};
use crate::encoder::Dropout;
use crate::error::{Error, Result};
use crate::graph::{generate_dataset, MeshSample};
use crate::numerics::{Real, Tape, Tensor};
use crate::pipeline::{FeatureRecord, ForwardOptions, Geometry, Model, ModelInput, PrecomputedLoader};

/// Train and held-out splits, plus their feature files when the model
/// reads precomputed features.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<MeshSample>,
    pub test: Vec<MeshSample>,
    pub train_features: Option<Vec<FeatureRecord>>,
    pub test_features: Option<Vec<FeatureRecord>>,
}

impl TrainData {
    /// Regenerates both splits from the config.
    pub fn generate(config: &GraphormerConfig, geometry: &Geometry) -> Result<Self> {
        let gen = |split| generate_dataset(&geometry.template, &geometry.coarsening, &config.data.split_spec(split));
        let (train, test) = (gen(Split::Train)?, gen(Split::Test)?);
        let (train_features, test_features) = match config.model.features {
            FeatureSource::Conv => (None, None),
            FeatureSource::Precomputed => {
                let m = &config.model;
                let loader = PrecomputedLoader {
                    dir: config.data.features_dir.clone().expect("validated").into(),
                    grid_tokens: m.grid_size * m.grid_size,
                    grid_channels: m.grid_channels,
                    global_dim: m.global_dim,
                };
                let load = |split, n| (0..n).map(|i| loader.load(split, i)).collect::<Result<Vec<_>>>();
                (Some(load(Split::Train, train.len())?), Some(load(Split::Test, test.len())?))
            }
        };
        Ok(Self {
            train,
            test,
            train_features,
            test_features,
        })
    }

    pub fn samples(&self, split: Split) -> &[MeshSample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn input(&self, split: Split, i: usize) -> ModelInput<'_> {
        let feats = match split {
            Split::Train => &self.train_features,
            Split::Test => &self.test_features,
        };
        match feats {
            Some(f) => ModelInput::Features(&f[i]),
            None => ModelInput::Image(&self.samples(split)[i].silhouette),
        }
    }
}

/// One row of the metric log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sample training loss over the epoch.
    pub loss: LossBreakdown,
    /// Held-out metrics in reported units.
    pub test: Metrics,
    pub wall_seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,lr,loss_total,loss_vf,loss_vc,loss_j3,loss_j2,mpjpe,pa_mpjpe,mpve,wall_seconds";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.loss.total,
            self.loss.vertex_fine,
            self.loss.vertex_coarse,
            self.loss.joint3d,
            self.loss.joint2d,
            self.test.mpjpe,
            self.test.pa_mpjpe,
            self.test.mpve,
            self.wall_seconds
        )
    }
}

/// Metadata comment lines followed by the column header.
pub fn log_preamble(config: &GraphormerConfig) -> String {
    let t = &config.train;
    let w = &t.loss_weights;
    format!(
        "# config_hash: {}\n# metric_unit: {METRIC_UNIT}\n# loss_weights: vertex_fine={} vertex_coarse={} joint3d={} joint2d={}\n# workers: {} (gradients summed in fixed sample order; reproducible)\n{LOG_HEADER}\n",
        config.hash(),
        w.vertex_fine,
        w.vertex_coarse,
        w.joint3d,
        w.joint2d,
        t.workers
    )
}

/// Maps `f` over `0..n` on `workers` threads; results keep index order.
pub fn ordered_map<R: Send>(n: usize, workers: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}

/// Loss gradients of one sample, in store order.
pub fn sample_gradients<T: Real>(
    model: &Model<T>,
    input: ModelInput<'_>,
    gt: &MeshSample,
    mask: &MaskPlan,
    dropout: Option<&Dropout>,
) -> Result<(Vec<Tensor<T>>, LossBreakdown)> {
    let tape = Tape::with_finite_checks(model.config.train.debug_checks);
    let bound = model.store.bind(&tape);
    let opts = ForwardOptions {
        dropout,
        mask: &mask.indices,
    };
    let out = model.forward(&bound, input, &opts)?;
    let terms = compute_losses(&out, gt, &model.config.train.loss_weights)?;
    let values = terms.values();
    if !values.total.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let grads = tape.backward(terms.total)?;
    Ok((bound.gradients(&grads), values))
}

/// Evaluation-mode metrics for every sample of `split`.
pub fn evaluate<T: Real>(model: &Model<T>, data: &TrainData, split: Split, workers: usize) -> Result<Vec<Metrics>> {
    let samples = data.samples(split);
    ordered_map(samples.len(), workers, |i| {
        let out = model.predict(data.input(split, i), false)?;
        metrics(&out, &samples[i])
    })
    .into_iter()
    .collect()
}

/// Runs the remaining epochs of `state`. `on_epoch` sees the state after
/// each epoch (for logging and checkpoints); its error aborts the run.
pub fn train_loop<T: Real>(
    state: &mut TrainState<T>,
    data: &TrainData,
    mut on_epoch: impl FnMut(&TrainState<T>, &EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Input("training needs non-empty train and test splits".into()));
    }
    let cfg = state.model.config.train.clone();
    let dropout_p = state.model.config.model.dropout;
    let queries = state.model.layout().queries();
    let start = Instant::now();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    while state.epoch < cfg.epochs {
        let lr = lr_schedule(state.epoch, cfg.base_lr, cfg.lr_drop_epoch, cfg.lr_drop_factor);
        order.sort_unstable();
        order.shuffle(&mut state.rngs.shuffle);
        let mut epoch_loss = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            let plans: Vec<MaskPlan> = batch
                .iter()
                .map(|_| {
                    if cfg.masking {
                        sample_mask_plan(cfg.mask_ratio_max, queries, &mut state.rngs.mask)
                    } else {
                        MaskPlan::default()
                    }
                })
                .collect();
            let seeds: Vec<u64> = batch.iter().map(|_| state.rngs.dropout.random()).collect();
            let model = &state.model;
            let results = ordered_map(batch.len(), cfg.workers, |k| {
                let dropout = (dropout_p > 0.0).then(|| Dropout::new(dropout_p, ChaCha8Rng::seed_from_u64(seeds[k])));
                sample_gradients(model, data.input(Split::Train, batch[k]), &data.train[batch[k]], &plans[k], dropout.as_ref())
            });
            let mut sum: Option<Vec<Tensor<T>>> = None;
            for r in results {
                let (grads, loss) = r?;
                epoch_loss.accumulate(&loss);
                match sum.as_mut() {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, &y)| *x += y);
                        }
                    }
                }
            }
            let mut grads = sum.expect("non-empty batch");
            let inv = T::from_f64(1.0 / batch.len() as f64);
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= inv);
            }
            if cfg.grad_clip > 0.0 {
                clip_grad_norm(&mut grads, cfg.grad_clip);
            }
            let model = &mut state.model;
            let trainable: Vec<bool> = model.store.ids().map(|id| model.is_trainable(id)).collect();
            state.adam.step(&mut model.store, &grads, lr, |id| trainable[id.index()])?;
            state.step += 1;
        }
        state.epoch += 1;
        let test = mean_metrics(&evaluate(&state.model, data, Split::Test, cfg.workers)?).reported();
        if !test.is_finite() {
            return Err(Error::NonFinite("evaluation metrics"));
        }
        let record = EpochRecord {
            epoch: state.epoch,
            lr,
            loss: epoch_loss.scaled(1.0 / data.train.len() as f64),
            test,
            wall_seconds: if cfg.log_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        on_epoch(state, &record)?;
        log.push(record);
    }
    Ok(log)
}
