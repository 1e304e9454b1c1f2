//! Single-file training checkpoint.
//!
//! ```text
//! magic      8 bytes  "GRMCKPT\0"
//! version    u32      1
//! precision  u8       0 = f32, 1 = f64
//! config     u64 length + canonical TOML text
//! epoch      u64      completed epochs
//! step       u64      optimizer updates
//! rng × 3    shuffle, mask, dropout: seed (32 bytes), stream u64, word position u128
//! params     u32 count, then per parameter in declaration order:
//!            name (u32 length + UTF-8), ndim u32, dims u64 × ndim, values
//! adam       step u64, then first moments, then second moments (values only)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::Adam;
use crate::config::{GraphormerConfig, Precision};
use crate::error::{Error, Result};
use crate::io::{read_u32, read_u64};
use crate::numerics::{Real, Tensor};
use crate::pipeline::Model;

const MAGIC: &[u8; 8] = b"GRMCKPT\0";
const VERSION: u32 = 1;

pub const SHUFFLE_STREAM: u64 = 1;
pub const MASK_STREAM: u64 = 2;
pub const DROPOUT_STREAM: u64 = 3;

/// Independent random streams of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRngs {
    pub shuffle: ChaCha8Rng,
    pub mask: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl TrainRngs {
    pub fn from_seed(seed: u64) -> Self {
        let stream = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self {
            shuffle: stream(SHUFFLE_STREAM),
            mask: stream(MASK_STREAM),
            dropout: stream(DROPOUT_STREAM),
        }
    }
}

/// Everything needed to continue a run.
pub struct TrainState<T: Real> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    pub rngs: TrainRngs,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
}

impl<T: Real> TrainState<T> {
    pub fn new(config: &GraphormerConfig) -> Result<Self> {
        let model = Model::init(config)?;
        let adam = Adam::for_store(&model.store);
        Ok(Self {
            model,
            adam,
            rngs: TrainRngs::from_seed(config.train.seed),
            epoch: 0,
            step: 0,
        })
    }

    pub fn config(&self) -> &GraphormerConfig {
        &self.model.config
    }
}

fn precision_of<T: Real>() -> Precision {
    if T::BYTES == 4 {
        Precision::F32
    } else {
        Precision::F64
    }
}

fn write_rng(w: &mut impl Write, r: &ChaCha8Rng) -> Result<()> {
    w.write_all(&r.get_seed())?;
    w.write_all(&r.get_stream().to_le_bytes())?;
    w.write_all(&r.get_word_pos().to_le_bytes())?;
    Ok(())
}

fn read_rng(r: &mut impl Read) -> Result<ChaCha8Rng> {
    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    let stream = read_u64(r)?;
    let mut pos = [0u8; 16];
    r.read_exact(&mut pos)?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from_le_bytes(pos));
    Ok(rng)
}

fn write_values<T: Real>(w: &mut impl Write, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(t.numel() * T::BYTES);
    for &x in t.data() {
        x.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_values<T: Real>(r: &mut impl Read, shape: &[usize]) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * T::BYTES];
    r.read_exact(&mut raw)?;
    Tensor::new(shape, raw.chunks_exact(T::BYTES).map(T::read_le).collect())
}

pub fn write_checkpoint<T: Real>(w: &mut impl Write, state: &TrainState<T>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[match precision_of::<T>() {
        Precision::F32 => 0u8,
        Precision::F64 => 1u8,
    }])?;
    let text = state.config().render();
    w.write_all(&(text.len() as u64).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    w.write_all(&(state.epoch as u64).to_le_bytes())?;
    w.write_all(&state.step.to_le_bytes())?;
    for r in [&state.rngs.shuffle, &state.rngs.mask, &state.rngs.dropout] {
        write_rng(w, r)?;
    }
    let store = &state.model.store;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        write_values(w, &p.value)?;
    }
    w.write_all(&state.adam.step.to_le_bytes())?;
    for t in state.adam.m.iter().chain(&state.adam.v) {
        write_values(w, t)?;
    }
    Ok(())
}

/// Precision and configuration from the header.
pub fn read_checkpoint_header(r: &mut impl Read) -> Result<(Precision, GraphormerConfig)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let precision = match tag[0] {
        0 => Precision::F32,
        1 => Precision::F64,
        t => return Err(Error::Format(format!("unknown precision tag {t}"))),
    };
    let len = read_u64(r)? as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| Error::Format("config block is not UTF-8".into()))?;
    let config = GraphormerConfig::from_toml_str(&text, &GraphormerConfig::default())?;
    Ok((precision, config))
}

pub fn read_checkpoint<T: Real>(r: &mut impl Read) -> Result<TrainState<T>> {
    let (precision, config) = read_checkpoint_header(r)?;
    if precision != precision_of::<T>() {
        return Err(Error::Config(format!(
            "checkpoint holds {precision:?} parameters, reader expects {}",
            T::NAME
        )));
    }
    let epoch = read_u64(r)? as usize;
    let step = read_u64(r)?;
    let rngs = TrainRngs {
        shuffle: read_rng(r)?,
        mask: read_rng(r)?,
        dropout: read_rng(r)?,
    };
    let mut model = Model::<T>::init(&config)?;
    let count = read_u32(r)? as usize;
    if count != model.store.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} parameters, config builds {}",
            model.store.len()
        )));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for id in &ids {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let ndim = read_u32(r)? as usize;
        let shape = (0..ndim).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let expected = model.store.iter().nth(id.index()).expect("id in range");
        if expected.name != name || expected.value.shape() != shape.as_slice() {
            return Err(Error::Format(format!(
                "parameter {} is `{name}` {shape:?}, config builds `{}` {:?}",
                id.index(),
                expected.name,
                expected.value.shape()
            )));
        }
        let value = read_values(r, &shape)?;
        model.store.set(*id, value)?;
    }
    let mut adam = Adam::for_store(&model.store);
    adam.step = read_u64(r)?;
    let shapes: Vec<Vec<usize>> = model.store.iter().map(|p| p.value.shape().to_vec()).collect();
    for (i, s) in shapes.iter().enumerate() {
        adam.m[i] = read_values(r, s)?;
    }
    for (i, s) in shapes.iter().enumerate() {
        adam.v[i] = read_values(r, s)?;
    }
    Ok(TrainState {
        model,
        adam,
        rngs,
        epoch,
        step,
    })
}

pub fn save_checkpoint<T: Real>(path: &Path, state: &TrainState<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, state)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<TrainState<T>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

pub fn peek_checkpoint(path: &Path) -> Result<(Precision, GraphormerConfig)> {
    read_checkpoint_header(&mut BufReader::new(File::open(path)?))
}
