use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;

use crate::config::Split;
use crate::encoder::Linear;
use crate::error::{Error, Result};
use crate::io::{Dtype, TensorBundle};
use crate::numerics::{Bound, ParamStore, Real, Tensor, Var};

/// One 3×3, zero-padded convolution lowered to gather + matmul.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub linear: Linear,
    pub in_size: usize,
    pub out_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// im2col index into the flattened `in_size² × in_channels` input.
    patches: Arc<[Option<usize>]>,
}

impl ConvLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_size: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let out_size = conv_out_size(in_size, stride);
        let linear = Linear::new(store, name, 9 * in_channels, out_channels, true, rng);
        Self {
            linear,
            in_size,
            out_size,
            in_channels,
            out_channels,
            stride,
            patches: im2col_index(in_size, in_channels, stride).into(),
        }
    }

    /// `x`: `in_size² × in_channels`, rows in raster order.
    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let rows = self.out_size * self.out_size;
        let cols = x.gather(Arc::clone(&self.patches), &[rows, 9 * self.in_channels])?;
        self.linear.forward(bound, cols)?.gelu()
    }
}

/// Output side of a 3×3 conv with padding 1.
pub fn conv_out_size(in_size: usize, stride: usize) -> usize {
    (in_size - 1) / stride + 1
}

/// Row `(oy, ox)` of the patch matrix lists the 3×3×C neighbourhood in
/// (ky, kx, channel) order; out-of-image taps are `None` (zero padding).
pub fn im2col_index(in_size: usize, channels: usize, stride: usize) -> Vec<Option<usize>> {
    let out = conv_out_size(in_size, stride);
    let mut idx = Vec::with_capacity(out * out * 9 * channels);
    for oy in 0..out {
        for ox in 0..out {
            for ky in 0..3 {
                for kx in 0..3 {
                    let iy = (oy * stride + ky) as isize - 1;
                    let ix = (ox * stride + kx) as isize - 1;
                    let inside = iy >= 0 && ix >= 0 && (iy as usize) < in_size && (ix as usize) < in_size;
                    for c in 0..channels {
                        idx.push(inside.then(|| (iy as usize * in_size + ix as usize) * channels + c));
                    }
                }
            }
        }
    }
    idx
}

/// Four stride-2 conv + GELU layers. The grid is read after the third
/// layer (`g×g×c`); the fourth widens to `c_g` and is average-pooled into
/// the global vector.
#[derive(Debug, Clone)]
pub struct ConvStack {
    pub layers: Vec<ConvLayer>,
}

pub struct ConvFeatures<'t, T: Real> {
    /// `g² × c`.
    pub grid: Var<'t, T>,
    /// `1 × c_g`.
    pub global: Var<'t, T>,
}

impl ConvStack {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        image_size: usize,
        channels: [usize; 4],
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(4);
        let (mut size, mut c_in) = (image_size, 1);
        for (k, &c_out) in channels.iter().enumerate() {
            let layer = ConvLayer::new(store, &format!("{name}.conv{}", k + 1), size, c_in, c_out, 2, rng);
            size = layer.out_size;
            c_in = c_out;
            layers.push(layer);
        }
        Self { layers }
    }

    pub fn grid_size(&self) -> usize {
        self.layers[2].out_size
    }

    /// `image`: `H·W × 1` column of pixel intensities.
    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, image: Var<'t, T>) -> Result<ConvFeatures<'t, T>> {
        let mut h = image;
        let mut grid = None;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(bound, h)?;
            if k == 2 {
                grid = Some(h);
            }
        }
        Ok(ConvFeatures {
            grid: grid.expect("four layers"),
            global: h.mean_rows()?,
        })
    }
}

/// Reads per-sample feature files `{dir}/{split}_{index:05}.grmt`, each a
/// tensor bundle holding `grid` (`g² × c`) and `global` (`1 × c_g`).
#[derive(Debug, Clone)]
pub struct PrecomputedLoader {
    pub dir: PathBuf,
    pub grid_tokens: usize,
    pub grid_channels: usize,
    pub global_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub grid: Tensor<f64>,
    pub global: Tensor<f64>,
}

impl PrecomputedLoader {
    pub fn path(dir: &Path, split: Split, index: usize) -> PathBuf {
        dir.join(format!("{}_{index:05}.grmt", split.name()))
    }

    pub fn load(&self, split: Split, index: usize) -> Result<FeatureRecord> {
        let path = Self::path(&self.dir, split, index);
        let bundle = TensorBundle::load(&path)
            .map_err(|e| Error::Input(format!("feature file {}: {e}", path.display())))?;
        let fetch = |name: &str, shape: [usize; 2]| -> Result<Tensor<f64>> {
            let t = bundle
                .get(name)
                .ok_or_else(|| Error::Input(format!("feature file {} has no `{name}` tensor", path.display())))?;
            if t.shape() != shape {
                return Err(Error::Config(format!(
                    "feature file {}: `{name}` is {:?}, config expects {:?}",
                    path.display(),
                    t.shape(),
                    shape
                )));
            }
            Ok(t.clone())
        };
        Ok(FeatureRecord {
            grid: fetch("grid", [self.grid_tokens, self.grid_channels])?,
            global: fetch("global", [1, self.global_dim])?,
        })
    }
}

pub fn write_feature_file(dir: &Path, split: Split, index: usize, rec: &FeatureRecord) -> Result<()> {
    let mut b = TensorBundle::new();
    b.push("grid", Dtype::F32, rec.grid.clone());
    b.push("global", Dtype::F32, rec.global.clone());
    b.save(&PrecomputedLoader::path(dir, split, index))
}
