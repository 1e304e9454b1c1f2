use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MeshSample, Vec3};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::pipeline::ForwardOutput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Fine-mesh vertices. Default 1.
    pub vertex_fine: f64,
    /// Coarse vertices at every encoder exit. Default 1.
    pub vertex_coarse: f64,
    /// Default 1.
    pub joint3d: f64,
    /// Projected joints under the predicted camera. Default 1.
    pub joint2d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            vertex_fine: 1.0,
            vertex_coarse: 1.0,
            joint3d: 1.0,
            joint2d: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.vertex_fine, self.vertex_coarse, self.joint3d, self.joint2d];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {w:?}")));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Loss values of one sample or averaged over many.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub vertex_fine: f64,
    pub vertex_coarse: f64,
    pub joint3d: f64,
    pub joint2d: f64,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.vertex_fine += other.vertex_fine;
        self.vertex_coarse += other.vertex_coarse;
        self.joint3d += other.joint3d;
        self.joint2d += other.joint2d;
    }

    pub fn scaled(&self, k: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.total * k,
            vertex_fine: self.vertex_fine * k,
            vertex_coarse: self.vertex_coarse * k,
            joint3d: self.joint3d * k,
            joint2d: self.joint2d * k,
        }
    }
}

pub struct LossTerms<'t, T: Real> {
    pub total: Var<'t, T>,
    pub vertex_fine: Var<'t, T>,
    /// Sum over encoder exits.
    pub vertex_coarse: Var<'t, T>,
    pub joint3d: Var<'t, T>,
    pub joint2d: Var<'t, T>,
}

impl<T: Real> LossTerms<'_, T> {
    pub fn values(&self) -> LossBreakdown {
        let v = |x: Var<'_, T>| x.value().data()[0].as_f64();
        LossBreakdown {
            total: v(self.total),
            vertex_fine: v(self.vertex_fine),
            vertex_coarse: v(self.vertex_coarse),
            joint3d: v(self.joint3d),
            joint2d: v(self.joint2d),
        }
    }
}

fn points<'t, T: Real>(tape: &'t Tape<T>, p: &[Vec3]) -> Result<Var<'t, T>> {
    let flat: Vec<f64> = p.iter().flatten().copied().collect();
    Ok(tape.constant(Tensor::from_f64(&[p.len(), 3], &flat)?))
}

/// Weighted sum of mean-absolute-error terms. Zero-weight terms are
/// reported but left out of the total.
pub fn compute_losses<'t, T: Real>(
    out: &ForwardOutput<'t, T>,
    gt: &MeshSample,
    w: &LossWeights,
) -> Result<LossTerms<'t, T>> {
    let tape = out.fine.tape();
    let vertex_fine = out.fine.l1(points(tape, &gt.gt_fine_vertices)?)?;
    let coarse_gt = points(tape, &gt.gt_coarse_vertices)?;
    let mut vertex_coarse: Option<Var<'t, T>> = None;
    for c in &out.intermediate_coarse {
        let term = c.l1(coarse_gt)?;
        vertex_coarse = Some(match vertex_coarse {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    let vertex_coarse =
        vertex_coarse.ok_or_else(|| Error::Input("model produced no coarse-mesh outputs".into()))?;
    let joint3d = out.joints3d.l1(points(tape, &gt.gt_joints3d)?)?;
    let flat2: Vec<f64> = gt.gt_joints2d.iter().flatten().copied().collect();
    let joint2d = out
        .joints2d
        .l1(tape.constant(Tensor::from_f64(&[gt.gt_joints2d.len(), 2], &flat2)?))?;
    let mut total: Option<Var<'t, T>> = None;
    for (weight, term) in [
        (w.vertex_fine, vertex_fine),
        (w.vertex_coarse, vertex_coarse),
        (w.joint3d, joint3d),
        (w.joint2d, joint2d),
    ] {
        if weight == 0.0 {
            continue;
        }
        let t = if weight == 1.0 { term } else { term.scale(weight)? };
        total = Some(match total {
            Some(acc) => acc.add(t)?,
            None => t,
        });
    }
    let total = match total {
        Some(t) => t,
        None => vertex_fine.scale(0.0)?,
    };
    Ok(LossTerms {
        total,
        vertex_fine,
        vertex_coarse,
        joint3d,
        joint2d,
    })
}
