use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::graph::{MeshSample, Vec3};
use crate::pipeline::ModelOutput;

/// Similarity transform mapping a prediction onto ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub aligned: Vec<Vec3>,
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    /// Ground truth (or prediction) spans less than a plane; only the
    /// translation was fitted.
    pub degenerate: bool,
}

fn centroid(p: &[Vec3]) -> Vector3<f64> {
    let mut c = Vector3::zeros();
    for q in p {
        c += Vector3::from(*q);
    }
    c / p.len() as f64
}

/// Least-squares similarity (scale, proper rotation, translation) taking
/// `pred` onto `gt`.
pub fn procrustes_align(pred: &[Vec3], gt: &[Vec3]) -> Result<Alignment> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension {
            op: "procrustes_align",
            lhs: vec![pred.len(), 3],
            rhs: vec![gt.len(), 3],
        });
    }
    if pred.len() < 3 {
        return Err(Error::Input(format!("alignment needs at least 3 points, got {}", pred.len())));
    }
    let (mp, mg) = (centroid(pred), centroid(gt));
    let x: Vec<Vector3<f64>> = pred.iter().map(|p| Vector3::from(*p) - mp).collect();
    let y: Vec<Vector3<f64>> = gt.iter().map(|p| Vector3::from(*p) - mg).collect();
    let var_x: f64 = x.iter().map(|v| v.norm_squared()).sum();
    let mut h = Matrix3::zeros();
    let mut cov_y = Matrix3::zeros();
    for (a, b) in x.iter().zip(&y) {
        h += a * b.transpose();
        cov_y += b * b.transpose();
    }
    let sv_y = cov_y.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sv_y.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let degenerate = var_x <= f64::MIN_POSITIVE || ev[0] <= 0.0 || ev[1] <= 1e-12 * ev[0];
    if degenerate {
        let t = mg - mp;
        return Ok(Alignment {
            aligned: pred.iter().map(|p| (Vector3::from(*p) + t).into()).collect(),
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: t.into(),
            degenerate: true,
        });
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let s = svd.singular_values;
    let smallest = s.imin();
    let mut signs = Vector3::repeat(1.0);
    signs[smallest] = d;
    let rotation = v * Matrix3::from_diagonal(&signs) * u.transpose();
    let scale = s.dot(&signs) / var_x;
    let t = mg - scale * rotation * mp;
    let aligned = pred
        .iter()
        .map(|p| (scale * rotation * Vector3::from(*p) + t).into())
        .collect();
    Ok(Alignment {
        aligned,
        scale,
        rotation,
        translation: t.into(),
        degenerate: false,
    })
}

/// Mean Euclidean distance between corresponding points.
pub fn mean_point_error(a: &[Vec3], b: &[Vec3]) -> f64 {
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .sum();
    total / a.len() as f64
}

/// Errors in template units.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub mpve: f64,
}

/// Multiplier applied when metrics are reported.
pub const METRIC_SCALE: f64 = 1000.0;
pub const METRIC_UNIT: &str = "template units x1000";

impl Metrics {
    pub fn reported(&self) -> Metrics {
        Metrics {
            mpjpe: self.mpjpe * METRIC_SCALE,
            pa_mpjpe: self.pa_mpjpe * METRIC_SCALE,
            mpve: self.mpve * METRIC_SCALE,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mpjpe.is_finite() && self.pa_mpjpe.is_finite() && self.mpve.is_finite()
    }
}

pub fn joint_metrics(pred_joints: &[Vec3], gt_joints: &[Vec3]) -> Result<(f64, f64)> {
    let mpjpe = mean_point_error(pred_joints, gt_joints);
    let aligned = procrustes_align(pred_joints, gt_joints)?;
    Ok((mpjpe, mean_point_error(&aligned.aligned, gt_joints)))
}

pub fn metrics(out: &ModelOutput, gt: &MeshSample) -> Result<Metrics> {
    if out.joints3d.len() != gt.gt_joints3d.len() || out.fine_vertices.len() != gt.gt_fine_vertices.len() {
        return Err(Error::Dimension {
            op: "metrics",
            lhs: vec![out.joints3d.len(), out.fine_vertices.len()],
            rhs: vec![gt.gt_joints3d.len(), gt.gt_fine_vertices.len()],
        });
    }
    let (mpjpe, pa_mpjpe) = joint_metrics(&out.joints3d, &gt.gt_joints3d)?;
    Ok(Metrics {
        mpjpe,
        pa_mpjpe,
        mpve: mean_point_error(&out.fine_vertices, &gt.gt_fine_vertices),
    })
}

/// Per-sample mean.
pub fn mean_metrics(all: &[Metrics]) -> Metrics {
    let n = all.len().max(1) as f64;
    let mut m = Metrics::default();
    for x in all {
        m.mpjpe += x.mpjpe;
        m.pa_mpjpe += x.pa_mpjpe;
        m.mpve += x.mpve;
    }
    Metrics {
        mpjpe: m.mpjpe / n,
        pa_mpjpe: m.pa_mpjpe / n,
        mpve: m.mpve / n,
    }
}
