use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::coarsening::Coarsening;
use super::kinematics::forward_kinematics;
use super::raster::{project_weak_perspective, rasterize_silhouette, Camera, Image};
use super::template::{TemplateMesh, Vec3};
use crate::error::{Error, Result};

/// One synthetic training example.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSample {
    pub joint_angles: Vec<Vec3>,
    pub gt_fine_vertices: Vec<Vec3>,
    pub gt_coarse_vertices: Vec<Vec3>,
    pub gt_joints3d: Vec<Vec3>,
    pub gt_joints2d: Vec<[f64; 2]>,
    pub silhouette: Image,
    pub camera_gt: Camera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub count: usize,
    /// Each axis-angle component is uniform in `±angle_range` radians.
    pub angle_range: f64,
    pub image_size: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Translations are uniform in `±translation_range` on both axes.
    pub translation_range: f64,
    pub seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            count: 256,
            angle_range: 0.5,
            image_size: 56,
            scale_min: 0.7,
            scale_max: 1.3,
            translation_range: 0.2,
            seed: 0,
        }
    }
}

/// Sample `i` draws from its own ChaCha stream, so samples can be generated
/// in any order or in parallel with identical results.
pub fn generate_sample(mesh: &TemplateMesh, coarse: &Coarsening, spec: &DataSpec, i: usize) -> Result<MeshSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64);
    let a = spec.angle_range;
    let joint_angles: Vec<Vec3> = (0..mesh.num_joints())
        .map(|_| {
            if a == 0.0 {
                [0.0; 3]
            } else {
                [rng.random_range(-a..=a), rng.random_range(-a..=a), rng.random_range(-a..=a)]
            }
        })
        .collect();
    let s = if spec.scale_min < spec.scale_max {
        rng.random_range(spec.scale_min..=spec.scale_max)
    } else {
        spec.scale_min
    };
    let t = spec.translation_range;
    let (tx, ty) = if t > 0.0 {
        (rng.random_range(-t..=t), rng.random_range(-t..=t))
    } else {
        (0.0, 0.0)
    };
    let camera_gt = Camera { s, tx, ty };
    let posed = forward_kinematics(mesh, &joint_angles)?;
    let silhouette = rasterize_silhouette(&posed.vertices, &camera_gt, spec.image_size, spec.image_size)?;
    Ok(MeshSample {
        gt_coarse_vertices: coarse.apply_down(&posed.vertices),
        gt_joints2d: project_weak_perspective(&posed.joints, &camera_gt),
        gt_joints3d: posed.joints,
        gt_fine_vertices: posed.vertices,
        joint_angles,
        silhouette,
        camera_gt,
    })
}

pub fn generate_dataset(mesh: &TemplateMesh, coarse: &Coarsening, spec: &DataSpec) -> Result<Vec<MeshSample>> {
    if spec.count == 0 {
        return Err(Error::Input("dataset count must be >= 1".into()));
    }
    if !(spec.angle_range >= 0.0 && spec.translation_range >= 0.0 && spec.scale_min <= spec.scale_max) {
        return Err(Error::Input("invalid dataset ranges".into()));
    }
    (0..spec.count).map(|i| generate_sample(mesh, coarse, spec, i)).collect()
}

const MAGIC: &[u8; 8] = b"GRMDATA\0";
const VERSION: u32 = 1;

/// Flat little-endian file:
///
/// ```text
/// magic      8 bytes  "GRMDATA\0"
/// version    u32      1
/// count      u32
/// joints     u32      J
/// fine       u32      V_fine
/// coarse     u32      V_coarse
/// height     u32
/// width      u32
/// then per sample, f32 each, in this order:
///   joint_angles J·3, gt_fine V_fine·3, gt_coarse V_coarse·3,
///   gt_joints3d J·3, gt_joints2d J·2, silhouette H·W, camera (s, tx, ty)
/// ```
pub fn write_dataset(w: &mut impl Write, samples: &[MeshSample]) -> Result<()> {
    let first = samples.first().ok_or_else(|| Error::Input("cannot write an empty dataset".into()))?;
    let dims = SampleDims::of(first);
    w.write_all(MAGIC)?;
    for v in [VERSION, samples.len() as u32, dims.j, dims.vf, dims.vc, dims.h, dims.w] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::new();
    for s in samples {
        if SampleDims::of(s) != dims {
            return Err(Error::Input("samples disagree in dimensions".into()));
        }
        buf.clear();
        let mut put = |x: f64| buf.extend_from_slice(&(x as f32).to_le_bytes());
        s.joint_angles.iter().flatten().for_each(|&x| put(x));
        s.gt_fine_vertices.iter().flatten().for_each(|&x| put(x));
        s.gt_coarse_vertices.iter().flatten().for_each(|&x| put(x));
        s.gt_joints3d.iter().flatten().for_each(|&x| put(x));
        s.gt_joints2d.iter().flatten().for_each(|&x| put(x));
        s.silhouette.pixels.iter().for_each(|&x| put(x));
        [s.camera_gt.s, s.camera_gt.tx, s.camera_gt.ty].into_iter().for_each(put);
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_dataset(r: &mut impl Read) -> Result<Vec<MeshSample>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let mut header = [0u32; 7];
    for h in &mut header {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *h = u32::from_le_bytes(b);
    }
    let [version, count, j, vf, vc, h, w] = header.map(|x| x as usize);
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let per = j * 3 + vf * 3 + vc * 3 + j * 3 + j * 2 + h * w + 3;
    let mut buf = vec![0u8; per * 4];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let mut vals = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
        let mut take3 = |n: usize| -> Vec<Vec3> {
            (0..n)
                .map(|_| [vals.next().unwrap(), vals.next().unwrap(), vals.next().unwrap()])
                .collect()
        };
        let joint_angles = take3(j);
        let gt_fine_vertices = take3(vf);
        let gt_coarse_vertices = take3(vc);
        let gt_joints3d = take3(j);
        let gt_joints2d = (0..j).map(|_| [vals.next().unwrap(), vals.next().unwrap()]).collect();
        let pixels = (0..h * w).map(|_| vals.next().unwrap()).collect();
        let camera_gt = Camera {
            s: vals.next().unwrap(),
            tx: vals.next().unwrap(),
            ty: vals.next().unwrap(),
        };
        out.push(MeshSample {
            joint_angles,
            gt_fine_vertices,
            gt_coarse_vertices,
            gt_joints3d,
            gt_joints2d,
            silhouette: Image { height: h, width: w, pixels },
            camera_gt,
        });
    }
    Ok(out)
}

#[derive(Debug, PartialEq, Eq)]
struct SampleDims {
    j: u32,
    vf: u32,
    vc: u32,
    h: u32,
    w: u32,
}

impl SampleDims {
    fn of(s: &MeshSample) -> Self {
        Self {
            j: s.gt_joints3d.len() as u32,
            vf: s.gt_fine_vertices.len() as u32,
            vc: s.gt_coarse_vertices.len() as u32,
            h: s.silhouette.height as u32,
            w: s.silhouette.width as u32,
        }
    }
}
