use nalgebra::{Matrix3, Vector3};

use super::template::{TemplateMesh, Vec3};
use crate::error::{Error, Result};

/// Rotation matrix for an axis-angle vector. The zero vector maps to the
/// exact identity.
pub fn rodrigues(aa: Vec3) -> Matrix3<f64> {
    let v = Vector3::from(aa);
    let theta = v.norm();
    if theta == 0.0 {
        return Matrix3::identity();
    }
    let k = v / theta;
    let kx = k.cross_matrix();
    Matrix3::identity() + kx * theta.sin() + kx * kx * (1.0 - theta.cos())
}

/// Axis-angle vector of a rotation matrix (inverse of [`rodrigues`]).
pub fn log_rotation(r: &Matrix3<f64>) -> Vec3 {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    rot.scaled_axis().into()
}

/// Posed fine vertices and joint positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Posed {
    pub vertices: Vec<Vec3>,
    pub joints: Vec<Vec3>,
}

/// Rigid-chain forward kinematics: `p_j = p_parent + R_parent · offset_j`,
/// `R_j = R_parent · R(angles_j)`, and each vertex moves as
/// `p_j + R_j · local` with its skinning joint `j`.
pub fn forward_kinematics(mesh: &TemplateMesh, joint_angles: &[Vec3]) -> Result<Posed> {
    let jn = mesh.num_joints();
    if joint_angles.len() != jn {
        return Err(Error::Input(format!(
            "expected {jn} joint rotations, got {}",
            joint_angles.len()
        )));
    }
    let mut rot = vec![Matrix3::identity(); jn];
    let mut pos = vec![Vector3::zeros(); jn];
    for j in 0..jn {
        let local = rodrigues(joint_angles[j]);
        let offset = Vector3::from(mesh.joint_offsets[j]);
        match mesh.parents[j] {
            None => {
                rot[j] = local;
                pos[j] = offset;
            }
            Some(p) => {
                debug_assert!(p < j, "parents precede children");
                pos[j] = pos[p] + rot[p] * offset;
                rot[j] = rot[p] * local;
            }
        }
    }
    let vertices = mesh
        .vertex_local
        .iter()
        .zip(&mesh.skinning)
        .map(|(l, &j)| (pos[j] + rot[j] * Vector3::from(*l)).into())
        .collect();
    Ok(Posed {
        vertices,
        joints: pos.into_iter().map(Into::into).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::template::{generate_synthetic_template, TemplateSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_angles(n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    #[test]
    fn zero_angles_reproduce_rest_pose_bitwise() {
        let mesh = generate_synthetic_template(&TemplateSpec::new(4, 3, 6, 2)).unwrap();
        let posed = forward_kinematics(&mesh, &vec![[0.0; 3]; mesh.num_joints()]).unwrap();
        assert_eq!(posed.vertices, mesh.rest_vertices);
        assert_eq!(posed.joints, mesh.rest_joints);
    }

    #[test]
    fn angle_count_mismatch() {
        let mesh = generate_synthetic_template(&TemplateSpec::new(1, 1, 4, 0)).unwrap();
        assert!(matches!(forward_kinematics(&mesh, &[[0.0; 3]]), Err(Error::Input(_))));
    }

    #[test]
    fn two_link_bend_by_hand() {
        // root at origin, joint 1 at (1,0,0), joint 2 at (2,0,0)
        let mesh = TemplateMesh {
            parents: vec![None, Some(0), Some(1)],
            joint_offsets: vec![[0.0; 3], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            skinning: vec![2],
            vertex_local: vec![[0.5, 0.0, 0.0]],
            rest_vertices: vec![[2.5, 0.0, 0.0]],
            rest_joints: vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            edges: vec![],
            coarse_map: vec![0],
            num_coarse: 1,
        };
        // bend joint 1 by 90 degrees about z: the child offset (1,0,0) turns into (0,1,0)
        let angles = [[0.0; 3], [0.0, 0.0, FRAC_PI_2], [0.0; 3]];
        let posed = forward_kinematics(&mesh, &angles).unwrap();
        let end = posed.joints[2];
        assert!((end[0] - 1.0).abs() < 1e-10);
        assert!((end[1] - 1.0).abs() < 1e-10);
        assert!(end[2].abs() < 1e-10);
        let v = posed.vertices[0];
        assert!((v[0] - 1.0).abs() < 1e-10 && (v[1] - 1.5).abs() < 1e-10);
    }

    #[test]
    fn root_rotation_is_global_rotation() {
        let mesh = generate_synthetic_template(&TemplateSpec::new(3, 2, 4, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let angles = random_angles(mesh.num_joints(), &mut rng);
            let g = rodrigues([rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let base = forward_kinematics(&mesh, &angles).unwrap();
            let mut pre = angles.clone();
            pre[0] = log_rotation(&(g * rodrigues(angles[0])));
            let rotated = forward_kinematics(&mesh, &pre).unwrap();
            let root = Vector3::from(base.joints[0]);
            for (a, b) in base.vertices.iter().chain(&base.joints).zip(rotated.vertices.iter().chain(&rotated.joints)) {
                let expect = root + g * (Vector3::from(*a) - root);
                assert!((expect - Vector3::from(*b)).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn rodrigues_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let r = rodrigues([rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
            assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }
}
