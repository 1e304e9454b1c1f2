use super::template::{TemplateMesh, Vec3};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Dense coarse/fine transfer operators for one template.
#[derive(Debug, Clone, PartialEq)]
pub struct Coarsening {
    pub num_coarse: usize,
    pub num_fine: usize,
    /// `V_coarse × V_fine`, each row averages one group.
    pub down: Vec<f64>,
    /// `V_fine × V_coarse` membership matrix.
    pub up0: Vec<f64>,
}

pub fn build_coarsening(mesh: &TemplateMesh) -> Result<Coarsening> {
    let (nc, nf) = (mesh.num_coarse(), mesh.num_fine());
    let groups = mesh.coarse_groups();
    let mut down = vec![0.0; nc * nf];
    let mut up0 = vec![0.0; nf * nc];
    for (g, members) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Input(format!("coarse group {g} is empty")));
        }
        let w = 1.0 / members.len() as f64;
        for &v in members {
            down[g * nf + v] = w;
            up0[v * nc + g] = 1.0;
        }
    }
    Ok(Coarsening {
        num_coarse: nc,
        num_fine: nf,
        down,
        up0,
    })
}

impl Coarsening {
    pub fn down_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_f64(&[self.num_coarse, self.num_fine], &self.down).expect("shape")
    }

    pub fn up0_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_f64(&[self.num_fine, self.num_coarse], &self.up0).expect("shape")
    }

    pub fn apply_down(&self, fine: &[Vec3]) -> Vec<Vec3> {
        apply(&self.down, self.num_coarse, self.num_fine, fine)
    }

    pub fn apply_up0(&self, coarse: &[Vec3]) -> Vec<Vec3> {
        apply(&self.up0, self.num_fine, self.num_coarse, coarse)
    }
}

fn apply(m: &[f64], rows: usize, cols: usize, x: &[Vec3]) -> Vec<Vec3> {
    assert_eq!(x.len(), cols, "operator/point count mismatch");
    (0..rows)
        .map(|r| {
            let mut acc = [0.0; 3];
            for (c, p) in x.iter().enumerate() {
                let w = m[r * cols + c];
                if w != 0.0 {
                    for k in 0..3 {
                        acc[k] += w * p[k];
                    }
                }
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::template::{generate_synthetic_template, TemplateSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> TemplateMesh {
        // groups {0,1}, {2}
        TemplateMesh {
            parents: vec![None, Some(0)],
            joint_offsets: vec![[0.0; 3], [1.0, 0.0, 0.0]],
            skinning: vec![1; 3],
            vertex_local: vec![[0.0; 3]; 3],
            rest_vertices: vec![[1.0, 0.0, 0.0]; 3],
            rest_joints: vec![[0.0; 3], [1.0, 0.0, 0.0]],
            edges: vec![(0, 1), (1, 2)],
            coarse_map: vec![0, 0, 1],
            num_coarse: 2,
        }
    }

    #[test]
    fn averaging_groups() {
        let c = build_coarsening(&tiny()).unwrap();
        let out = c.apply_down(&[[2.0, 0.0, 0.0], [2.0, 0.0, 0.0], [5.0, 1.0, 0.0]]);
        assert_eq!(out, vec![[2.0, 0.0, 0.0], [5.0, 1.0, 0.0]]);
    }

    #[test]
    fn down_after_up_is_identity() {
        let mesh = generate_synthetic_template(&TemplateSpec::paper_faithful()).unwrap();
        let c = build_coarsening(&mesh).unwrap();
        let nc = c.num_coarse;
        let nf = c.num_fine;
        for i in 0..nc {
            let mut row = vec![0.0; nc];
            for k in 0..nf {
                let d = c.down[i * nf + k];
                if d == 0.0 {
                    continue;
                }
                for j in 0..nc {
                    row[j] += d * c.up0[k * nc + j];
                }
            }
            for (j, v) in row.into_iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_of_down_sum_to_one() {
        let mesh = generate_synthetic_template(&TemplateSpec::desk()).unwrap();
        let c = build_coarsening(&mesh).unwrap();
        for r in c.down.chunks(c.num_fine) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn down_matches_centroid_oracle() {
        let mut mesh = generate_synthetic_template(&TemplateSpec::new(3, 2, 5, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in &mut mesh.rest_vertices {
            *p = [rng.random(), rng.random(), rng.random()];
        }
        let c = build_coarsening(&mesh).unwrap();
        let got = c.apply_down(&mesh.rest_vertices);
        for g in 0..mesh.num_coarse() {
            let members: Vec<usize> = (0..mesh.num_fine()).filter(|&v| mesh.coarse_map[v] == g).collect();
            for k in 0..3 {
                let centroid = members.iter().map(|&v| mesh.rest_vertices[v][k]).sum::<f64>() / members.len() as f64;
                assert!((got[g][k] - centroid).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_group_is_rejected() {
        let mut mesh = tiny();
        mesh.num_coarse = 3;
        assert!(build_coarsening(&mesh).is_err());
    }
}
