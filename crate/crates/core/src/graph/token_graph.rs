use super::adjacency::{build_normalized_adjacency, NormalizedAdjacency};
use super::coarsening::Coarsening;
use super::template::TemplateMesh;
use crate::error::Result;

/// Token order is grid cells, then joints, then coarse vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub grid: usize,
    pub joints: usize,
    pub vertices: usize,
}

impl TokenLayout {
    pub fn total(&self) -> usize {
        self.grid + self.joints + self.vertices
    }

    pub fn joint_offset(&self) -> usize {
        self.grid
    }

    pub fn vertex_offset(&self) -> usize {
        self.grid + self.joints
    }

    pub fn queries(&self) -> usize {
        self.joints + self.vertices
    }
}

/// Joint index linked to its nearest rest-pose coarse vertex (lowest index on ties).
pub fn nearest_coarse_vertex(mesh: &TemplateMesh, coarse: &Coarsening) -> Vec<usize> {
    let centroids = coarse.apply_down(&mesh.rest_vertices);
    mesh.rest_joints
        .iter()
        .map(|j| {
            let mut best = (f64::INFINITY, 0);
            for (i, c) in centroids.iter().enumerate() {
                let d = (0..3).map(|k| (j[k] - c[k]).powi(2)).sum::<f64>();
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1
        })
        .collect()
}

/// Block-structured token graph: grid tokens only have self-loops, joints
/// follow the kinematic tree, vertices follow the induced coarse mesh, and
/// (optionally) each joint links to its nearest coarse vertex.
pub fn build_token_graph(
    mesh: &TemplateMesh,
    coarse: &Coarsening,
    grid_tokens: usize,
    joint_vertex_links: bool,
) -> Result<NormalizedAdjacency> {
    let layout = TokenLayout {
        grid: grid_tokens,
        joints: mesh.num_joints(),
        vertices: mesh.num_coarse(),
    };
    let jo = layout.joint_offset();
    let vo = layout.vertex_offset();
    let mut edges: Vec<(usize, usize)> = mesh.skeleton_edges().into_iter().map(|(a, b)| (jo + a, jo + b)).collect();
    edges.extend(mesh.coarse_edges().into_iter().map(|(a, b)| (vo + a, vo + b)));
    if joint_vertex_links {
        for (j, v) in nearest_coarse_vertex(mesh, coarse).into_iter().enumerate() {
            edges.push((jo + j, vo + v));
        }
    }
    build_normalized_adjacency(&edges, layout.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::coarsening::build_coarsening;
    use crate::graph::template::{generate_synthetic_template, TemplateSpec};

    #[test]
    fn grid_rows_are_identity() {
        let mesh = generate_synthetic_template(&TemplateSpec::desk()).unwrap();
        let c = build_coarsening(&mesh).unwrap();
        let a = build_token_graph(&mesh, &c, 49, true).unwrap();
        assert_eq!(a.n(), 49 + 8 + 48);
        for i in 0..49 {
            for j in 0..a.n() {
                assert_eq!(a.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn blocks_follow_skeleton_and_mesh() {
        let mesh = generate_synthetic_template(&TemplateSpec::desk()).unwrap();
        let c = build_coarsening(&mesh).unwrap();
        let with = build_token_graph(&mesh, &c, 4, true).unwrap();
        let without = build_token_graph(&mesh, &c, 4, false).unwrap();
        // root joint (token 4) to joint 1 (token 5)
        assert!(with.get(4, 5) > 0.0);
        // joints never touch grid tokens
        assert_eq!(with.get(4, 0), 0.0);
        let near = nearest_coarse_vertex(&mesh, &c);
        let vo = 4 + 8;
        assert!(with.get(4 + 1, vo + near[1]) > 0.0);
        assert_eq!(without.get(4 + 1, vo + near[1]), 0.0);
        // consecutive rings of a bone are linked
        assert!(with.get(vo, vo + 1) > 0.0);
    }
}
