use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Symmetrically normalized adjacency with self-loops,
/// `D^(-1/2) (A + I) D^(-1/2)`, where `D` is the degree matrix of `A + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    matrix: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.matrix
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_f64(&[self.n, self.n], &self.matrix).expect("square")
    }

    /// Number of structurally nonzero entries.
    pub fn nnz(&self) -> usize {
        self.matrix.iter().filter(|&&x| x != 0.0).count()
    }

    /// `P Ā Pᵀ` for the permutation sending row `i` to row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                matrix[perm[i] * n + perm[j]] = self.matrix[i * n + j];
            }
        }
        Self { n, matrix }
    }

    /// Identity (self-loop only) graph.
    pub fn identity(n: usize) -> Self {
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            matrix[i * n + i] = 1.0;
        }
        Self { n, matrix }
    }
}

/// Builds `Ā` from an undirected edge list over `n` nodes. Duplicate edges
/// and either orientation of the same pair count once.
pub fn build_normalized_adjacency(edges: &[(usize, usize)], n: usize) -> Result<NormalizedAdjacency> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(Error::Input(format!("edge ({u}, {v}) out of range for {n} nodes")));
        }
        a[u * n + v] = 1.0;
        a[v * n + u] = 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            if a[i * n + j] != 0.0 {
                a[i * n + j] /= (deg[i] * deg[j]).sqrt();
            }
        }
    }
    Ok(NormalizedAdjacency { n, matrix: a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_node() {
        let a = build_normalized_adjacency(&[], 1).unwrap();
        assert_eq!(a.as_slice(), &[1.0]);
    }

    #[test]
    fn two_nodes_one_edge() {
        let a = build_normalized_adjacency(&[(0, 1)], 2).unwrap();
        assert_eq!(a.as_slice(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn path_graph_closed_form() {
        // degrees with self-loops: 2, 3, 2
        let a = build_normalized_adjacency(&[(0, 1), (1, 2)], 3).unwrap();
        assert!((a.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((a.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((a.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.get(0, 2), 0.0);
        assert_eq!(a.get(1, 0), a.get(0, 1));
    }

    #[test]
    fn out_of_range_edge() {
        assert!(matches!(build_normalized_adjacency(&[(0, 3)], 3), Err(Error::Input(_))));
    }

    fn spectral_radius(a: &NormalizedAdjacency) -> f64 {
        let n = a.n();
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.37).sin() * 0.5).collect();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut w = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    w[i] += a.get(i, j) * v[j];
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.iter().map(|x| x / norm).collect();
        }
        lambda
    }

    proptest! {
        #[test]
        fn invariants_on_random_graphs(n in 1usize..12, raw in proptest::collection::vec((0usize..12, 0usize..12), 0..30)) {
            let edges: Vec<_> = raw.into_iter().filter(|&(u, v)| u < n && v < n && u != v).collect();
            let a = build_normalized_adjacency(&edges, n).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((a.get(i, j) - a.get(j, i)).abs() < 1e-12);
                    prop_assert!(a.get(i, j) >= 0.0);
                }
            }
            prop_assert!(spectral_radius(&a) <= 1.0 + 1e-6);
        }

        #[test]
        fn regular_graph_rows_sum_to_at_most_one(n in 3usize..20) {
            let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
            let a = build_normalized_adjacency(&edges, n).unwrap();
            for i in 0..n {
                let row: f64 = (0..n).map(|j| a.get(i, j)).sum();
                prop_assert!(row <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn hub_rows_can_exceed_one_while_spectrum_stays_bounded() {
        // star with 8 leaves: hub row = 1/9 + 8/sqrt(18)
        let edges: Vec<_> = (1..9).map(|i| (0, i)).collect();
        let a = build_normalized_adjacency(&edges, 9).unwrap();
        let hub: f64 = (0..9).map(|j| a.get(0, j)).sum();
        assert!((hub - (1.0 / 9.0 + 8.0 / 18f64.sqrt())).abs() < 1e-12);
        assert!(hub > 1.0);
        assert!(spectral_radius(&a) <= 1.0 + 1e-6);
    }
}
