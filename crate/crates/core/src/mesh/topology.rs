use std::collections::BTreeSet;
use std::sync::Arc;

use super::{validate_faces, Mesh};
use crate::autodiff::SparseMatrix;
use crate::error::{Error, Result};

/// Undirected edges `(i, j)` with `i < j`, sorted, each triangle edge once.
pub fn edges_from_faces(faces: &[[usize; 3]], n_vertices: usize) -> Result<Vec<(usize, usize)>> {
    validate_faces(faces, n_vertices)?;
    let mut set = BTreeSet::new();
    for f in faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            set.insert((a.min(b), a.max(b)));
        }
    }
    Ok(set.into_iter().collect())
}

/// `D̄^{-1/2} (A + I) D̄^{-1/2}` where `D̄` is the degree of the self-looped adjacency.
pub fn propagation_matrix(edges: &[(usize, usize)], n: usize) -> Result<SparseMatrix> {
    let (_, self_loop, degree) = adjacency_parts(edges, n)?;
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    SparseMatrix::from_triplets(
        n,
        n,
        self_loop
            .entries()
            .map(|(r, c, v)| (r, c, inv_sqrt[r] * v * inv_sqrt[c]))
            .collect(),
    )
}

fn adjacency_parts(
    edges: &[(usize, usize)],
    n: usize,
) -> Result<(SparseMatrix, SparseMatrix, Vec<f64>)> {
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut set = BTreeSet::new();
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::Topology(format!(
                "edge ({a}, {b}) outside {n} vertices"
            )));
        }
        if a == b {
            return Err(Error::Topology(format!("self-edge at vertex {a}")));
        }
        set.insert((a.min(b), a.max(b)));
    }
    let mut adj = Vec::with_capacity(2 * set.len());
    for &(a, b) in &set {
        adj.push((a, b, 1.0));
        adj.push((b, a, 1.0));
    }
    let mut looped = adj.clone();
    looped.extend((0..n).map(|i| (i, i, 1.0)));
    let mut degree = vec![1.0; n];
    for &(a, b) in &set {
        degree[a] += 1.0;
        degree[b] += 1.0;
    }
    Ok((
        SparseMatrix::from_triplets(n, n, adj)?,
        SparseMatrix::from_triplets(n, n, looped)?,
        degree,
    ))
}

/// Graph structure of one mesh topology.
#[derive(Debug, Clone)]
pub struct GraphTopology {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: SparseMatrix,
    self_loop_adjacency: SparseMatrix,
    degree: Vec<f64>,
    propagation: Arc<SparseMatrix>,
}

impl GraphTopology {
    pub fn from_edges(edges: &[(usize, usize)], n: usize) -> Result<Self> {
        let (adjacency, self_loop_adjacency, degree) = adjacency_parts(edges, n)?;
        let propagation = Arc::new(propagation_matrix(edges, n)?);
        Ok(Self {
            n,
            edges: adjacency
                .entries()
                .filter(|&(r, c, _)| r < c)
                .map(|(r, c, _)| (r, c))
                .collect(),
            adjacency,
            self_loop_adjacency,
            degree,
            propagation,
        })
    }

    pub fn from_mesh(mesh: &Mesh) -> Result<Self> {
        Self::from_edges(
            &edges_from_faces(mesh.faces(), mesh.n_vertices())?,
            mesh.n_vertices(),
        )
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn self_loop_adjacency(&self) -> &SparseMatrix {
        &self.self_loop_adjacency
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn propagation(&self) -> &Arc<SparseMatrix> {
        &self.propagation
    }

    /// Topology after relabeling vertex `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(a, b)| (perm[a], perm[b]))
            .collect();
        Self::from_edges(&edges, self.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use crate::synth::{ring_grid_faces, GridDims};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_triangle_edges() {
        assert_eq!(
            edges_from_faces(&[[0, 1, 2]], 3).unwrap(),
            vec![(0, 1), (0, 2), (1, 2)]
        );
    }

    #[test]
    fn shared_edge_is_not_duplicated() {
        let e = edges_from_faces(&[[0, 1, 2], [1, 2, 3]], 4).unwrap();
        assert_eq!(e.len(), 5);
        assert_eq!(e.iter().filter(|&&p| p == (1, 2)).count(), 1);
    }

    #[test]
    fn out_of_range_face_is_a_topology_error() {
        assert!(matches!(
            edges_from_faces(&[[0, 1, 5]], 3),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn tube_grid_edges_match_brute_force_enumeration() {
        let grid = GridDims::new_unchecked(4, 3);
        let faces = ring_grid_faces(grid);
        let n = grid.n_vertices();
        // dense boolean matrix marked from every face corner pair
        let mut seen = vec![vec![false; n]; n];
        for f in &faces {
            for a in 0..3 {
                for b in 0..3 {
                    if a != b {
                        seen[f[a]][f[b]] = true;
                    }
                }
            }
        }
        let mut brute = Vec::new();
        for (i, row) in seen.iter().enumerate() {
            for (j, &s) in row.iter().enumerate().skip(i + 1) {
                if s {
                    brute.push((i, j));
                }
            }
        }
        let edges = edges_from_faces(&faces, n).unwrap();
        assert_eq!(edges, brute);
        assert_eq!(edges.len(), 30);
    }

    #[test]
    fn isolated_vertex_propagation_is_one() {
        let p = propagation_matrix(&[], 1).unwrap();
        assert_eq!(p.to_dense(), vec![1.0]);
    }

    #[test]
    fn empty_graph_is_rejected() {
        assert!(matches!(propagation_matrix(&[], 0), Err(Error::EmptyGraph)));
    }

    #[test]
    fn triangle_propagation_is_uniform_third() {
        let p = propagation_matrix(&[(0, 1), (0, 2), (1, 2)], 3).unwrap();
        for v in p.to_dense() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn topology_invariants_hold() {
        let faces = ring_grid_faces(GridDims::new_unchecked(5, 8));
        let verts = vec![[0.0; 3]; 40];
        let mesh = Mesh::new(verts, faces).unwrap();
        let topo = GraphTopology::from_mesh(&mesh).unwrap();
        assert!(topo.adjacency().is_symmetric());
        assert!(topo.adjacency().entries().all(|(r, c, _)| r != c));
        for i in 0..40 {
            assert_eq!(topo.self_loop_adjacency().get(i, i), 1.0);
            assert!(topo.degree()[i] >= 1.0);
        }
        let p = topo.propagation();
        assert!(p.is_symmetric());
        assert!(p.entries().all(|(_, _, v)| v > 0.0 && v <= 1.0));
    }

    proptest! {
        #[test]
        fn edge_set_is_face_order_independent(seed in any::<u64>()) {
            let mut faces = ring_grid_faces(GridDims::new_unchecked(4, 5));
            let before = edges_from_faces(&faces, 20).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..faces.len()).rev() {
                faces.swap(i, rng.gen_range(0..=i));
            }
            prop_assert_eq!(before, edges_from_faces(&faces, 20).unwrap());
        }
    }
}
