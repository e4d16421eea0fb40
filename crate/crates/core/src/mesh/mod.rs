//! Fixed-topology triangle meshes and their graph structure.

mod obj;
mod topology;

pub use obj::{load_mesh, parse_obj, save_mesh, write_obj};
pub use topology::{edges_from_faces, propagation_matrix, GraphTopology};

use crate::error::{Error, Result};

/// Triangle surface: vertex coordinates in millimetres plus zero-based faces.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::Topology(format!(
                "mesh needs vertices and faces, got {} and {}",
                vertices.len(),
                faces.len()
            )));
        }
        if vertices.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Topology("non-finite vertex coordinate".into()));
        }
        validate_faces(&faces, vertices.len())?;
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Same faces, new coordinates.
    pub fn with_vertices(&self, vertices: Vec<[f64; 3]>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::contract(
                "with_vertices",
                format!(
                    "expected {} vertices, got {}",
                    self.vertices.len(),
                    vertices.len()
                ),
            ));
        }
        if vertices.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Topology("non-finite vertex coordinate".into()));
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
        })
    }

    /// Relabels vertex `i` as `perm[i]`, rewriting faces to match.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.vertices.len() {
            return Err(Error::contract("permuted", "permutation length mismatch"));
        }
        let mut vertices = vec![[0.0; 3]; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            vertices[p] = self.vertices[i];
        }
        let faces = self
            .faces
            .iter()
            .map(|f| [perm[f[0]], perm[f[1]], perm[f[2]]])
            .collect();
        Mesh::new(vertices, faces)
    }
}

pub(crate) fn validate_faces(faces: &[[usize; 3]], n: usize) -> Result<()> {
    for (k, f) in faces.iter().enumerate() {
        if let Some(&bad) = f.iter().find(|&&i| i >= n) {
            return Err(Error::Topology(format!(
                "face {k} references vertex {bad}, mesh has {n}"
            )));
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(Error::Topology(format!("face {k} repeats a vertex: {f:?}")));
        }
    }
    Ok(())
}
