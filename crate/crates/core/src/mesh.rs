//! Indexed triangle mesh with compact, deterministic adjacency.

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Vertex→faces and edge→faces incidence, stored CSR-style.
///
/// Edges are kept sorted by `(min, max)` vertex index so lookups are binary
/// searches and every traversal order is reproducible.
#[derive(Debug, Clone, Default)]
pub struct Adjacency {
    vf_offsets: Vec<u32>,
    vf: Vec<u32>,
    edges: Vec<[u32; 2]>,
    ef_offsets: Vec<u32>,
    ef: Vec<u32>,
    nonmanifold_edges: usize,
}

impl Adjacency {
    fn build(n_vertices: usize, faces: &[[u32; 3]]) -> Self {
        let mut counts = vec![0u32; n_vertices + 1];
        for f in faces {
            for &v in f {
                counts[v as usize + 1] += 1;
            }
        }
        for i in 0..n_vertices {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut vf = vec![0u32; faces.len() * 3];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                vf[fill[v as usize] as usize] = fi as u32;
                fill[v as usize] += 1;
            }
        }

        let mut half: Vec<(u32, u32, u32)> = Vec::with_capacity(faces.len() * 3);
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                half.push((a.min(b), a.max(b), fi as u32));
            }
        }
        half.sort_unstable();
        let mut edges = Vec::with_capacity(half.len() / 2 + 1);
        let mut ef_offsets = vec![0u32];
        let mut ef = Vec::with_capacity(half.len());
        let mut nonmanifold_edges = 0;
        let mut i = 0;
        while i < half.len() {
            let (a, b, _) = half[i];
            let mut j = i;
            while j < half.len() && half[j].0 == a && half[j].1 == b {
                ef.push(half[j].2);
                j += 1;
            }
            if j - i > 2 {
                nonmanifold_edges += 1;
            }
            edges.push([a, b]);
            ef_offsets.push(ef.len() as u32);
            i = j;
        }
        Adjacency {
            vf_offsets: counts,
            vf,
            edges,
            ef_offsets,
            ef,
            nonmanifold_edges,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    /// Per-face cluster id, once the mesh has been partitioned.
    pub face_labels: Option<Vec<u32>>,
    adj: Adjacency,
}

impl TriMesh {
    /// Builds a mesh, dropping degenerate faces (repeated indices). Returns
    /// the mesh and the number of dropped faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<(Self, usize)> {
        let n = vertices.len() as u32;
        let mut kept = Vec::with_capacity(faces.len());
        let mut dropped = 0;
        for (i, f) in faces.into_iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::Argument(format!(
                    "face {i} references vertex out of range ({f:?}, |V|={n})"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                dropped += 1;
                continue;
            }
            kept.push(f);
        }
        Ok((Self::from_valid(vertices, kept), dropped))
    }

    /// Builds a mesh from faces already known to be in range and
    /// non-degenerate.
    pub fn from_valid(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        let adj = Adjacency::build(vertices.len(), &faces);
        if adj.nonmanifold_edges > 0 {
            log::warn!("mesh has {} non-manifold edges", adj.nonmanifold_edges);
        }
        TriMesh {
            vertices,
            faces,
            face_labels: None,
            adj,
        }
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Self {
        assert_eq!(labels.len(), self.faces.len());
        self.face_labels = Some(labels);
        self
    }

    #[inline]
    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    #[inline]
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    #[inline]
    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.face_labels.as_deref()
    }

    #[inline]
    pub fn vertex_faces(&self, v: u32) -> &[u32] {
        let a = self.adj.vf_offsets[v as usize] as usize;
        let b = self.adj.vf_offsets[v as usize + 1] as usize;
        &self.adj.vf[a..b]
    }

    #[inline]
    pub fn edges(&self) -> &[[u32; 2]] {
        &self.adj.edges
    }

    #[inline]
    pub fn edge_faces(&self, e: usize) -> &[u32] {
        let a = self.adj.ef_offsets[e] as usize;
        let b = self.adj.ef_offsets[e + 1] as usize;
        &self.adj.ef[a..b]
    }

    pub fn find_edge(&self, a: u32, b: u32) -> Option<usize> {
        let key = [a.min(b), a.max(b)];
        self.adj.edges.binary_search(&key).ok()
    }

    pub fn nonmanifold_edges(&self) -> usize {
        self.adj.nonmanifold_edges
    }

    /// Sorted, deduplicated one-ring of `v`.
    pub fn vertex_neighbors(&self, v: u32) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .vertex_faces(v)
            .iter()
            .flat_map(|&f| self.faces[f as usize])
            .filter(|&u| u != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Vertices lying on an edge with exactly one incident face.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut out = vec![false; self.vertices.len()];
        for (e, [a, b]) in self.adj.edges.iter().enumerate() {
            if self.edge_faces(e).len() == 1 {
                out[*a as usize] = true;
                out[*b as usize] = true;
            }
        }
        out
    }

    #[inline]
    pub fn face_points(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized face normal (twice the area vector).
    #[inline]
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_points(f);
        (b - a).cross(&(c - a))
    }

    #[inline]
    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    #[inline]
    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_points(f);
        (a + b + c) / 3.0
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn mean_edge_length(&self) -> f64 {
        if self.adj.edges.is_empty() {
            return 0.0;
        }
        let s: f64 = self
            .adj
            .edges
            .iter()
            .map(|[a, b]| (self.vertices[*a as usize] - self.vertices[*b as usize]).norm())
            .sum();
        s / self.adj.edges.len() as f64
    }

    /// Calls `f(face_a, face_b)` once per pair of faces sharing an edge,
    /// with `face_a < face_b`.
    pub fn for_each_face_pair(&self, mut f: impl FnMut(u32, u32)) {
        for e in 0..self.adj.edges.len() {
            let fs = self.edge_faces(e);
            for i in 0..fs.len() {
                for j in i + 1..fs.len() {
                    f(fs[i].min(fs[j]), fs[i].max(fs[j]));
                }
            }
        }
    }

    /// Connected-component id per face (edge connectivity).
    pub fn face_components(&self) -> (Vec<u32>, usize) {
        let n = self.faces.len();
        let mut parent: Vec<u32> = (0..n as u32).collect();
        fn find(p: &mut [u32], mut x: u32) -> u32 {
            while p[x as usize] != x {
                p[x as usize] = p[p[x as usize] as usize];
                x = p[x as usize];
            }
            x
        }
        self.for_each_face_pair(|a, b| {
            let ra = find(&mut parent, a);
            let rb = find(&mut parent, b);
            if ra != rb {
                parent[ra.max(rb) as usize] = ra.min(rb);
            }
        });
        let mut ids = vec![u32::MAX; n];
        let mut remap = std::collections::HashMap::new();
        for f in 0..n {
            let r = find(&mut parent, f as u32);
            let next = remap.len() as u32;
            ids[f] = *remap.entry(r).or_insert(next);
        }
        (ids, remap.len())
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Checks the structural invariants: indices in range, no degenerate
    /// face, at most two faces per edge.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::Argument(format!("face {i} index out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Argument(format!("face {i} is degenerate")));
            }
        }
        if self.adj.nonmanifold_edges > 0 {
            return Err(Error::Argument(format!(
                "{} non-manifold edges",
                self.adj.nonmanifold_edges
            )));
        }
        if let Some(l) = &self.face_labels {
            if l.len() != self.faces.len() {
                return Err(Error::Argument(
                    "label count differs from face count".into(),
                ));
            }
        }
        Ok(())
    }

    /// Drops vertices not referenced by any face, keeping labels.
    pub fn compact(self) -> Self {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        for f in &self.faces {
            for &v in f {
                if remap[v as usize] == u32::MAX {
                    remap[v as usize] = verts.len() as u32;
                    verts.push(self.vertices[v as usize]);
                }
            }
        }
        let faces = self
            .faces
            .iter()
            .map(|f| {
                [
                    remap[f[0] as usize],
                    remap[f[1] as usize],
                    remap[f[2] as usize],
                ]
            })
            .collect();
        let mut out = TriMesh::from_valid(verts, faces);
        out.face_labels = self.face_labels;
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn unit_cube() -> TriMesh {
        let v = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let faces = vec![
            [0, 2, 1],
            [1, 2, 3], // z=0
            [4, 5, 6],
            [5, 7, 6], // z=1
            [0, 1, 4],
            [1, 5, 4], // y=0
            [2, 6, 3],
            [3, 6, 7], // y=1
            [0, 4, 2],
            [2, 4, 6], // x=0
            [1, 3, 5],
            [3, 7, 5], // x=1
        ];
        TriMesh::new(v, faces).unwrap().0
    }

    #[test]
    fn cube_adjacency() {
        let m = unit_cube();
        assert_eq!(m.n_vertices(), 8);
        assert_eq!(m.n_faces(), 12);
        assert_eq!(m.edges().len(), 18);
        for e in 0..m.edges().len() {
            assert_eq!(m.edge_faces(e).len(), 2);
        }
        assert!(m.validate().is_ok());
        assert!(m.boundary_vertices().iter().all(|b| !b));
        assert!((m.total_area() - 6.0).abs() < 1e-12);
        assert_eq!(m.face_components().1, 1);
    }

    #[test]
    fn degenerate_faces_dropped() {
        let v = vec![
            Vec3::zeros(),
            Vec3::x(),
            Vec3::y(),
            Vec3::z(),
            Vec3::repeat(1.0),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        let (m, dropped) = TriMesh::new(v, vec![[0, 1, 2], [3, 3, 5]]).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(m.n_faces(), 1);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(TriMesh::new(vec![Vec3::zeros(); 3], vec![[0, 1, 3]]).is_err());
    }

    #[test]
    fn neighbors_sorted() {
        let m = unit_cube();
        let n = m.vertex_neighbors(0);
        assert_eq!(n, vec![1, 2, 4]);
    }
}
