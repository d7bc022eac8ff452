//! Cluster-aware quadric edge-collapse simplification.
//!
//! Phase 1 collapses edges strictly inside each cluster (both endpoints off
//! every border and off the mesh boundary), one cluster per task. Phase 2
//! walks the remaining border and boundary chains sequentially and only
//! takes near-zero-cost collapses between vertices with identical cluster
//! sets, so outlines and corners survive.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Plane, Vec3};
use crate::mesh::TriMesh;
use crate::partition::{labels_from_clusters, Cluster};

/// Symmetric 4×4 error matrix; `eval(p)` is the weighted sum of squared
/// distances of `p` to the accumulated planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadric(pub Matrix4<f64>);

impl Default for Quadric {
    fn default() -> Self {
        Quadric(Matrix4::zeros())
    }
}

impl Quadric {
    pub fn from_plane(normal: &Vec3, offset: f64, weight: f64) -> Self {
        let p = Vector4::new(normal.x, normal.y, normal.z, offset);
        Quadric(p * p.transpose() * weight)
    }

    pub fn add(&mut self, other: &Quadric) {
        self.0 += other.0;
    }

    pub fn sum(&self, other: &Quadric) -> Quadric {
        Quadric(self.0 + other.0)
    }

    pub fn eval(&self, p: &Vec3) -> f64 {
        collapse_cost(self, p)
    }

    /// Minimizer of the quadric when its 3×3 block is well conditioned.
    pub fn optimal_point(&self) -> Option<Vec3> {
        let a: Matrix3<f64> = self.0.fixed_view::<3, 3>(0, 0).into();
        let eig = SymmetricEigen::new(a);
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        if lo <= 0.0 || hi / lo >= MAX_CONDITION {
            return None;
        }
        let b = Vec3::new(self.0[(0, 3)], self.0[(1, 3)], self.0[(2, 3)]);
        a.cholesky().map(|c| -c.solve(&b))
    }

    /// Position and cost for collapsing an edge `(a, b)` whose summed
    /// quadric is `self`. Falls back to the best of `a`, `b` and the midpoint.
    pub fn collapse_target(&self, a: &Vec3, b: &Vec3) -> (Vec3, f64) {
        if let Some(p) = self.optimal_point() {
            return (p, self.eval(&p));
        }
        // flat or straight neighborhoods: all three are usually exact, and
        // the midpoint keeps the mesh even
        let mid = (a + b) * 0.5;
        let mut best = (mid, self.eval(&mid));
        let noise = 1e-9 * self.0.fixed_view::<3, 3>(0, 0).trace() * (a - b).norm_squared();
        for p in [*a, *b] {
            let c = self.eval(&p);
            if c < best.1 - noise {
                best = (p, c);
            }
        }
        best
    }
}

const MAX_CONDITION: f64 = 1e8;
const TIE_WEIGHT: f64 = 1e-6;

/// `v̄ᵀ Q v̄` for homogeneous `v̄ = (p, 1)`, clamped at zero against rounding.
pub fn collapse_cost(quadric: &Quadric, p: &Vec3) -> f64 {
    let v = Vector4::new(p.x, p.y, p.z, 1.0);
    (v.transpose() * quadric.0 * v)[(0, 0)].max(0.0)
}

#[derive(Debug, Clone, Copy)]
pub struct SimplifyParams {
    /// Result faces / input faces.
    pub target_ratio: f64,
    /// Corners may drift at most twice this far from their planes.
    pub dist_thresh: f64,
    /// Phase-2 collapses must cost less than this times the squared mean
    /// input edge length.
    pub border_cost_factor: f64,
    pub border_weight: f64,
    pub parallel: bool,
}

impl Default for SimplifyParams {
    fn default() -> Self {
        SimplifyParams {
            target_ratio: 0.02,
            dist_thresh: 0.02,
            border_cost_factor: 1e-8,
            border_weight: 1.0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimplifyReport {
    pub input_faces: usize,
    pub target_faces: usize,
    pub after_phase1: usize,
    pub output_faces: usize,
    pub output_vertices: usize,
    /// True when the target was missed because no legal collapse remained.
    pub exhausted: bool,
}

pub fn simplify(mesh: &TriMesh, clusters: &[Cluster], target_ratio: f64) -> Result<TriMesh> {
    let params = SimplifyParams {
        target_ratio,
        ..Default::default()
    };
    simplify_with_report(mesh, clusters, &params).map(|r| r.0)
}

const BOUNDARY: u32 = u32::MAX;

/// Initial quadrics: area-weighted face planes plus, for every border or
/// boundary edge, the plane through the edge perpendicular to each incident
/// face.
fn initial_quadrics(mesh: &TriMesh, labels: &[u32], border_weight: f64) -> Vec<Quadric> {
    let mut q = vec![Quadric::default(); mesh.n_vertices()];
    for (f, tri) in mesh.faces().iter().enumerate() {
        let c = mesh.face_cross(f);
        let len = c.norm();
        if len == 0.0 {
            continue;
        }
        let n = c / len;
        let p0 = mesh.vertices[tri[0] as usize];
        let fq = Quadric::from_plane(&n, -n.dot(&p0), 0.5 * len);
        for &v in tri {
            q[v as usize].add(&fq);
        }
    }
    for (e, &[a, b]) in mesh.edges().iter().enumerate() {
        let ef = mesh.edge_faces(e);
        let feature = ef.len() == 1
            || ef
                .iter()
                .any(|&f| labels[f as usize] != labels[ef[0] as usize]);
        if !feature {
            continue;
        }
        let pa = mesh.vertices[a as usize];
        let dir = mesh.vertices[b as usize] - pa;
        for &f in ef {
            let c = dir.cross(&mesh.face_cross(f as usize));
            let len = c.norm();
            if len == 0.0 {
                continue;
            }
            let n = c / len;
            let cq = Quadric::from_plane(&n, -n.dot(&pa), border_weight);
            q[a as usize].add(&cq);
            q[b as usize].add(&cq);
        }
    }
    q
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    /// Queue order: `cost` plus a small edge-length term, so equal-cost
    /// collapses go shortest first instead of piling onto one vertex.
    priority: f64,
    a: u32,
    b: u32,
    ver_a: u32,
    ver_b: u32,
    pos: Vec3,
}

impl Candidate {
    fn key(&self) -> (u32, u32) {
        (self.a.min(self.b), self.a.max(self.b))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Candidate {
    // reversed: the heap pops the cheapest, then the lowest edge id
    fn cmp(&self, o: &Self) -> Ordering {
        o.priority
            .total_cmp(&self.priority)
            .then_with(|| o.key().cmp(&self.key()))
    }
}

/// Mutable triangle soup with vertex→face incidence, supporting edge collapse.
struct Work {
    pos: Vec<Vec3>,
    quadric: Vec<Quadric>,
    faces: Vec<[u32; 3]>,
    labels: Vec<u32>,
    face_alive: Vec<bool>,
    vf: Vec<Vec<u32>>,
    alive: Vec<bool>,
    version: Vec<u32>,
    boundary: Vec<bool>,
    n_faces: usize,
}

impl Work {
    fn new(
        pos: Vec<Vec3>,
        quadric: Vec<Quadric>,
        faces: Vec<[u32; 3]>,
        labels: Vec<u32>,
        boundary: Vec<bool>,
    ) -> Self {
        let mut vf = vec![Vec::new(); pos.len()];
        for (f, tri) in faces.iter().enumerate() {
            for &v in tri {
                vf[v as usize].push(f as u32);
            }
        }
        let n = pos.len();
        let nf = faces.len();
        Work {
            pos,
            quadric,
            faces,
            labels,
            face_alive: vec![true; nf],
            vf,
            alive: vec![true; n],
            version: vec![0; n],
            boundary,
            n_faces: nf,
        }
    }

    fn neighbors(&self, v: u32) -> Vec<u32> {
        let mut n: Vec<u32> = self.vf[v as usize]
            .iter()
            .flat_map(|&f| self.faces[f as usize])
            .filter(|&w| w != v)
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    fn edge_faces(&self, a: u32, b: u32) -> Vec<u32> {
        self.vf[a as usize]
            .iter()
            .copied()
            .filter(|&f| self.faces[f as usize].contains(&b))
            .collect()
    }

    fn candidate(&self, a: u32, b: u32) -> Candidate {
        // the lower id survives
        let (keep, gone) = (a.min(b), a.max(b));
        let q = self.quadric[keep as usize].sum(&self.quadric[gone as usize]);
        let (pos, cost) = q.collapse_target(&self.pos[keep as usize], &self.pos[gone as usize]);
        let tie = TIE_WEIGHT
            * q.0.fixed_view::<3, 3>(0, 0).trace()
            * (self.pos[keep as usize] - self.pos[gone as usize]).norm_squared();
        Candidate {
            cost,
            priority: cost + tie,
            a: keep,
            b: gone,
            ver_a: self.version[keep as usize],
            ver_b: self.version[gone as usize],
            pos,
        }
    }

    fn is_current(&self, c: &Candidate) -> bool {
        self.alive[c.a as usize]
            && self.alive[c.b as usize]
            && self.version[c.a as usize] == c.ver_a
            && self.version[c.b as usize] == c.ver_b
    }

    fn is_legal(&self, c: &Candidate) -> bool {
        let shared = self.edge_faces(c.a, c.b);
        if shared.is_empty() || shared.len() > 2 {
            return false;
        }
        if self.boundary[c.a as usize] && self.boundary[c.b as usize] && shared.len() != 1 {
            return false;
        }
        // link condition
        let na = self.neighbors(c.a);
        let nb = self.neighbors(c.b);
        let common = na.iter().filter(|x| nb.binary_search(x).is_ok()).count();
        if common != shared.len() {
            return false;
        }
        // normals of the surviving faces must not turn by 90° or more
        for v in [c.a, c.b] {
            for &f in &self.vf[v as usize] {
                let tri = self.faces[f as usize];
                if tri.contains(&c.a) && tri.contains(&c.b) {
                    continue;
                }
                let p = tri.map(|x| self.pos[x as usize]);
                let old = (p[1] - p[0]).cross(&(p[2] - p[0]));
                let q = tri.map(|x| if x == v { c.pos } else { self.pos[x as usize] });
                let new = (q[1] - q[0]).cross(&(q[2] - q[0]));
                if new.dot(&old) <= 1e-6 * old.norm_squared() {
                    return false;
                }
            }
        }
        true
    }

    /// Collapses `c.b` into `c.a` at `c.pos`.
    fn collapse(&mut self, c: &Candidate) {
        let (keep, gone) = (c.a as usize, c.b as usize);
        let moved = std::mem::take(&mut self.vf[gone]);
        for &f in &moved {
            let tri = &mut self.faces[f as usize];
            if tri.contains(&c.a) {
                self.face_alive[f as usize] = false;
                self.n_faces -= 1;
                let third = tri.iter().copied().find(|&x| x != c.a && x != c.b).unwrap();
                self.vf[third as usize].retain(|&g| g != f);
            } else {
                for x in tri.iter_mut() {
                    if *x == c.b {
                        *x = c.a;
                    }
                }
            }
        }
        let mut merged: Vec<u32> = self.vf[keep].iter().chain(&moved).copied().collect();
        merged.retain(|&f| self.face_alive[f as usize]);
        merged.sort_unstable();
        merged.dedup();
        self.vf[keep] = merged;
        self.pos[keep] = c.pos;
        let qb = self.quadric[gone];
        self.quadric[keep].add(&qb);
        self.boundary[keep] |= self.boundary[gone];
        self.alive[gone] = false;
        self.version[keep] += 1;
    }

    /// Greedy collapse loop over edges accepted by `eligible`.
    fn run(
        &mut self,
        target_faces: usize,
        eligible: impl Fn(&Work, u32, u32) -> bool,
        accept: impl Fn(&Work, &Candidate) -> bool,
    ) {
        let mut heap = BinaryHeap::new();
        let push_star = |w: &Work, v: u32, heap: &mut BinaryHeap<Candidate>| {
            for n in w.neighbors(v) {
                if eligible(w, v, n) {
                    let c = w.candidate(v, n);
                    if accept(w, &c) {
                        heap.push(c);
                    }
                }
            }
        };
        for v in 0..self.pos.len() as u32 {
            for n in self.neighbors(v) {
                if v < n && eligible(self, v, n) {
                    let c = self.candidate(v, n);
                    if accept(self, &c) {
                        heap.push(c);
                    }
                }
            }
        }
        while self.n_faces > target_faces {
            let Some(c) = heap.pop() else { break };
            if !self.is_current(&c) || !self.is_legal(&c) {
                continue;
            }
            self.collapse(&c);
            // only edges at the survivor changed cost
            push_star(self, c.a, &mut heap);
        }
    }
}

/// Collapses interior edges of one cluster. Input vertex ids are local.
fn simplify_cluster(mut work: Work, locked: &[bool], target_faces: usize) -> Work {
    work.run(
        target_faces,
        |_, a, b| !locked[a as usize] && !locked[b as usize],
        |_, _| true,
    );
    work
}

fn check_params(params: &SimplifyParams) -> Result<()> {
    if !(params.target_ratio > 0.0 && params.target_ratio < 1.0) {
        return Err(Error::Argument(format!(
            "target ratio {} outside (0, 1)",
            params.target_ratio
        )));
    }
    Ok(())
}

pub fn simplify_with_report(
    mesh: &TriMesh,
    clusters: &[Cluster],
    params: &SimplifyParams,
) -> Result<(TriMesh, SimplifyReport)> {
    check_params(params)?;
    let labels = labels_from_clusters(mesh.n_faces(), clusters);
    let boundary = mesh.boundary_vertices();
    let nv = mesh.n_vertices();
    // a vertex is locked in phase 1 when it touches two clusters or the boundary
    let mut first_label = vec![u32::MAX; nv];
    let mut locked = boundary.clone();
    for (f, tri) in mesh.faces().iter().enumerate() {
        for &v in tri {
            let l = &mut first_label[v as usize];
            if *l == u32::MAX {
                *l = labels[f];
            } else if *l != labels[f] {
                locked[v as usize] = true;
            }
        }
    }
    let quadrics = initial_quadrics(mesh, &labels, params.border_weight);
    let input_faces = mesh.n_faces();
    let target_faces = ((params.target_ratio * input_faces as f64).round() as usize).max(1);

    // phase 1: independent per-cluster jobs over local submeshes
    let job = |c: &Cluster| {
        let mut global: Vec<u32> = c
            .faces
            .iter()
            .flat_map(|&f| mesh.faces()[f as usize])
            .collect();
        global.sort_unstable();
        global.dedup();
        let local = |g: u32| global.binary_search(&g).unwrap() as u32;
        let faces: Vec<[u32; 3]> = c
            .faces
            .iter()
            .map(|&f| mesh.faces()[f as usize].map(local))
            .collect();
        let pos = global.iter().map(|&g| mesh.vertices[g as usize]).collect();
        let q = global.iter().map(|&g| quadrics[g as usize]).collect();
        let lk: Vec<bool> = global.iter().map(|&g| locked[g as usize]).collect();
        let bd = global.iter().map(|&g| boundary[g as usize]).collect();
        let budget = ((params.target_ratio * c.faces.len() as f64).round() as usize).max(1);
        let work = Work::new(pos, q, faces, vec![c.id; c.faces.len()], bd);
        (global, simplify_cluster(work, &lk, budget))
    };
    let results: Vec<(Vec<u32>, Work)> = if params.parallel {
        clusters.par_iter().map(job).collect()
    } else {
        clusters.iter().map(job).collect()
    };

    // join: locked vertices keep their global ids and positions; interior
    // survivors are written back into their own global slot
    let mut pos = mesh.vertices.clone();
    let mut q = quadrics.clone();
    let mut faces = Vec::new();
    let mut flabels = Vec::new();
    for (global, w) in &results {
        for (l, &g) in global.iter().enumerate() {
            if w.alive[l] {
                pos[g as usize] = w.pos[l];
                q[g as usize] = w.quadric[l];
            }
        }
        for (f, tri) in w.faces.iter().enumerate() {
            if w.face_alive[f] {
                faces.push(tri.map(|l| global[l as usize]));
                flabels.push(w.labels[f]);
            }
        }
    }
    let after_phase1 = faces.len();

    // phase 2: sequential near-exact collapses along border chains
    let mut label_sets: Vec<Vec<u32>> = vec![Vec::new(); nv];
    for (tri, &l) in faces.iter().zip(&flabels) {
        for &v in tri {
            label_sets[v as usize].push(l);
        }
    }
    for (v, s) in label_sets.iter_mut().enumerate() {
        s.sort_unstable();
        s.dedup();
        if boundary[v] {
            s.push(BOUNDARY);
        }
    }
    let planes: Vec<Plane> = {
        let mut p = vec![Plane::new(Vec3::z(), 0.0); clusters.len()];
        for c in clusters {
            p[c.id as usize] = c.plane;
        }
        p
    };
    let cost_limit = params.border_cost_factor * mesh.mean_edge_length().powi(2);
    let corner_tol = 2.0 * params.dist_thresh;
    let mut work = Work::new(pos, q, faces, flabels, boundary);
    if work.n_faces > target_faces {
        work.run(
            target_faces,
            |w, a, b| {
                let (sa, sb) = (&label_sets[a as usize], &label_sets[b as usize]);
                if sa.len() < 2 || sa != sb {
                    return false;
                }
                let ef = w.edge_faces(a, b);
                ef.len() == 1
                    || ef
                        .iter()
                        .any(|&f| w.labels[f as usize] != w.labels[ef[0] as usize])
            },
            |_, c| {
                if c.cost >= cost_limit {
                    return false;
                }
                let s = &label_sets[c.a as usize];
                let real = s.iter().filter(|&&l| l != BOUNDARY);
                if real.clone().count() >= 3 {
                    return real
                        .into_iter()
                        .all(|&l| planes[l as usize].signed_distance(&c.pos).abs() <= corner_tol);
                }
                true
            },
        );
    }
    let out_faces: Vec<[u32; 3]> = (0..work.faces.len())
        .filter(|&f| work.face_alive[f])
        .map(|f| work.faces[f])
        .collect();
    let out_labels: Vec<u32> = (0..work.faces.len())
        .filter(|&f| work.face_alive[f])
        .map(|f| work.labels[f])
        .collect();
    let out = TriMesh::from_valid(work.pos, out_faces)
        .with_labels(out_labels)
        .compact();
    let report = SimplifyReport {
        input_faces,
        target_faces,
        after_phase1,
        output_faces: out.n_faces(),
        output_vertices: out.n_vertices(),
        exhausted: out.n_faces() as f64 > 1.2 * target_faces as f64,
    };
    if report.exhausted {
        log::warn!(
            "simplification stopped at {} faces (target {}): no legal collapse left",
            report.output_faces,
            report.target_faces
        );
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::clusters_from_labels;
    use crate::synth::{make_scene, SceneSpec};

    fn grid(n: usize) -> TriMesh {
        let mut v = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                v.push(Vec3::new(i as f64 / n as f64, j as f64 / n as f64, 0.0));
            }
        }
        let id = |i: usize, j: usize| (j * (n + 1) + i) as u32;
        let mut f = Vec::new();
        for j in 0..n {
            for i in 0..n {
                f.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                f.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        TriMesh::from_valid(v, f)
    }

    #[test]
    fn plane_quadric_cost_is_squared_distance() {
        let q = Quadric::from_plane(&Vec3::z(), 0.0, 1.0);
        assert_eq!(collapse_cost(&q, &Vec3::new(0.3, -2.0, 0.0)), 0.0);
        let d = 0.37;
        assert!((collapse_cost(&q, &Vec3::new(1.0, 2.0, d)) - d * d).abs() < 1e-15);
    }

    #[test]
    fn optimal_point_matches_dense_normal_equations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut q = Quadric::default();
            // least squares Σ (nᵢ·x + wᵢ)² through the normal equations
            let mut ata = [[0.0f64; 3]; 3];
            let mut atb = [0.0f64; 3];
            for _ in 0..5 {
                let n = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize();
                let w: f64 = rng.random_range(-2.0..2.0);
                q.add(&Quadric::from_plane(&n, w, 1.0));
                for i in 0..3 {
                    for j in 0..3 {
                        ata[i][j] += n[i] * n[j];
                    }
                    atb[i] -= n[i] * w;
                }
            }
            // Gaussian elimination with partial pivoting
            let mut m = [[0.0; 4]; 3];
            for i in 0..3 {
                m[i][..3].copy_from_slice(&ata[i]);
                m[i][3] = atb[i];
            }
            for c in 0..3 {
                let p = (c..3)
                    .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
                    .unwrap();
                m.swap(c, p);
                for r in 0..3 {
                    if r != c {
                        let f = m[r][c] / m[c][c];
                        for k in c..4 {
                            m[r][k] -= f * m[c][k];
                        }
                    }
                }
            }
            let x = Vec3::new(m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]);
            let got = q.optimal_point().unwrap();
            assert!((got - x).norm() < 1e-8, "{got} vs {x}");
        }
    }

    #[test]
    fn degenerate_quadric_falls_back_to_endpoints() {
        let q = Quadric::from_plane(&Vec3::z(), -1.0, 1.0);
        assert!(q.optimal_point().is_none());
        let (p, c) = q.collapse_target(&Vec3::new(0.0, 0.0, 1.0), &Vec3::new(1.0, 0.0, 3.0));
        assert_eq!(p, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(c, 0.0);
    }

    #[test]
    fn quadric_is_psd_after_init() {
        let s = make_scene(&SceneSpec::closed_box(Vec3::zeros(), 1.0, 0.2, 0.003));
        let q = initial_quadrics(&s.mesh, &s.labels, 1.0);
        for qi in q {
            assert_eq!(qi.0, qi.0.transpose());
            let ev = SymmetricEigen::new(qi.0).eigenvalues;
            assert!(ev.min() > -1e-9);
        }
    }

    #[test]
    fn flat_grid_keeps_its_square() {
        let mesh = grid(50);
        let labels = vec![0; mesh.n_faces()];
        let clusters = clusters_from_labels(&mesh, &labels);
        let (out, rep) = simplify_with_report(
            &mesh,
            &clusters,
            &SimplifyParams {
                target_ratio: 0.02,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!rep.exhausted, "{rep:?}");
        let t = rep.target_faces as f64;
        assert!(
            (out.n_faces() as f64) >= 0.8 * t && (out.n_faces() as f64) <= 1.2 * t,
            "{rep:?}"
        );
        assert!(out.vertices.iter().all(|v| v.z == 0.0));
        for c in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
            assert!(
                out.vertices
                    .iter()
                    .any(|v| (v.x - c[0]).abs() < 1e-12 && (v.y - c[1]).abs() < 1e-12),
                "corner {c:?} lost"
            );
        }
        // area is preserved exactly, so the outline is still the unit square
        assert!((out.total_area() - 1.0).abs() < 1e-12);
        let q = initial_quadrics(&out, out.labels().unwrap(), 1.0);
        for (v, qi) in q.iter().enumerate() {
            assert!(
                qi.eval(&out.vertices[v]) < 1e-14,
                "{} {}",
                qi.eval(&out.vertices[v]),
                out.vertices[v]
            );
        }
        assert!(out.validate().is_ok());
    }

    #[test]
    fn box_vertices_stay_on_their_planes() {
        let s = make_scene(&SceneSpec::closed_box(Vec3::zeros(), 1.0, 0.02, 0.0));
        let clusters = clusters_from_labels(&s.mesh, &s.labels);
        let (out, rep) = simplify_with_report(
            &s.mesh,
            &clusters,
            &SimplifyParams {
                target_ratio: 0.01,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.n_faces() < s.mesh.n_faces() / 10, "{rep:?}");
        let labels = out.labels().unwrap();
        for (f, tri) in out.faces().iter().enumerate() {
            let pl = &s.planes[labels[f] as usize];
            for &v in tri {
                assert!(pl.signed_distance(&out.vertices[v as usize]).abs() < 1e-6);
            }
        }
        for corner in 0..8 {
            let c = Vec3::new(
                (corner & 1) as f64,
                ((corner >> 1) & 1) as f64,
                ((corner >> 2) & 1) as f64,
            );
            assert!(
                out.vertices.iter().any(|v| (v - c).norm() < 1e-12),
                "corner {c} lost"
            );
        }
        assert!(out.validate().is_ok());
        assert_eq!(out.nonmanifold_edges(), 0);
    }

    #[test]
    fn no_face_spans_disjoint_clusters() {
        let s = make_scene(&SceneSpec::room(Vec3::new(4.0, 3.0, 2.5), true, 0.1, 0.002));
        let clusters = clusters_from_labels(&s.mesh, &s.labels);
        let (out, _) =
            simplify_with_report(&s.mesh, &clusters, &SimplifyParams::default()).unwrap();
        let sets = crate::partition::vertex_label_sets(&out, out.labels().unwrap());
        for (f, tri) in out.faces().iter().enumerate() {
            let l = out.labels().unwrap()[f];
            assert!(tri.iter().all(|&v| sets[v as usize].contains(&l)));
        }
        assert_eq!(out.nonmanifold_edges(), 0);
    }

    #[test]
    fn parallel_equals_sequential() {
        let s = make_scene(&SceneSpec::room(Vec3::new(4.0, 3.0, 2.5), true, 0.1, 0.002));
        let clusters = clusters_from_labels(&s.mesh, &s.labels);
        let p = SimplifyParams::default();
        let (a, _) = simplify_with_report(&s.mesh, &clusters, &p).unwrap();
        let (b, _) = simplify_with_report(
            &s.mesh,
            &clusters,
            &SimplifyParams {
                parallel: false,
                ..p
            },
        )
        .unwrap();
        assert_eq!(a.faces(), b.faces());
        assert_eq!(a.vertices, b.vertices);
    }

    #[test]
    fn ratio_out_of_range() {
        let mesh = grid(4);
        let c = clusters_from_labels(&mesh, &vec![0; mesh.n_faces()]);
        for r in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(simplify(&mesh, &c, r), Err(Error::Argument(_))));
        }
    }
}
