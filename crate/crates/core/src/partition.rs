//! Planar partition of a dense mesh.
//!
//! Faces are agglomerated bottom-up: every face starts as its own cluster and
//! the adjacent pair whose PCA energy increase is smallest is merged until the
//! requested cluster count remains. The energy of a cluster is the smallest
//! eigenvalue of the scatter matrix of its surface (exact second moments of
//! each triangle, area-weighted), so it is zero exactly when the faces are
//! coplanar. Afterwards adjacent
//! clusters are merged when their planes agree (small normal angle and small
//! mutual distance) or when absorbing the smaller one barely raises the energy
//! of the larger one.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Mat3, Plane, Vec3};
use crate::mesh::TriMesh;

/// Weighted first and second moments of a point set, taken relative to a
/// fixed `origin` to limit cancellation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterStats {
    pub origin: Vec3,
    pub count: usize,
    pub weight: f64,
    pub sum: Vec3,
    pub outer: Mat3,
}

impl ScatterStats {
    pub fn new(origin: Vec3) -> Self {
        ScatterStats {
            origin,
            count: 0,
            weight: 0.0,
            sum: Vec3::zeros(),
            outer: Mat3::zeros(),
        }
    }

    /// Unit-weight statistics of an explicit point list.
    pub fn from_points(points: &[Vec3]) -> Self {
        let origin = points.first().copied().unwrap_or_else(Vec3::zeros);
        let mut s = ScatterStats::new(origin);
        for p in points {
            s.add(p, 1.0);
        }
        s
    }

    /// Adds the exact area moments of triangle `abc`. Counts as three points.
    pub fn add_triangle(&mut self, a: &Vec3, b: &Vec3, c: &Vec3) {
        let area = 0.5 * (b - a).cross(&(c - a)).norm();
        let (a, b, c) = (a - self.origin, b - self.origin, c - self.origin);
        let s = a + b + c;
        self.count += 3;
        self.weight += area;
        self.sum += area / 3.0 * s;
        self.outer += area / 12.0
            * (a * a.transpose() + b * b.transpose() + c * c.transpose() + s * s.transpose());
    }

    pub fn add(&mut self, p: &Vec3, w: f64) {
        let d = p - self.origin;
        self.count += 1;
        self.weight += w;
        self.sum += w * d;
        self.outer += w * d * d.transpose();
    }

    pub fn merge(&mut self, other: &ScatterStats) {
        debug_assert_eq!(self.origin, other.origin);
        self.count += other.count;
        self.weight += other.weight;
        self.sum += other.sum;
        self.outer += other.outer;
    }

    pub fn merged(&self, other: &ScatterStats) -> ScatterStats {
        let mut s = self.clone();
        s.merge(other);
        s
    }

    pub fn centroid(&self) -> Vec3 {
        self.origin + self.sum / self.weight
    }

    /// Scatter matrix (covariance × total weight) about the centroid.
    pub fn scatter(&self) -> Mat3 {
        if self.weight <= 0.0 {
            return Mat3::zeros();
        }
        let s = self.outer - self.sum * self.sum.transpose() / self.weight;
        0.5 * (s + s.transpose())
    }

    /// Best-fit plane through the centroid with the smallest-eigenvalue
    /// eigenvector as normal, together with that eigenvalue.
    pub fn fit_plane(&self) -> (Plane, f64) {
        let s = self.scatter();
        let eig = SymmetricEigen::new(s);
        let (k, lambda) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, &l)| (k, l))
            .unwrap();
        let n: Vec3 = eig.eigenvectors.column(k).into_owned();
        let energy = if self.count < 3 { 0.0 } else { lambda.max(0.0) };
        (Plane::from_point_normal(&self.centroid(), &n), energy)
    }

    /// Weighted mean squared distance of the accumulated points to `plane`.
    pub fn mean_sq_distance(&self, plane: &Plane) -> f64 {
        if self.weight <= 0.0 {
            return 0.0;
        }
        let n = plane.normal;
        let w = plane.offset + n.dot(&self.origin);
        let q =
            (n.transpose() * self.outer * n)[0] + 2.0 * w * n.dot(&self.sum) + w * w * self.weight;
        (q / self.weight).max(0.0)
    }
}

/// PCA planarity energy: the smallest eigenvalue of the scatter matrix.
/// Zero for fewer than three points.
pub fn pca_energy(stats: &ScatterStats) -> f64 {
    if stats.count < 3 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(stats.scatter());
    eig.eigenvalues.min().max(0.0)
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub id: u32,
    pub faces: Vec<u32>,
    pub stats: ScatterStats,
    pub plane: Plane,
    pub energy: f64,
    /// Border vertices Ψ: vertices also incident to faces of another cluster.
    pub border: Vec<u32>,
}

impl Cluster {
    pub fn area(&self) -> f64 {
        self.stats.weight
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MergeParams {
    pub angle_thresh_deg: f64,
    pub dist_thresh_m: f64,
    pub rel_energy_thresh: f64,
    /// Clusters with fewer faces are absorbed into their cheapest neighbor.
    pub min_faces: usize,
}

impl Default for MergeParams {
    fn default() -> Self {
        MergeParams {
            angle_thresh_deg: 10.0,
            dist_thresh_m: 0.02,
            rel_energy_thresh: 0.01,
            min_faces: 10,
        }
    }
}

/// Default cluster target: `|F| / 500` clamped to `[20, 5000]`, never above `|F|`.
pub fn default_target_clusters(n_faces: usize) -> usize {
    (n_faces / 500).clamp(20, 5000).min(n_faces.max(1))
}

fn add_face(stats: &mut ScatterStats, mesh: &TriMesh, f: usize) {
    let [a, b, c] = mesh.face_points(f);
    stats.add_triangle(&a, &b, &c);
}

/// Origin used for all scatter statistics of a mesh.
pub fn stats_origin(mesh: &TriMesh) -> Vec3 {
    let (lo, hi) = mesh.bounding_box();
    if lo.x.is_finite() {
        0.5 * (lo + hi)
    } else {
        Vec3::zeros()
    }
}

fn energy_increase(a: &ScatterStats, ea: f64, b: &ScatterStats, eb: f64) -> f64 {
    let u = a.merged(b);
    let eu = pca_energy(&u);
    let d = eu - ea - eb;
    // Exactly coplanar unions come out at roundoff level; snap them to a tie.
    let tol = 1e-11 * u.scatter().trace().abs();
    if d <= tol {
        0.0
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    delta: f64,
    size: u32,
    a: u32,
    b: u32,
    ver_a: u32,
    ver_b: u32,
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
    fn cmp(&self, o: &Self) -> Ordering {
        self.delta
            .total_cmp(&o.delta)
            .then(self.size.cmp(&o.size))
            .then(self.a.cmp(&o.a))
            .then(self.b.cmp(&o.b))
    }
}

/// Mutable cluster graph shared by the agglomeration and merge passes.
struct ClusterGraph {
    stats: Vec<ScatterStats>,
    energy: Vec<f64>,
    faces: Vec<Vec<u32>>,
    neighbors: Vec<Vec<u32>>,
    alive: Vec<bool>,
    version: Vec<u32>,
    live: usize,
    total_energy_trace: Vec<f64>,
}

impl ClusterGraph {
    fn from_labels(mesh: &TriMesh, labels: &[u32], n_clusters: usize, origin: Vec3) -> Self {
        let mut stats = vec![ScatterStats::new(origin); n_clusters];
        let mut faces = vec![Vec::new(); n_clusters];
        for f in 0..mesh.n_faces() {
            let l = labels[f] as usize;
            add_face(&mut stats[l], mesh, f);
            faces[l].push(f as u32);
        }
        let mut neighbors = vec![Vec::new(); n_clusters];
        mesh.for_each_face_pair(|a, b| {
            let (la, lb) = (labels[a as usize], labels[b as usize]);
            if la != lb {
                neighbors[la as usize].push(lb);
                neighbors[lb as usize].push(la);
            }
        });
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        let energy = stats.par_iter().map(pca_energy).collect();
        let alive: Vec<bool> = faces.iter().map(|f| !f.is_empty()).collect();
        let live = alive.iter().filter(|&&a| a).count();
        ClusterGraph {
            stats,
            energy,
            faces,
            neighbors,
            alive,
            version: vec![0; n_clusters],
            live,
            total_energy_trace: Vec::new(),
        }
    }

    fn candidate(&self, a: u32, b: u32) -> Candidate {
        let (a, b) = (a.min(b), a.max(b));
        let (ua, ub) = (a as usize, b as usize);
        Candidate {
            delta: energy_increase(
                &self.stats[ua],
                self.energy[ua],
                &self.stats[ub],
                self.energy[ub],
            ),
            size: (self.faces[ua].len() + self.faces[ub].len()) as u32,
            a,
            b,
            ver_a: self.version[ua],
            ver_b: self.version[ub],
        }
    }

    fn is_current(&self, c: &Candidate) -> bool {
        self.alive[c.a as usize]
            && self.alive[c.b as usize]
            && self.version[c.a as usize] == c.ver_a
            && self.version[c.b as usize] == c.ver_b
    }

    /// Merges `b` into `a` (the smaller id survives). Returns the survivor.
    fn merge(&mut self, a: u32, b: u32) -> u32 {
        let (keep, gone) = (a.min(b) as usize, a.max(b) as usize);
        let gone_stats = self.stats[gone].clone();
        self.stats[keep].merge(&gone_stats);
        self.energy[keep] = pca_energy(&self.stats[keep]);
        let mut moved = std::mem::take(&mut self.faces[gone]);
        if moved.len() > self.faces[keep].len() {
            std::mem::swap(&mut moved, &mut self.faces[keep]);
        }
        self.faces[keep].extend(moved);

        let gone_nbrs = std::mem::take(&mut self.neighbors[gone]);
        for &x in &gone_nbrs {
            if x as usize == keep {
                continue;
            }
            let list = &mut self.neighbors[x as usize];
            if let Ok(p) = list.binary_search(&(gone as u32)) {
                list.remove(p);
            }
            if let Err(p) = list.binary_search(&(keep as u32)) {
                list.insert(p, keep as u32);
            }
        }
        let mut merged: Vec<u32> = self.neighbors[keep]
            .iter()
            .chain(gone_nbrs.iter())
            .copied()
            .filter(|&x| x as usize != keep && x as usize != gone)
            .collect();
        merged.sort_unstable();
        merged.dedup();
        self.neighbors[keep] = merged;

        self.alive[gone] = false;
        self.version[keep] += 1;
        self.version[gone] += 1;
        self.live -= 1;
        keep as u32
    }

    fn total_energy(&self) -> f64 {
        (0..self.alive.len())
            .filter(|&i| self.alive[i])
            .map(|i| self.energy[i])
            .sum()
    }

    fn into_clusters(self) -> Vec<Cluster> {
        let mut out: Vec<Cluster> = (0..self.alive.len())
            .filter(|&i| self.alive[i])
            .map(|i| {
                let mut faces = self.faces[i].clone();
                faces.sort_unstable();
                let (plane, energy) = self.stats[i].fit_plane();
                Cluster {
                    id: 0,
                    faces,
                    stats: self.stats[i].clone(),
                    plane,
                    energy,
                    border: Vec::new(),
                }
            })
            .collect();
        out.sort_by_key(|c| c.faces[0]);
        for (i, c) in out.iter_mut().enumerate() {
            c.id = i as u32;
        }
        out
    }
}

/// Orients each cluster normal to agree with the summed face normals.
fn orient_planes(mesh: &TriMesh, clusters: &mut [Cluster]) {
    for c in clusters.iter_mut() {
        let s: Vec3 = c.faces.iter().map(|&f| mesh.face_cross(f as usize)).sum();
        if s.dot(&c.plane.normal) < 0.0 {
            c.plane = Plane {
                normal: -c.plane.normal,
                offset: -c.plane.offset,
            };
        }
    }
}

/// Outcome of the greedy agglomeration.
#[derive(Debug, Clone)]
pub struct PartitionReport {
    pub target: usize,
    pub reached: usize,
    pub components: usize,
    /// Σ energy after each executed merge (non-decreasing).
    pub energy_trace: Vec<f64>,
}

/// Greedy bottom-up planar partition down to `target_clusters` clusters.
pub fn partition(mesh: &TriMesh, target_clusters: usize) -> Result<Vec<Cluster>> {
    partition_with_report(mesh, target_clusters, false).map(|(c, _)| c)
}

pub fn partition_with_report(
    mesh: &TriMesh,
    target_clusters: usize,
    trace_energy: bool,
) -> Result<(Vec<Cluster>, PartitionReport)> {
    let nf = mesh.n_faces();
    if nf == 0 {
        return Err(Error::Argument("cannot partition an empty mesh".into()));
    }
    if target_clusters == 0 || target_clusters > nf {
        return Err(Error::Argument(format!(
            "target_clusters {target_clusters} outside [1, {nf}]"
        )));
    }
    let labels: Vec<u32> = (0..nf as u32).collect();
    let mut g = ClusterGraph::from_labels(mesh, &labels, nf, stats_origin(mesh));

    let mut pairs = Vec::new();
    mesh.for_each_face_pair(|a, b| pairs.push((a, b)));
    pairs.sort_unstable();
    pairs.dedup();
    let seeds: Vec<Reverse<Candidate>> = pairs
        .par_iter()
        .map(|&(a, b)| Reverse(g.candidate(a, b)))
        .collect();
    let mut heap = BinaryHeap::from(seeds);

    while g.live > target_clusters {
        let Some(Reverse(c)) = heap.pop() else { break };
        if !g.is_current(&c) {
            continue;
        }
        let keep = g.merge(c.a, c.b);
        if trace_energy {
            let t = g.total_energy();
            g.total_energy_trace.push(t);
        }
        for &x in &g.neighbors[keep as usize] {
            heap.push(Reverse(g.candidate(keep, x)));
        }
    }
    let (_, components) = mesh.face_components();
    let reached = g.live;
    if reached > target_clusters {
        log::warn!(
            "partition stopped at {reached} clusters (target {target_clusters}); {components} disconnected components"
        );
    }
    let trace = std::mem::take(&mut g.total_energy_trace);
    let mut clusters = g.into_clusters();
    orient_planes(mesh, &mut clusters);
    fill_borders(mesh, &mut clusters);
    Ok((
        clusters,
        PartitionReport {
            target: target_clusters,
            reached,
            components,
            energy_trace: trace,
        },
    ))
}

/// Per-face cluster labels from a cluster list.
pub fn labels_from_clusters(n_faces: usize, clusters: &[Cluster]) -> Vec<u32> {
    let mut labels = vec![u32::MAX; n_faces];
    for c in clusters {
        for &f in &c.faces {
            labels[f as usize] = c.id;
        }
    }
    labels
}

/// Rebuilds clusters (stats, planes, borders) from per-face labels. Labels
/// need not be compact; output ids are renumbered by first face.
pub fn clusters_from_labels(mesh: &TriMesh, labels: &[u32]) -> Vec<Cluster> {
    let n = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let g = ClusterGraph::from_labels(mesh, labels, n, stats_origin(mesh));
    let mut clusters = g.into_clusters();
    orient_planes(mesh, &mut clusters);
    fill_borders(mesh, &mut clusters);
    clusters
}

/// Whether the merge rules accept the pair, together with the energy
/// increase used to order merges.
fn merge_predicate(g: &ClusterGraph, a: usize, b: usize, p: &MergeParams) -> (bool, f64) {
    let (pa, _) = g.stats[a].fit_plane();
    let (pb, _) = g.stats[b].fit_plane();
    let delta = energy_increase(&g.stats[a], g.energy[a], &g.stats[b], g.energy[b]);
    let angle_ok = pa.angle_deg(&pb) < p.angle_thresh_deg;
    let dist =
        0.5 * (g.stats[a].mean_sq_distance(&pb).sqrt() + g.stats[b].mean_sq_distance(&pa).sqrt());
    let rule12 = angle_ok && dist < p.dist_thresh_m;
    let larger = if g.stats[a].weight >= g.stats[b].weight {
        a
    } else {
        b
    };
    let e_large = g.energy[larger];
    let ratio = if delta == 0.0 {
        0.0
    } else if e_large > 0.0 {
        delta / e_large
    } else {
        f64::INFINITY
    };
    (rule12 || ratio < p.rel_energy_thresh, delta)
}

fn merge_fixpoint(g: &mut ClusterGraph, p: &MergeParams) -> usize {
    let mut heap = BinaryHeap::new();
    let ids: Vec<usize> = (0..g.alive.len()).filter(|&i| g.alive[i]).collect();
    let found: Vec<Candidate> = ids
        .par_iter()
        .flat_map_iter(|&a| {
            let g = &*g;
            g.neighbors[a]
                .iter()
                .filter(move |&&b| (b as usize) > a)
                .filter_map(move |&b| {
                    let (ok, delta) = merge_predicate(g, a, b as usize, p);
                    ok.then(|| Candidate {
                        delta,
                        size: (g.faces[a].len() + g.faces[b as usize].len()) as u32,
                        a: a as u32,
                        b,
                        ver_a: g.version[a],
                        ver_b: g.version[b as usize],
                    })
                })
        })
        .collect();
    heap.extend(found.into_iter().map(Reverse));
    let mut merges = 0;
    while let Some(Reverse(c)) = heap.pop() {
        if !g.is_current(&c) {
            continue;
        }
        let keep = g.merge(c.a, c.b) as usize;
        merges += 1;
        for &x in &g.neighbors[keep].clone() {
            let (ok, delta) = merge_predicate(g, keep, x as usize, p);
            if ok {
                let (a, b) = (keep.min(x as usize) as u32, keep.max(x as usize) as u32);
                heap.push(Reverse(Candidate {
                    delta,
                    size: (g.faces[keep].len() + g.faces[x as usize].len()) as u32,
                    a,
                    b,
                    ver_a: g.version[a as usize],
                    ver_b: g.version[b as usize],
                }));
            }
        }
    }
    merges
}

fn absorb_small(g: &mut ClusterGraph, min_faces: usize) -> usize {
    let mut absorbed = 0;
    for i in 0..g.alive.len() {
        while g.alive[i] && g.faces[i].len() < min_faces && !g.neighbors[i].is_empty() {
            let best = g.neighbors[i]
                .iter()
                .map(|&x| g.candidate(i as u32, x))
                .min()
                .unwrap();
            let nbr = if best.a as usize == i { best.b } else { best.a };
            let keep = g.merge(i as u32, nbr) as usize;
            absorbed += 1;
            if keep != i {
                break;
            }
        }
    }
    absorbed
}

/// Merges adjacent clusters until no pair satisfies the merge rules, then
/// absorbs clusters below `min_faces`; repeats until stable.
pub fn merge_planes(mesh: &TriMesh, clusters: &[Cluster], params: &MergeParams) -> Vec<Cluster> {
    let labels = labels_from_clusters(mesh.n_faces(), clusters);
    let n = clusters
        .iter()
        .map(|c| c.id as usize + 1)
        .max()
        .unwrap_or(0);
    let mut g = ClusterGraph::from_labels(mesh, &labels, n, stats_origin(mesh));
    for _round in 0..64 {
        let merged = merge_fixpoint(&mut g, params);
        let absorbed = absorb_small(&mut g, params.min_faces);
        log::debug!(
            "merge_planes round: {merged} merged, {absorbed} absorbed, {} live",
            g.live
        );
        if absorbed == 0 {
            break;
        }
    }
    let mut out = g.into_clusters();
    orient_planes(mesh, &mut out);
    fill_borders(mesh, &mut out);
    out
}

/// True when some adjacent pair of `clusters` still satisfies the merge rules.
pub fn has_mergeable_pair(mesh: &TriMesh, clusters: &[Cluster], params: &MergeParams) -> bool {
    let labels = labels_from_clusters(mesh.n_faces(), clusters);
    let n = clusters.len();
    let g = ClusterGraph::from_labels(mesh, &labels, n, stats_origin(mesh));
    (0..n).any(|a| {
        g.neighbors[a]
            .iter()
            .any(|&b| (b as usize) > a && merge_predicate(&g, a, b as usize, params).0)
    })
}

/// Border vertex bookkeeping: for each vertex incident to faces of two or
/// more clusters, the sorted ids of those clusters.
#[derive(Debug, Clone, Default)]
pub struct Borders {
    pub vertex_clusters: Vec<(u32, Vec<u32>)>,
    pub per_cluster: Vec<Vec<u32>>,
}

impl Borders {
    pub fn is_empty(&self) -> bool {
        self.vertex_clusters.is_empty()
    }

    pub fn len(&self) -> usize {
        self.vertex_clusters.len()
    }

    pub fn clusters_of(&self, v: u32) -> Option<&[u32]> {
        self.vertex_clusters
            .binary_search_by_key(&v, |(x, _)| *x)
            .ok()
            .map(|i| self.vertex_clusters[i].1.as_slice())
    }
}

/// Labels of the faces around every vertex (sorted, unique).
pub fn vertex_label_sets(mesh: &TriMesh, labels: &[u32]) -> Vec<Vec<u32>> {
    (0..mesh.n_vertices() as u32)
        .into_par_iter()
        .map(|v| {
            let mut s: Vec<u32> = mesh
                .vertex_faces(v)
                .iter()
                .map(|&f| labels[f as usize])
                .collect();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect()
}

pub fn extract_borders(mesh: &TriMesh, labels: &[u32], n_clusters: usize) -> Borders {
    let sets = vertex_label_sets(mesh, labels);
    let mut out = Borders {
        vertex_clusters: Vec::new(),
        per_cluster: vec![Vec::new(); n_clusters],
    };
    for (v, s) in sets.into_iter().enumerate() {
        if s.len() >= 2 {
            for &c in &s {
                out.per_cluster[c as usize].push(v as u32);
            }
            out.vertex_clusters.push((v as u32, s));
        }
    }
    out
}

fn fill_borders(mesh: &TriMesh, clusters: &mut [Cluster]) {
    let labels = labels_from_clusters(mesh.n_faces(), clusters);
    let b = extract_borders(mesh, &labels, clusters.len());
    for (c, border) in clusters.iter_mut().zip(b.per_cluster) {
        c.border = border;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Smallest eigenvalue of a symmetric 3×3 matrix by cyclic Jacobi
    /// rotations; independent of nalgebra's solver.
    fn jacobi_min_eigenvalue(m: [[f64; 3]; 3]) -> f64 {
        let mut a = m;
        for _ in 0..100 {
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut b = a;
                for k in 0..3 {
                    b[k][p] = c * a[k][p] - s * a[k][q];
                    b[k][q] = s * a[k][p] + c * a[k][q];
                }
                let mut d = b;
                for k in 0..3 {
                    d[p][k] = c * b[p][k] - s * b[q][k];
                    d[q][k] = s * b[p][k] + c * b[q][k];
                }
                a = d;
            }
        }
        a[0][0].min(a[1][1]).min(a[2][2])
    }

    fn explicit_scatter(points: &[Vec3]) -> [[f64; 3]; 3] {
        let n = points.len() as f64;
        let c: Vec3 = points.iter().sum::<Vec3>() / n;
        let mut m = [[0.0; 3]; 3];
        for p in points {
            let d = p - c;
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += d[i] * d[j];
                }
            }
        }
        m
    }

    #[test]
    fn coplanar_square_has_zero_energy() {
        let pts = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        assert!(pca_energy(&ScatterStats::from_points(&pts)) < 1e-15);
    }

    #[test]
    fn fewer_than_three_points_is_zero() {
        let pts = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 2.0, 3.0)];
        assert_eq!(pca_energy(&ScatterStats::from_points(&pts)), 0.0);
    }

    #[test]
    fn cube_corners_match_dense_oracle() {
        let pts: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let oracle = jacobi_min_eigenvalue(explicit_scatter(&pts));
        // 8 corners, each coordinate deviates by ±0.5: scatter = 2·I
        assert!((oracle - 2.0).abs() < 1e-12);
        assert!((pca_energy(&ScatterStats::from_points(&pts)) - oracle).abs() < 1e-12);
    }

    #[test]
    fn plane_quadric_distance() {
        let pts: Vec<Vec3> = (0..10)
            .map(|i| Vec3::new(i as f64, (i * i % 7) as f64, 2.0))
            .collect();
        let s = ScatterStats::from_points(&pts);
        let pl = Plane::new(Vec3::z(), -1.0);
        assert!((s.mean_sq_distance(&pl) - 1.0).abs() < 1e-12);
        let (fit, e) = s.fit_plane();
        assert!(e < 1e-12);
        assert!(fit.signed_distance(&Vec3::new(3.0, 3.0, 2.0)).abs() < 1e-12);
    }

    fn pts_strategy(n: usize) -> impl Strategy<Value = Vec<Vec3>> {
        proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -0.5f64..0.5), 3..n).prop_map(|v| {
            v.into_iter()
                .map(|(x, y, z)| Vec3::new(x + 3.0, y - 2.0, z + 1.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn merged_stats_equal_concatenated(a in pts_strategy(60), b in pts_strategy(60)) {
            let origin = Vec3::new(0.5, 0.5, 0.5);
            let mut sa = ScatterStats::new(origin);
            a.iter().for_each(|p| sa.add(p, 1.0));
            let mut sb = ScatterStats::new(origin);
            b.iter().for_each(|p| sb.add(p, 1.0));
            let all: Vec<Vec3> = a.iter().chain(&b).copied().collect();
            let direct = jacobi_min_eigenvalue(explicit_scatter(&all));
            let merged = pca_energy(&sa.merged(&sb));
            prop_assert!((merged - direct).abs() <= 1e-7 * direct.abs().max(1e-9));
        }
    }

    #[test]
    fn accumulators_match_explicit_list_at_10k_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3> = (0..10_000)
            .map(|_| {
                Vec3::new(
                    rng.random_range(2.0..4.0),
                    rng.random_range(-1.0..1.0),
                    1.5 + rng.random_range(-0.003..0.003),
                )
            })
            .collect();
        let mut s = ScatterStats::new(Vec3::new(3.0, 0.0, 1.5));
        pts.iter().for_each(|p| s.add(p, 1.0));
        let direct = jacobi_min_eigenvalue(explicit_scatter(&pts));
        assert!((pca_energy(&s) - direct).abs() <= 1e-7 * direct);
    }

    fn two_triangle_quad() -> TriMesh {
        let v = vec![
            Vec3::zeros(),
            Vec3::x(),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::y(),
        ];
        TriMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).unwrap().0
    }

    #[test]
    fn planar_quad_to_one_cluster() {
        let m = two_triangle_quad();
        let c = partition(&m, 1).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].energy, 0.0);
        assert_eq!(c[0].faces, vec![0, 1]);
    }

    #[test]
    fn identity_partition() {
        let m = crate::mesh::tests::unit_cube();
        let c = partition(&m, m.n_faces()).unwrap();
        assert_eq!(c.len(), 12);
        assert!(c.iter().all(|c| c.energy == 0.0 && c.faces.len() == 1));
    }

    #[test]
    fn target_out_of_range() {
        let m = two_triangle_quad();
        assert!(partition(&m, 0).is_err());
        assert!(partition(&m, 3).is_err());
    }

    #[test]
    fn cube_partition_recovers_sides() {
        let m = crate::mesh::tests::unit_cube();
        let c = partition(&m, 6).unwrap();
        assert_eq!(c.len(), 6);
        for cl in &c {
            assert_eq!(cl.faces.len(), 2);
            let n = cl.plane.normal;
            let axis_aligned = [Vec3::x(), Vec3::y(), Vec3::z()]
                .iter()
                .any(|a| (n.dot(a).abs() - 1.0).abs() < 1e-9);
            assert!(axis_aligned, "normal {n:?}");
            assert!((cl.plane.normal.norm() - 1.0).abs() < 1e-9);
        }
        // every corner of a cube touches three sides
        let labels = labels_from_clusters(m.n_faces(), &c);
        let b = extract_borders(&m, &labels, c.len());
        assert_eq!(b.len(), 8);
        assert!(b.vertex_clusters.iter().all(|(_, s)| s.len() == 3));
    }

    #[test]
    fn coplanar_neighbors_merge() {
        let m = two_triangle_quad();
        let c = partition(&m, 2).unwrap();
        assert_eq!(c.len(), 2);
        let params = MergeParams {
            min_faces: 0,
            ..Default::default()
        };
        let merged = merge_planes(&m, &c, &params);
        assert_eq!(merged.len(), 1);
        assert!(!has_mergeable_pair(&m, &merged, &params));
    }

    #[test]
    fn perpendicular_sides_do_not_merge() {
        let m = crate::mesh::tests::unit_cube();
        let c = partition(&m, 6).unwrap();
        let params = MergeParams {
            min_faces: 0,
            ..Default::default()
        };
        let merged = merge_planes(&m, &c, &params);
        assert_eq!(merged.len(), 6);
    }
}
