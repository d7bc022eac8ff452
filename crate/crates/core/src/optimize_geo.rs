//! Vertex optimization after texturing: a linear least-squares problem over
//! all vertex positions,
//!
//! `E_vert = E_g + λ_l·E_l + λ_r·E_r`
//!
//! * `E_g`: each texel's anchor `Σ b_i v_i` should stay at the texel's
//!   projection `q` onto its (optimized) plane. Rows of a face are weighted
//!   by `1/n_f` so texel density does not change the balance of terms.
//! * `E_l`: border vertices shared by clusters lie on each adjacent plane.
//! * `E_r`: uniform graph Laplacian.
//!
//! `E_l` couples x, y and z through the plane normals, so the unknowns are
//! solved as one `3n` system (interleaved `x, y, z` per vertex) with a
//! sparse Cholesky factorization.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Plane, Vec3};
use crate::mesh::TriMesh;
use crate::optimize_tex::OptimConfig;
use crate::sparse::{expand_ordering, min_degree_ordering, Cholesky, SymCsc, SymTriplets};
use crate::texgen::TexelSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoConfig {
    pub lambda_l: f64,
    pub lambda_r: f64,
    /// Keep texel rows of faces touching a constrained border vertex.
    pub border_data_rows: bool,
    /// Border vertices get `E_l` rows only if two of their clusters meet at
    /// least at this angle; near-coplanar neighbors have no stable
    /// intersection line.
    pub min_dihedral_deg: f64,
}

impl Default for GeoConfig {
    fn default() -> Self {
        GeoConfig::from(&OptimConfig::default())
    }
}

impl From<&OptimConfig> for GeoConfig {
    fn from(c: &OptimConfig) -> Self {
        GeoConfig {
            lambda_l: c.lambda_l,
            lambda_r: c.lambda_r,
            border_data_rows: true,
            min_dihedral_deg: 30.0,
        }
    }
}

impl GeoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l >= 0.0 && self.lambda_r >= 0.0) {
            return Err(Error::Config(format!(
                "geometry weights must be non-negative (lambda_l={}, lambda_r={})",
                self.lambda_l, self.lambda_r
            )));
        }
        Ok(())
    }
}

/// Border vertex with the clusters of its incident faces (sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct BorderVertex {
    pub vertex: u32,
    pub clusters: Vec<u32>,
}

/// Vertices whose incident faces span more than one cluster.
pub fn border_vertices(mesh: &TriMesh, labels: &[u32]) -> Vec<BorderVertex> {
    (0..mesh.n_vertices() as u32)
        .filter_map(|v| {
            let set: BTreeSet<u32> = mesh
                .vertex_faces(v)
                .iter()
                .map(|&f| labels[f as usize])
                .collect();
            (set.len() > 1).then(|| BorderVertex {
                vertex: v,
                clusters: set.into_iter().collect(),
            })
        })
        .collect()
}

/// The constrained set Ψ: border vertices with at least one cluster pair
/// meeting at `min_dihedral_deg` or more.
pub fn constrained_vertices(
    mesh: &TriMesh,
    labels: &[u32],
    planes: &[Plane],
    min_dihedral_deg: f64,
) -> Vec<BorderVertex> {
    border_vertices(mesh, labels)
        .into_iter()
        .filter(|b| {
            b.clusters.iter().enumerate().any(|(i, &a)| {
                b.clusters[i + 1..]
                    .iter()
                    .any(|&c| planes[a as usize].angle_deg(&planes[c as usize]) >= min_dihedral_deg)
            })
        })
        .collect()
}

fn labels_of(mesh: &TriMesh) -> Result<&[u32]> {
    mesh.labels()
        .ok_or_else(|| Error::Argument("geometry solve needs a partitioned mesh".into()))
}

/// Texel count per face.
fn face_texel_counts(mesh: &TriMesh, texels: &TexelSet) -> Vec<u32> {
    let mut n = vec![0u32; mesh.n_faces()];
    for t in &texels.texels {
        n[t.face as usize] += 1;
    }
    n
}

fn skipped_faces(mesh: &TriMesh, psi: &[BorderVertex], cfg: &GeoConfig) -> Vec<bool> {
    let mut skip = vec![false; mesh.n_faces()];
    if !cfg.border_data_rows {
        for b in psi {
            for &f in mesh.vertex_faces(b.vertex) {
                skip[f as usize] = true;
            }
        }
    }
    skip
}

/// Normal equations `H x = g` of the vertex problem over the active
/// (non-isolated) vertices, unknowns `3·index + axis`.
#[derive(Debug, Clone)]
pub struct GeoSystem {
    pub h: SymCsc,
    pub g: Vec<f64>,
    /// Unknown block of each mesh vertex, `None` for isolated vertices.
    pub index: Vec<Option<u32>>,
    /// Active vertices in unknown order.
    pub active: Vec<u32>,
    pub constrained: usize,
}

pub fn build_system(
    mesh: &TriMesh,
    texels: &TexelSet,
    planes: &[Plane],
    cfg: &GeoConfig,
) -> Result<GeoSystem> {
    cfg.validate()?;
    let labels = labels_of(mesh)?;
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= planes.len()) {
        return Err(Error::Argument(format!(
            "cluster {l} has no plane ({} planes)",
            planes.len()
        )));
    }
    let nv = mesh.n_vertices();
    let mut index = vec![None; nv];
    let mut active = Vec::new();
    for v in 0..nv as u32 {
        if !mesh.vertex_faces(v).is_empty() {
            index[v as usize] = Some(active.len() as u32);
            active.push(v);
        }
    }
    if active.len() < nv {
        log::warn!(
            "geometry solve: {} isolated vertices left in place",
            nv - active.len()
        );
    }
    let n = 3 * active.len();
    let psi = constrained_vertices(mesh, labels, planes, cfg.min_dihedral_deg);
    let skip = skipped_faces(mesh, &psi, cfg);
    let counts = face_texel_counts(mesh, texels);
    let idx = |v: u32| index[v as usize].unwrap() as usize;

    // data rows, summed per face first: Σ w b bᵀ and Σ w b qᵀ
    let nf = mesh.n_faces();
    let mut bb = vec![[0.0f64; 6]; nf];
    let mut bq = vec![[[0.0f64; 3]; 3]; nf];
    for tx in &texels.texels {
        let fi = tx.face as usize;
        if skip[fi] {
            continue;
        }
        let w = 1.0 / counts[fi] as f64;
        let q = planes[tx.cluster as usize].project(&tx.p);
        let mut s = 0;
        for a in 0..3 {
            for b in a..3 {
                bb[fi][s] += w * tx.bary[a] * tx.bary[b];
                s += 1;
            }
            for k in 0..3 {
                bq[fi][a][k] += w * tx.bary[a] * q[k];
            }
        }
    }
    let mut trip = SymTriplets::new(n);
    let mut g = vec![0.0; n];
    for (fi, f) in mesh.faces().iter().enumerate() {
        if skip[fi] || counts[fi] == 0 {
            continue;
        }
        let mut s = 0;
        for a in 0..3 {
            let ia = idx(f[a]);
            for b in a..3 {
                let ib = idx(f[b]);
                let v = bb[fi][s];
                s += 1;
                let v = if a != b && ia == ib { 2.0 * v } else { v };
                for k in 0..3 {
                    trip.add(3 * ia + k, 3 * ib + k, v);
                }
            }
            for k in 0..3 {
                g[3 * ia + k] += bq[fi][a][k];
            }
        }
    }

    // line rows
    for b in &psi {
        let i = idx(b.vertex);
        for &c in &b.clusters {
            let pl = &planes[c as usize];
            for k in 0..3 {
                for l in k..3 {
                    trip.add(
                        3 * i + k,
                        3 * i + l,
                        cfg.lambda_l * pl.normal[k] * pl.normal[l],
                    );
                }
                g[3 * i + k] -= cfg.lambda_l * pl.offset * pl.normal[k];
            }
        }
    }

    // Laplacian rows: x_v - mean(neighbors)
    if cfg.lambda_r > 0.0 {
        for &v in &active {
            let nb = mesh.vertex_neighbors(v);
            let inv = 1.0 / nb.len() as f64;
            let mut coef: Vec<(usize, f64)> = Vec::with_capacity(nb.len() + 1);
            coef.push((idx(v), 1.0));
            coef.extend(nb.iter().map(|&u| (idx(u), -inv)));
            for a in 0..coef.len() {
                for b in a..coef.len() {
                    let v = cfg.lambda_r * coef[a].1 * coef[b].1;
                    let v = if a != b && coef[a].0 == coef[b].0 {
                        2.0 * v
                    } else {
                        v
                    };
                    for k in 0..3 {
                        trip.add(3 * coef[a].0 + k, 3 * coef[b].0 + k, v);
                    }
                }
            }
        }
    }
    // explicit zero diagonal keeps add_diagonal usable on empty rows
    for i in 0..n {
        trip.add(i, i, 0.0);
    }
    Ok(GeoSystem {
        h: trip.to_csc(),
        g,
        index,
        active,
        constrained: psi.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub unknowns: usize,
    pub factor_nnz: usize,
    /// `‖Hx − g‖ / ‖g‖` of the returned solution (damping excluded).
    pub relative_residual: f64,
    pub damped: bool,
}

/// Factorizes and solves `sys`, writing the solution into `mesh`.
///
/// If the factorization breaks down, `1e-9·max(diag)` is added to the
/// diagonal with a matching pull toward the current positions, so vertices
/// that no residual touches stay where they are.
pub fn solve_geometry(mesh: &mut TriMesh, sys: &GeoSystem) -> Result<SolveReport> {
    let n = sys.h.n;
    if n == 0 {
        return Ok(SolveReport {
            unknowns: 0,
            factor_nnz: 0,
            relative_residual: 0.0,
            damped: false,
        });
    }
    let coords: Vec<Vec3> = sys
        .active
        .iter()
        .map(|&v| mesh.vertices[v as usize])
        .collect();
    let (offsets, adj) = sys.h.block_graph(3);
    let perm = expand_ordering(&min_degree_ordering(&offsets, &adj), 3);
    let (chol, rhs, damped) =
        match Cholesky::factor(&sys.h, Some(perm.clone())) {
            Ok(c) => (c, sys.g.clone(), false),
            Err(e) => {
                let v = sys.active[e.original / 3];
                log::warn!(
                "geometry system not positive definite at vertex {v} (component of {:?}); damping",
                mesh.vertex_faces(v).first().and_then(|&f| mesh.labels().map(|l| l[f as usize]))
            );
                let mu = 1e-9 * sys.h.diagonal().iter().cloned().fold(1.0, f64::max);
                let mut h = sys.h.clone();
                h.add_diagonal(mu);
                let rhs: Vec<f64> = (0..n)
                    .map(|i| sys.g[i] + mu * coords[i / 3][i % 3])
                    .collect();
                let c = Cholesky::factor(&h, Some(perm)).map_err(|e| {
                    Error::Numeric(format!(
                        "geometry factorization failed at unknown {} after damping",
                        e.original
                    ))
                })?;
                (c, rhs, true)
            }
        };
    let x = chol.solve(&rhs);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "geometry solve produced non-finite positions".into(),
        ));
    }
    let hx = sys.h.mul(&x);
    let num: f64 = hx
        .iter()
        .zip(&sys.g)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den = sys
        .g
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    for (i, &v) in sys.active.iter().enumerate() {
        mesh.vertices[v as usize] = Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
    }
    Ok(SolveReport {
        unknowns: n,
        factor_nnz: chol.nnz(),
        relative_residual: num / den,
        damped,
    })
}

/// One-ring graph over the active vertices, CSR.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeoEnergy {
    pub e_g: f64,
    pub e_l: f64,
    pub e_r: f64,
    pub total: f64,
}

/// `E_vert` by direct summation over texels, border vertices and vertices.
pub fn vertex_energy(
    mesh: &TriMesh,
    texels: &TexelSet,
    planes: &[Plane],
    cfg: &GeoConfig,
) -> Result<GeoEnergy> {
    let labels = labels_of(mesh)?;
    let psi = constrained_vertices(mesh, labels, planes, cfg.min_dihedral_deg);
    let skip = skipped_faces(mesh, &psi, cfg);
    let counts = face_texel_counts(mesh, texels);
    let e_g: f64 = texels
        .texels
        .iter()
        .filter(|t| !skip[t.face as usize])
        .map(|t| {
            let f = mesh.faces()[t.face as usize];
            let anchor: Vec3 = (0..3)
                .map(|i| mesh.vertices[f[i] as usize] * t.bary[i])
                .sum();
            let q = planes[t.cluster as usize].project(&t.p);
            (q - anchor).norm_squared() / counts[t.face as usize] as f64
        })
        .sum();
    let e_l: f64 = psi
        .iter()
        .flat_map(|b| {
            b.clusters.iter().map(move |&c| {
                planes[c as usize]
                    .signed_distance(&mesh.vertices[b.vertex as usize])
                    .powi(2)
            })
        })
        .sum();
    let e_r = laplacian_energy(mesh);
    Ok(GeoEnergy {
        e_g,
        e_l,
        e_r,
        total: e_g + cfg.lambda_l * e_l + cfg.lambda_r * e_r,
    })
}

/// `Σ ‖v − mean(neighbors)‖²` over non-isolated vertices.
pub fn laplacian_energy(mesh: &TriMesh) -> f64 {
    (0..mesh.n_vertices() as u32)
        .map(|v| {
            let nb = mesh.vertex_neighbors(v);
            if nb.is_empty() {
                return 0.0;
            }
            let mean =
                nb.iter().map(|&u| mesh.vertices[u as usize]).sum::<Vec3>() / nb.len() as f64;
            (mesh.vertices[v as usize] - mean).norm_squared()
        })
        .sum()
}

/// Distance from `p` to the intersection line of two planes, `None` when
/// they are parallel.
pub fn distance_to_intersection(p: &Vec3, a: &Plane, b: &Plane) -> Option<f64> {
    let dir = a.normal.cross(&b.normal);
    let s = dir.norm_squared();
    if s < 1e-12 {
        return None;
    }
    // point on the line closest to the origin
    let x0 = (a.normal * b.offset - b.normal * a.offset).cross(&dir) / s;
    let d = p - x0;
    Some((d - dir * (d.dot(&dir) / s)).norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMetrics {
    pub cluster: u32,
    pub interior_vertices: usize,
    /// RMS point-to-plane distance of vertices whose faces all belong to the
    /// cluster.
    pub interior_rms: f64,
    pub border_vertices: usize,
    /// Max distance of the cluster's border vertices to the intersection
    /// lines with their other clusters.
    pub border_line_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoMetrics {
    pub clusters: Vec<ClusterMetrics>,
    pub laplacian: f64,
}

impl GeoMetrics {
    pub fn max_interior_rms(&self) -> f64 {
        self.clusters
            .iter()
            .map(|c| c.interior_rms)
            .fold(0.0, f64::max)
    }

    pub fn max_border_line_distance(&self) -> f64 {
        self.clusters
            .iter()
            .map(|c| c.border_line_max)
            .fold(0.0, f64::max)
    }
}

/// Geometry quality against `planes`; border distances only use cluster
/// pairs meeting at `min_dihedral_deg` or more.
pub fn geometry_metrics(
    mesh: &TriMesh,
    planes: &[Plane],
    min_dihedral_deg: f64,
) -> Result<GeoMetrics> {
    let labels = labels_of(mesh)?;
    let nc = planes.len();
    let mut sq = vec![0.0; nc];
    let mut n_in = vec![0usize; nc];
    let mut n_b = vec![0usize; nc];
    let mut bmax = vec![0.0f64; nc];
    for v in 0..mesh.n_vertices() as u32 {
        let set: BTreeSet<u32> = mesh
            .vertex_faces(v)
            .iter()
            .map(|&f| labels[f as usize])
            .collect();
        let p = mesh.vertices[v as usize];
        let cl: Vec<u32> = set.into_iter().collect();
        match cl.len() {
            0 => {}
            1 => {
                let c = cl[0] as usize;
                sq[c] += planes[c].signed_distance(&p).powi(2);
                n_in[c] += 1;
            }
            _ => {
                for (i, &a) in cl.iter().enumerate() {
                    for &b in &cl[i + 1..] {
                        let (pa, pb) = (&planes[a as usize], &planes[b as usize]);
                        if pa.angle_deg(pb) < min_dihedral_deg {
                            continue;
                        }
                        if let Some(d) = distance_to_intersection(&p, pa, pb) {
                            for c in [a, b] {
                                bmax[c as usize] = bmax[c as usize].max(d);
                            }
                        }
                    }
                }
                for &c in &cl {
                    n_b[c as usize] += 1;
                }
            }
        }
    }
    let clusters = (0..nc)
        .map(|c| ClusterMetrics {
            cluster: c as u32,
            interior_vertices: n_in[c],
            interior_rms: if n_in[c] > 0 {
                (sq[c] / n_in[c] as f64).sqrt()
            } else {
                0.0
            },
            border_vertices: n_b[c],
            border_line_max: bmax[c],
        })
        .collect();
    Ok(GeoMetrics {
        clusters,
        laplacian: laplacian_energy(mesh),
    })
}

/// Pre/post metrics as CSV: one row per stage and cluster.
pub fn write_metrics_csv(before: &GeoMetrics, after: &GeoMetrics, path: &Path) -> Result<()> {
    let mut s = String::from(
        "stage,cluster,interior_vertices,interior_rms,border_vertices,border_line_max,laplacian\n",
    );
    for (stage, m) in [("pre", before), ("post", after)] {
        for c in &m.clusters {
            s.push_str(&format!(
                "{stage},{},{},{:.9e},{},{:.9e},{:.9e}\n",
                c.cluster,
                c.interior_vertices,
                c.interior_rms,
                c.border_vertices,
                c.border_line_max,
                m.laplacian
            ));
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoReport {
    pub before: GeoEnergy,
    pub after: GeoEnergy,
    pub solve: SolveReport,
    pub constrained_vertices: usize,
}

/// Builds and solves the vertex problem in place.
pub fn optimize_geometry(
    mesh: &mut TriMesh,
    texels: &TexelSet,
    planes: &[Plane],
    cfg: &GeoConfig,
) -> Result<GeoReport> {
    let before = vertex_energy(mesh, texels, planes, cfg)?;
    let sys = build_system(mesh, texels, planes, cfg)?;
    let solve = solve_geometry(mesh, &sys)?;
    let after = vertex_energy(mesh, texels, planes, cfg)?;
    log::info!(
        "geometry: E_vert {:.6e} -> {:.6e} ({} unknowns, factor nnz {}, {} constrained border vertices, residual {:.1e})",
        before.total,
        after.total,
        solve.unknowns,
        solve.factor_nnz,
        sys.constrained,
        solve.relative_residual
    );
    Ok(GeoReport {
        before,
        after,
        solve,
        constrained_vertices: sys.constrained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::clusters_from_labels;
    use crate::synth::{make_scene, SceneSpec};
    use crate::texgen::build_patches;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(spec: &SceneSpec, res: f64) -> (TriMesh, TexelSet, Vec<Plane>) {
        let s = make_scene(spec);
        let clusters = clusters_from_labels(&s.mesh, &s.labels);
        let ts = build_patches(&s.mesh, &clusters, res, 1).unwrap();
        (s.mesh, ts, s.planes)
    }

    fn cfg(l: f64, r: f64) -> GeoConfig {
        GeoConfig {
            lambda_l: l,
            lambda_r: r,
            ..Default::default()
        }
    }

    /// Least squares from explicitly stacked rows, solved with a dense
    /// factorization.
    fn dense_oracle(mesh: &TriMesh, ts: &TexelSet, planes: &[Plane], c: &GeoConfig) -> Vec<Vec3> {
        let labels = mesh.labels().unwrap();
        let nv = mesh.n_vertices();
        let n = 3 * nv;
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        let mut count = vec![0.0; mesh.n_faces()];
        for t in &ts.texels {
            count[t.face as usize] += 1.0;
        }
        for t in &ts.texels {
            let s = (1.0 / count[t.face as usize] as f64).sqrt();
            let q = planes[t.cluster as usize].project(&t.p);
            let f = mesh.faces()[t.face as usize];
            for k in 0..3 {
                rows.push((
                    (0..3)
                        .map(|i| (3 * f[i] as usize + k, s * t.bary[i]))
                        .collect(),
                    s * q[k],
                ));
            }
        }
        for v in 0..nv as u32 {
            let set: BTreeSet<u32> = mesh
                .vertex_faces(v)
                .iter()
                .map(|&f| labels[f as usize])
                .collect();
            let cl: Vec<u32> = set.into_iter().collect();
            let sharp = cl.iter().any(|&a| {
                cl.iter().any(|&b| {
                    planes[a as usize].angle_deg(&planes[b as usize]) >= c.min_dihedral_deg
                })
            });
            if cl.len() > 1 && sharp {
                for &cc in &cl {
                    let pl = planes[cc as usize];
                    let s = c.lambda_l.sqrt();
                    rows.push((
                        (0..3)
                            .map(|k| (3 * v as usize + k, s * pl.normal[k]))
                            .collect(),
                        -s * pl.offset,
                    ));
                }
            }
            let nb = mesh.vertex_neighbors(v);
            let s = c.lambda_r.sqrt();
            for k in 0..3 {
                let mut r = vec![(3 * v as usize + k, s)];
                r.extend(
                    nb.iter()
                        .map(|&u| (3 * u as usize + k, -s / nb.len() as f64)),
                );
                rows.push((r, 0.0));
            }
        }
        // dense normal equations accumulated row by row
        let mut ata = DMatrix::<f64>::zeros(n, n);
        let mut aty = DVector::<f64>::zeros(n);
        for (r, y) in &rows {
            for &(i, a) in r {
                aty[i] += a * y;
                for &(j, b) in r {
                    ata[(i, j)] += a * b;
                }
            }
        }
        let x = ata
            .cholesky()
            .expect("oracle system is definite")
            .solve(&aty);
        (0..nv)
            .map(|v| Vec3::new(x[3 * v], x[3 * v + 1], x[3 * v + 2]))
            .collect()
    }

    fn jitter(mesh: &mut TriMesh, sigma: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut mesh.vertices {
            *v += Vec3::new(
                rng.random_range(-sigma..sigma),
                rng.random_range(-sigma..sigma),
                rng.random_range(-sigma..sigma),
            );
        }
    }

    #[test]
    fn matches_dense_oracle_on_500_vertices() {
        // 10×10 cells per side: 602 vertices
        let (mut mesh, ts, planes) =
            scene(&SceneSpec::closed_box(Vec3::zeros(), 1.0, 0.1, 0.0), 20.0);
        assert!(mesh.n_vertices() >= 500, "{}", mesh.n_vertices());
        jitter(&mut mesh, 0.01, 3);
        let c = cfg(3.0, 0.2);
        let oracle = dense_oracle(&mesh, &ts, &planes, &c);
        let sys = build_system(&mesh, &ts, &planes, &c).unwrap();
        let rep = solve_geometry(&mut mesh, &sys).unwrap();
        assert!(!rep.damped);
        assert!(rep.relative_residual < 1e-10);
        let err = mesh
            .vertices
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "max deviation {err}");
    }

    #[test]
    fn exact_mesh_is_a_fixed_point() {
        let (mut mesh, ts, planes) =
            scene(&SceneSpec::closed_box(Vec3::zeros(), 1.0, 0.25, 0.0), 30.0);
        let x0 = mesh.vertices.clone();
        let sys = build_system(&mesh, &ts, &planes, &cfg(1.0, 0.0)).unwrap();
        // b = A·x₀
        let x: Vec<f64> = sys
            .active
            .iter()
            .flat_map(|&v| x0[v as usize].iter().cloned().collect::<Vec<_>>())
            .collect();
        let hx = sys.h.mul(&x);
        assert!(hx.iter().zip(&sys.g).all(|(a, b)| (a - b).abs() < 1e-12));
        solve_geometry(&mut mesh, &sys).unwrap();
        let err = mesh
            .vertices
            .iter()
            .zip(&x0)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn translated_cluster_lands_on_plane() {
        let spec = SceneSpec::plane(2.0, 0.2, crate::synth::Pattern::Constant);
        let (mut mesh, ts, planes) = scene(&spec, 40.0);
        // texels keep their points on the plane; the mesh moves 1 cm off it
        let n = planes[0].normal;
        for v in &mut mesh.vertices {
            *v += n * 0.01;
        }
        let c = cfg(0.0, 1e-12);
        optimize_geometry(&mut mesh, &ts, &planes, &c).unwrap();
        let worst = mesh
            .vertices
            .iter()
            .map(|v| planes[0].signed_distance(v).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn laplacian_of_constant_field_is_zero() {
        let (mesh, ts, planes) = scene(&SceneSpec::closed_box(Vec3::zeros(), 1.0, 0.25, 0.0), 10.0);
        let sys = build_system(
            &mesh,
            &TexelSet {
                texels: Vec::new(),
                ..ts
            },
            &planes,
            &cfg(0.0, 1.0),
        )
        .unwrap();
        for k in 0..3 {
            let x: Vec<f64> = (0..sys.h.n)
                .map(|i| if i % 3 == k { 2.5 } else { 0.0 })
                .collect();
            assert!(sys.h.mul(&x).iter().all(|v| v.abs() < 1e-12));
        }
        let mut flat = mesh.clone();
        for v in &mut flat.vertices {
            *v = Vec3::new(1.0, -2.0, 0.5);
        }
        assert_eq!(laplacian_energy(&flat), 0.0);
    }

    #[test]
    fn box_corners_meet_all_three_planes() {
        let (mut mesh, ts, planes) =
            scene(&SceneSpec::closed_box(Vec3::zeros(), 1.0, 0.2, 0.0), 20.0);
        jitter(&mut mesh, 0.005, 9);
        optimize_geometry(&mut mesh, &ts, &planes, &cfg(1e8, 0.1)).unwrap();
        let labels = mesh.labels().unwrap().to_vec();
        let corners: Vec<BorderVertex> = border_vertices(&mesh, &labels)
            .into_iter()
            .filter(|b| b.clusters.len() == 3)
            .collect();
        assert_eq!(corners.len(), 8);
        for b in corners {
            let p = mesh.vertices[b.vertex as usize];
            for c in b.clusters {
                let d = planes[c as usize].signed_distance(&p).abs();
                assert!(d < 1e-6, "corner {} off plane {c} by {d}", b.vertex);
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let (mut mesh, ts, planes) =
            scene(&SceneSpec::closed_box(Vec3::zeros(), 1.0, 0.25, 0.0), 20.0);
        jitter(&mut mesh, 0.01, 4);
        let c = cfg(2.0, 0.3);
        let before = vertex_energy(&mesh, &ts, &planes, &c).unwrap().total;
        optimize_geometry(&mut mesh, &ts, &planes, &c).unwrap();
        let after = vertex_energy(&mesh, &ts, &planes, &c).unwrap().total;
        assert!(after < before);
        // E is quadratic, so central differences are exact up to rounding
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut worst = 0.0f64;
        for _ in 0..30 {
            let v = rng.random_range(0..mesh.n_vertices());
            let k = rng.random_range(0..3);
            let mut m = mesh.clone();
            m.vertices[v][k] += h;
            let ep = vertex_energy(&m, &ts, &planes, &c).unwrap().total;
            m.vertices[v][k] -= 2.0 * h;
            let em = vertex_energy(&m, &ts, &planes, &c).unwrap().total;
            let grad = (ep - em) / (2.0 * h);
            // curvature along the same coordinate gives the scale
            let curv = (ep + em - 2.0 * after) / (h * h);
            worst = worst.max(grad.abs() / curv.max(1e-12));
        }
        assert!(worst < 1e-8, "gradient/curvature ratio {worst}");
    }

    #[test]
    fn vertex_permutation_permutes_solution() {
        let (mut mesh, ts, planes) =
            scene(&SceneSpec::closed_box(Vec3::zeros(), 1.0, 0.25, 0.0), 20.0);
        jitter(&mut mesh, 0.01, 5);
        let nv = mesh.n_vertices();
        let mut perm: Vec<u32> = (0..nv as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in (1..nv).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        // new id of old vertex v is perm[v]
        let mut verts = vec![Vec3::zeros(); nv];
        for v in 0..nv {
            verts[perm[v] as usize] = mesh.vertices[v];
        }
        let faces: Vec<[u32; 3]> = mesh
            .faces()
            .iter()
            .map(|f| f.map(|v| perm[v as usize]))
            .collect();
        let mut pm = TriMesh::from_valid(verts, faces).with_labels(mesh.labels().unwrap().to_vec());
        let pts = ts.clone();
        let c = cfg(1.0, 0.1);
        optimize_geometry(&mut mesh, &ts, &planes, &c).unwrap();
        optimize_geometry(&mut pm, &pts, &planes, &c).unwrap();
        for v in 0..nv {
            assert!((mesh.vertices[v] - pm.vertices[perm[v] as usize]).norm() < 1e-9);
        }
    }

    #[test]
    fn isolated_vertices_stay_put_and_damping_handles_untouched_ones() {
        let (mesh, ts, planes) = scene(&SceneSpec::closed_box(Vec3::zeros(), 1.0, 0.5, 0.0), 4.0);
        let mut verts = mesh.vertices.clone();
        verts.push(Vec3::new(9.0, 9.0, 9.0));
        let mut m = TriMesh::from_valid(verts, mesh.faces().to_vec())
            .with_labels(mesh.labels().unwrap().to_vec());
        // no texels and no regularizer: only border rows, singular without damping
        let empty = TexelSet {
            texels: Vec::new(),
            ..ts
        };
        let sys = build_system(&m, &empty, &planes, &cfg(1.0, 0.0)).unwrap();
        assert_eq!(sys.active.len(), mesh.n_vertices());
        let rep = solve_geometry(&mut m, &sys).unwrap();
        assert!(rep.damped);
        assert_eq!(m.vertices.last(), Some(&Vec3::new(9.0, 9.0, 9.0)));
        assert!(m.vertices.iter().all(|v| v.iter().all(|x| x.is_finite())));
    }

    #[test]
    fn intersection_distance() {
        let a = Plane::new(Vec3::x(), -1.0);
        let b = Plane::new(Vec3::y(), -2.0);
        let d = distance_to_intersection(&Vec3::new(4.0, 6.0, 7.0), &a, &b).unwrap();
        assert!((d - 5.0).abs() < 1e-12);
        assert!(
            distance_to_intersection(&Vec3::zeros(), &a, &Plane::new(Vec3::x(), 3.0)).is_none()
        );
    }

    #[test]
    fn negative_weights_are_rejected() {
        assert!(cfg(-1.0, 0.1).validate().is_err());
        assert!(cfg(1.0, f64::NAN).validate().is_err());
    }
}
