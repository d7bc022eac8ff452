//! Line constraints: 3D border lines between cluster planes, a simplified
//! LSD-style 2D segment detector, and the pixel sets matching one to the
//! other.

use std::collections::BTreeMap;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;

use crate::geom::{skew, CameraIntrinsics, Mat3, Plane, Pose, Vec2, Vec3};
use crate::image::{DepthImage, FloatImage};
use crate::mesh::TriMesh;
use crate::scene_io::FrameSet;

#[derive(Debug, Clone, Copy)]
pub struct LineParams {
    pub min_len_px: f64,
    /// Minimum dihedral angle (degrees) for a border to be used.
    pub angle_min_deg: f64,
    /// Maximum mean perpendicular distance (pixels) of a match.
    pub max_px: f64,
    pub max_angle_diff_deg: f64,
    /// Region-growing angle tolerance (degrees).
    pub tau_deg: f64,
    pub min_coherence: f64,
    /// Ω pixels farther than this from either plane are dropped.
    pub depth_tol: f64,
}

impl Default for LineParams {
    fn default() -> Self {
        LineParams {
            min_len_px: 40.0,
            angle_min_deg: 30.0,
            max_px: 10.0,
            max_angle_diff_deg: 5.0,
            tau_deg: 22.5,
            min_coherence: 0.8,
            depth_tol: 0.03,
        }
    }
}

// ---------------------------------------------------------------------------
// 2D detection

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub p0: Vec2,
    pub p1: Vec2,
    pub width: f64,
}

impl Segment {
    pub fn length(&self) -> f64 {
        (self.p1 - self.p0).norm()
    }

    /// Undirected orientation in `[0, 180)` degrees.
    pub fn angle_deg(&self) -> f64 {
        let d = self.p1 - self.p0;
        d.y.atan2(d.x).to_degrees().rem_euclid(180.0)
    }
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let mut d = (a - b).rem_euclid(2.0 * std::f64::consts::PI);
    if d > std::f64::consts::PI {
        d = 2.0 * std::f64::consts::PI - d;
    }
    d
}

/// Difference of undirected orientations in degrees, in `[0, 90]`.
pub fn orientation_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Region-growing line segment detection on a luminance image in `[0, 1]`.
///
/// Gradients use the 2×2 LSD mask (located at pixel corners `x + ½`), pixels
/// are grown from the strongest seeds while their level-line angle stays
/// within `tau` of the region's mean, and every region is approximated by
/// its principal-axis rectangle. A rectangle is kept when at least
/// `min_coherence` of the pixels it covers are aligned and it is at least
/// `min_len_px` long.
pub fn detect_segments(gray: &FloatImage, params: &LineParams) -> Vec<Segment> {
    let (w, h) = (gray.width as usize, gray.height as usize);
    if w < 3 || h < 3 {
        return Vec::new();
    }
    let tau = params.tau_deg.to_radians();
    // LSD's gradient threshold for quantization error 2 on a 0..255 scale
    let rho = 2.0 / tau.sin();
    let gw = w - 1;
    let gh = h - 1;
    let mut mag = vec![0.0f64; gw * gh];
    let mut ang = vec![0.0f64; gw * gh];
    let px = |x: usize, y: usize| gray.data[y * w + x] as f64 * 255.0;
    for y in 0..gh {
        for x in 0..gw {
            let (a, b, c, d) = (px(x, y), px(x + 1, y), px(x, y + 1), px(x + 1, y + 1));
            let gx = (b + d - a - c) * 0.5;
            let gy = (c + d - a - b) * 0.5;
            mag[y * gw + x] = (gx * gx + gy * gy).sqrt();
            ang[y * gw + x] = gx.atan2(-gy);
        }
    }
    let mut order: Vec<usize> = (0..gw * gh).filter(|&i| mag[i] > rho).collect();
    order.sort_by(|&a, &b| mag[b].total_cmp(&mag[a]).then(a.cmp(&b)));
    let mut used = vec![false; gw * gh];
    let mut out = Vec::new();
    let mut region = Vec::new();
    for &seed in &order {
        if used[seed] {
            continue;
        }
        region.clear();
        region.push(seed);
        used[seed] = true;
        let (mut sx, mut sy) = (ang[seed].cos(), ang[seed].sin());
        let mut theta = ang[seed];
        let mut head = 0;
        while head < region.len() {
            let i = region[head];
            head += 1;
            let (x, y) = ((i % gw) as i64, (i / gw) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= gw as i64 || ny >= gh as i64 {
                        continue;
                    }
                    let j = ny as usize * gw + nx as usize;
                    if used[j] || mag[j] <= rho || angle_diff(ang[j], theta) > tau {
                        continue;
                    }
                    used[j] = true;
                    region.push(j);
                    sx += ang[j].cos();
                    sy += ang[j].sin();
                    theta = sy.atan2(sx);
                }
            }
        }
        if (region.len() as f64) < params.min_len_px * 0.5 {
            continue;
        }
        if let Some(seg) = region_to_segment(&region, gw, &mag, &ang, tau, params) {
            out.push(refine_segment(seg, gw, gh, &mag));
        }
    }
    out
}

/// Fits the region's rectangle; while its aligned-pixel density is too low
/// (texture next to an edge widens the region), pixels far from the
/// principal line are trimmed away and the fit repeated.
fn region_to_segment(
    region: &[usize],
    gw: usize,
    mag: &[f64],
    ang: &[f64],
    tau: f64,
    params: &LineParams,
) -> Option<Segment> {
    let mut region = region.to_vec();
    for _ in 0..MAX_TRIMS {
        if (region.len() as f64) < params.min_len_px * 0.5 {
            return None;
        }
        match fit_rectangle(&region, gw, mag, ang, tau, params) {
            Fit::Accept(s) => return Some(s),
            Fit::Reject => return None,
            Fit::Trim(half) => {
                let (c, dir) = principal_line(&region, gw, mag);
                let perp = Vec2::new(-dir.y, dir.x);
                region.retain(|&i| (pixel_pos(i, gw) - c).dot(&perp).abs() <= half);
            }
        }
    }
    None
}

const MAX_TRIMS: usize = 12;

enum Fit {
    Accept(Segment),
    Reject,
    /// Density too low: retry with pixels within this distance of the line.
    Trim(f64),
}

fn pixel_pos(i: usize, gw: usize) -> Vec2 {
    Vec2::new((i % gw) as f64 + 0.5, (i / gw) as f64 + 0.5)
}

/// Magnitude-weighted centroid and principal direction.
fn principal_line(region: &[usize], gw: usize, mag: &[f64]) -> (Vec2, Vec2) {
    let mut wsum = 0.0;
    let mut c = Vec2::zeros();
    for &i in region {
        c += pixel_pos(i, gw) * mag[i];
        wsum += mag[i];
    }
    c /= wsum;
    let mut m = nalgebra::Matrix2::zeros();
    for &i in region {
        let d = pixel_pos(i, gw) - c;
        m += d * d.transpose() * mag[i];
    }
    let eig = SymmetricEigen::new(m);
    let k = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        0
    } else {
        1
    };
    (c, eig.eigenvectors.column(k).into())
}

fn fit_rectangle(
    region: &[usize],
    gw: usize,
    mag: &[f64],
    ang: &[f64],
    tau: f64,
    params: &LineParams,
) -> Fit {
    let (c, dir) = principal_line(region, gw, mag);
    let perp = Vec2::new(-dir.y, dir.x);
    let (mut l0, mut l1, mut w0, mut w1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &i in region {
        let d = pixel_pos(i, gw) - c;
        let (l, w) = (d.dot(&dir), d.dot(&perp));
        l0 = l0.min(l);
        l1 = l1.max(l);
        w0 = w0.min(w);
        w1 = w1.max(w);
    }
    let len = l1 - l0;
    if len < params.min_len_px {
        return Fit::Reject;
    }
    // the level-line direction of an edge runs along the segment
    let seg_angle = dir.y.atan2(dir.x);
    let aligned = region
        .iter()
        .filter(|&&i| {
            angle_diff(ang[i], seg_angle).min(angle_diff(ang[i], seg_angle + std::f64::consts::PI))
                <= tau
        })
        .count();
    let width = (w1 - w0).max(1.0);
    // coherence over the rectangle's cells; cells not in the region count as
    // misaligned
    let cells = (len.max(1.0) * width).max(region.len() as f64);
    let coherence = aligned as f64 / cells;
    if coherence < params.min_coherence {
        let half = 0.75 * w0.abs().max(w1.abs());
        return if half < 0.5 {
            Fit::Reject
        } else {
            Fit::Trim(half)
        };
    }
    let mid = (w0 + w1) * 0.5;
    Fit::Accept(Segment {
        p0: c + dir * l0 + perp * mid,
        p1: c + dir * l1 + perp * mid,
        width,
    })
}

/// Gradient magnitude at a continuous position, bilinear between samples
/// (sample `i` sits at [`pixel_pos`]).
fn mag_at(mag: &[f64], gw: usize, gh: usize, p: &Vec2) -> Option<f64> {
    let (x, y) = (p.x - 0.5, p.y - 0.5);
    if x < 0.0 || y < 0.0 || x >= (gw - 1) as f64 || y >= (gh - 1) as f64 {
        return None;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let m = |xx: usize, yy: usize| mag[yy * gw + xx];
    Some(
        (1.0 - fy) * ((1.0 - fx) * m(x0, y0) + fx * m(x0 + 1, y0))
            + fy * ((1.0 - fx) * m(x0, y0 + 1) + fx * m(x0 + 1, y0 + 1)),
    )
}

const REFINE_HALF_PX: f64 = 2.5;
const REFINE_STEP_PX: f64 = 0.25;
const REFINE_WIN_PX: f64 = 1.25;

/// Moves the segment onto the ridge of gradient magnitude: at every pixel
/// along it, the magnitude centroid across the line near the strongest
/// sample within ±2.5 px, then a magnitude-weighted line
/// fit with one pass of outlier removal. Texture beside an edge can tilt the
/// region's principal axis by a degree or more; the ridge stays on the edge.
fn refine_segment(seg: Segment, gw: usize, gh: usize, mag: &[f64]) -> Segment {
    let len = seg.length();
    if len < 2.0 {
        return seg;
    }
    let dir = (seg.p1 - seg.p0) / len;
    let perp = Vec2::new(-dir.y, dir.x);
    let n_off = (2.0 * REFINE_HALF_PX / REFINE_STEP_PX).round() as usize + 1;
    let mut peaks: Vec<(Vec2, f64)> = Vec::new();
    let mut prof = vec![0.0; n_off];
    for k in 0..=len.floor() as usize {
        let base = seg.p0 + dir * k as f64;
        let ok = (0..n_off).all(|j| {
            let o = -REFINE_HALF_PX + j as f64 * REFINE_STEP_PX;
            mag_at(mag, gw, gh, &(base + perp * o))
                .map(|m| prof[j] = m)
                .is_some()
        });
        if !ok {
            continue;
        }
        let j = (0..n_off)
            .max_by(|&a, &b| prof[a].total_cmp(&prof[b]))
            .unwrap();
        if j == 0 || j == n_off - 1 {
            continue;
        }
        // magnitude centroid in a window that re-centers on itself; unlike a
        // parabola through the peak it has no pixel-phase bias on a ramp edge
        let b = prof[j];
        let mut ctr = j as f64;
        for _ in 0..3 {
            let (mut sw, mut so) = (0.0, 0.0);
            for (i, &m) in prof.iter().enumerate() {
                let wgt = (1.0
                    - ((i as f64 - ctr).abs() * REFINE_STEP_PX - REFINE_WIN_PX).max(0.0)
                        / REFINE_STEP_PX)
                    .clamp(0.0, 1.0);
                sw += wgt * m;
                so += wgt * m * i as f64;
            }
            if sw <= 0.0 {
                break;
            }
            ctr = so / sw;
        }
        let o = -REFINE_HALF_PX + ctr * REFINE_STEP_PX;
        peaks.push((base + perp * o, b));
    }
    let fit = |pts: &[(Vec2, f64)]| -> Option<(Vec2, Vec2)> {
        let w: f64 = pts.iter().map(|p| p.1).sum();
        if pts.len() < 3 || w <= 0.0 {
            return None;
        }
        let c = pts.iter().map(|p| p.0 * p.1).sum::<Vec2>() / w;
        let mut m = nalgebra::Matrix2::zeros();
        for (p, wi) in pts {
            let d = p - c;
            m += d * d.transpose() * *wi;
        }
        let eig = SymmetricEigen::new(m);
        let k = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
            0
        } else {
            1
        };
        let mut d: Vec2 = eig.eigenvectors.column(k).into();
        if d.dot(&dir) < 0.0 {
            d = -d;
        }
        Some((c, d))
    };
    let Some((c, d)) = fit(&peaks) else {
        return seg;
    };
    let nrm = Vec2::new(-d.y, d.x);
    peaks.retain(|(p, _)| (p - c).dot(&nrm).abs() <= 0.5);
    // too few inliers: the ridge is not a single line, keep the rectangle fit
    if (peaks.len() as f64) < 0.5 * len {
        return seg;
    }
    let Some((c, d)) = fit(&peaks) else {
        return seg;
    };
    if d.dot(&dir) < (2.0f64).to_radians().cos() {
        return seg;
    }
    let onto = |p: &Vec2| c + d * (p - c).dot(&d);
    Segment {
        p0: onto(&seg.p0),
        p1: onto(&seg.p1),
        width: seg.width,
    }
}

// ---------------------------------------------------------------------------
// 3D borders

#[derive(Debug, Clone, PartialEq)]
pub struct Border3D {
    pub clusters: [u32; 2],
    /// Border vertices ordered along the line.
    pub vertices: Vec<u32>,
    pub point: Vec3,
    pub direction: Vec3,
    /// Extent of the vertices along `direction` from `point`.
    pub extent: [f64; 2],
    pub rms: f64,
}

impl Border3D {
    pub fn endpoints(&self) -> [Vec3; 2] {
        [
            self.point + self.direction * self.extent[0],
            self.point + self.direction * self.extent[1],
        ]
    }

    pub fn dihedral_deg(&self, planes: &[Plane]) -> f64 {
        planes[self.clusters[0] as usize].angle_deg(&planes[self.clusters[1] as usize])
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

/// Chains of mesh edges separating two clusters, one line fit per connected
/// chain.
pub fn extract_border_lines(mesh: &TriMesh, labels: &[u32]) -> Vec<Border3D> {
    let mut by_pair: BTreeMap<(u32, u32), Vec<[u32; 2]>> = BTreeMap::new();
    for (e, &edge) in mesh.edges().iter().enumerate() {
        let ef = mesh.edge_faces(e);
        if ef.len() != 2 {
            continue;
        }
        let (a, b) = (labels[ef[0] as usize], labels[ef[1] as usize]);
        if a != b {
            by_pair.entry((a.min(b), a.max(b))).or_default().push(edge);
        }
    }
    let mut parent: Vec<u32> = (0..mesh.n_vertices() as u32).collect();
    let mut out = Vec::new();
    for ((a, b), edges) in by_pair {
        for e in &edges {
            let (ra, rb) = (find(&mut parent, e[0]), find(&mut parent, e[1]));
            if ra != rb {
                parent[ra.max(rb) as usize] = ra.min(rb);
            }
        }
        let mut chains: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for e in &edges {
            for &v in e {
                let r = find(&mut parent, v);
                chains.entry(r).or_default().push(v);
            }
        }
        for e in &edges {
            for &v in e {
                parent[v as usize] = v;
            }
        }
        for (_, mut vs) in chains {
            vs.sort_unstable();
            vs.dedup();
            if vs.len() < 2 {
                continue;
            }
            let pts: Vec<Vec3> = vs.iter().map(|&v| mesh.vertices[v as usize]).collect();
            let c = pts.iter().sum::<Vec3>() / pts.len() as f64;
            let mut m = Mat3::zeros();
            for p in &pts {
                m += (p - c) * (p - c).transpose();
            }
            let eig = SymmetricEigen::new(m);
            let dir: Vec3 = eig
                .eigenvectors
                .column(eig.eigenvalues.imax())
                .into_owned()
                .normalize();
            let mut proj: Vec<(f64, u32)> = vs
                .iter()
                .zip(&pts)
                .map(|(&v, p)| ((p - c).dot(&dir), v))
                .collect();
            proj.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let rms = (pts
                .iter()
                .map(|p| ((p - c) - dir * (p - c).dot(&dir)).norm_squared())
                .sum::<f64>()
                / pts.len() as f64)
                .sqrt();
            out.push(Border3D {
                clusters: [a, b],
                vertices: proj.iter().map(|x| x.1).collect(),
                point: c,
                direction: dir,
                extent: [proj[0].0, proj[proj.len() - 1].0],
                rms,
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// matching

#[derive(Debug, Clone, PartialEq)]
pub struct LineCorrespondence {
    pub border: usize,
    pub frame: u32,
    /// The two adjacent cluster planes; residuals are taken against both.
    pub planes: [u32; 2],
    pub pixels: Vec<[u32; 2]>,
    /// Camera-space backprojections `π⁻¹(t)` of the pixels.
    pub points: Vec<Vec3>,
    /// Mean perpendicular distance between the detected segment and the
    /// projected border at match time (pixels).
    pub distance_px: f64,
}

/// Clips the 3D segment to `z ≥ near` in camera space and projects it.
fn project_segment(ends: &[Vec3; 2], pose: &Pose, k: &CameraIntrinsics) -> Option<[Vec2; 2]> {
    const NEAR: f64 = 0.05;
    let mut a = (pose * nalgebra::Point3::from(ends[0])).coords;
    let mut b = (pose * nalgebra::Point3::from(ends[1])).coords;
    if a.z < NEAR && b.z < NEAR {
        return None;
    }
    if a.z < NEAR {
        a = a + (b - a) * ((NEAR - a.z) / (b.z - a.z));
    } else if b.z < NEAR {
        b = b + (a - b) * ((NEAR - b.z) / (a.z - b.z));
    }
    Some([k.project(&a), k.project(&b)])
}

/// Liang–Barsky clip of a 2D segment to the image rectangle.
fn clip_to_image(s: [Vec2; 2], k: &CameraIntrinsics) -> Option<[Vec2; 2]> {
    let d = s[1] - s[0];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let lims = [
        (-d.x, s[0].x),
        (d.x, (k.width - 1) as f64 - s[0].x),
        (-d.y, s[0].y),
        (d.y, (k.height - 1) as f64 - s[0].y),
    ];
    for (p, q) in lims {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 < t1).then(|| [s[0] + d * t0, s[0] + d * t1])
}

/// Integer pixels along a segment at unit steps, duplicates removed.
pub fn segment_pixels(s: &Segment, k: &CameraIntrinsics) -> Vec<[u32; 2]> {
    let n = s.length().ceil().max(1.0) as usize;
    let mut out: Vec<[u32; 2]> = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let p = s.p0 + (s.p1 - s.p0) * (i as f64 / n as f64);
        let (x, y) = (p.x.round(), p.y.round());
        if x < 0.0 || y < 0.0 || x >= k.width as f64 || y >= k.height as f64 {
            continue;
        }
        let px = [x as u32, y as u32];
        if out.last() != Some(&px) {
            out.push(px);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn world_point(pose: &Pose, xc: &Vec3) -> Vec3 {
    pose.inverse_transform_point(&nalgebra::Point3::from(*xc))
        .coords
}

/// Matches every valid border's projection in every frame to the nearest
/// detected segment and collects the segment's depth-valid pixels.
pub fn match_borders(
    borders: &[Border3D],
    planes: &[Plane],
    segments: &[Vec<Segment>],
    frames: &FrameSet,
    poses: &[Pose],
    params: &LineParams,
) -> Vec<LineCorrespondence> {
    let k = frames.intrinsics;
    let jobs: Vec<(usize, usize)> = (0..borders.len())
        .filter(|&b| borders[b].dihedral_deg(planes) > params.angle_min_deg)
        .flat_map(|b| (0..frames.len()).map(move |f| (b, f)))
        .collect();
    jobs.par_iter()
        .filter_map(|&(bi, fi)| {
            let border = &borders[bi];
            let proj = clip_to_image(project_segment(&border.endpoints(), &poses[fi], &k)?, &k)?;
            let pd = proj[1] - proj[0];
            let plen = pd.norm();
            if plen < params.min_len_px {
                return None;
            }
            let pdir = pd / plen;
            let pang = pd.y.atan2(pd.x).to_degrees();
            let perp_dist = |q: &Vec2| {
                let d = q - proj[0];
                (d.x * pdir.y - d.y * pdir.x).abs()
            };
            let mut best: Option<(f64, &Segment)> = None;
            for s in &segments[fi] {
                if orientation_diff_deg(s.angle_deg(), pang) >= params.max_angle_diff_deg {
                    continue;
                }
                let mid = (s.p0 + s.p1) * 0.5;
                let dist = (perp_dist(&s.p0) + perp_dist(&s.p1) + perp_dist(&mid)) / 3.0;
                if dist >= params.max_px {
                    continue;
                }
                // the segment has to overlap the projected border
                let (t0, t1) = ((s.p0 - proj[0]).dot(&pdir), (s.p1 - proj[0]).dot(&pdir));
                if t0.max(t1) < 0.0 || t0.min(t1) > plen {
                    continue;
                }
                if best.is_none_or(|b| dist < b.0) {
                    best = Some((dist, s));
                }
            }
            let (dist, seg) = best?;
            let depth = &frames.frames[fi].depth;
            let pl = border.clusters.map(|c| planes[c as usize]);
            let mut pixels = Vec::new();
            let mut points = Vec::new();
            let n = seg.length().ceil().max(1.0) as usize;
            let dir = (seg.p1 - seg.p0) / seg.length().max(1e-12);
            for i in 0..=n {
                let t = seg.p0 + (seg.p1 - seg.p0) * (i as f64 / n as f64);
                let (x, y) = (t.x.round(), t.y.round());
                if x < 0.0 || y < 0.0 || x >= k.width as f64 || y >= k.height as f64 {
                    continue;
                }
                let Some(d) = crease_depth(depth, &t, &dir) else {
                    continue;
                };
                let xc = k.backproject(t.x, t.y, d);
                let xw = world_point(&poses[fi], &xc);
                if pl
                    .iter()
                    .all(|p| p.signed_distance(&xw).abs() < params.depth_tol)
                {
                    pixels.push([x as u32, y as u32]);
                    points.push(xc);
                }
            }
            if (pixels.len() as f64) < params.min_len_px {
                return None;
            }
            Some(LineCorrespondence {
                border: bi,
                frame: fi as u32,
                planes: border.clusters,
                pixels,
                points,
                distance_px: dist,
            })
        })
        .collect()
}

/// Depth at sub-pixel `t` on a detected edge.
///
/// Raw depth at a crease belongs to one surface or the other, so each side
/// gets its own affine fit of inverse depth (exact for a plane) from pixels
/// 1.5 to 4.5 px off the line, and both fits are evaluated at `t`. Agreeing
/// sides are averaged; otherwise the nearer surface wins, which is the right
/// call at occluding edges.
fn crease_depth(depth: &DepthImage, t: &Vec2, dir: &Vec2) -> Option<f64> {
    let nrm = Vec2::new(-dir.y, dir.x);
    let (w, h) = (depth.width as i64, depth.height as i64);
    let side = |sgn: f64| -> Option<f64> {
        let mut ata = Mat3::zeros();
        let mut atb = Vec3::zeros();
        let mut count = 0;
        for y in (t.y.floor() as i64 - 5)..=(t.y.ceil() as i64 + 5) {
            for x in (t.x.floor() as i64 - 5)..=(t.x.ceil() as i64 + 5) {
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                let o = Vec2::new(x as f64, y as f64) - t;
                let (s, a) = (o.dot(&nrm) * sgn, o.dot(dir));
                if !(1.5..=4.5).contains(&s) || a.abs() > 3.0 {
                    continue;
                }
                let d = depth.get(x as u32, y as u32) as f64;
                if d <= 0.0 {
                    continue;
                }
                let row = Vec3::new(1.0, s, a);
                ata += row * row.transpose();
                atb += row / d;
                count += 1;
            }
        }
        if count < 6 {
            return None;
        }
        let c = ata.cholesky()?.solve(&atb);
        (c[0] > 0.0).then_some(c[0])
    };
    let inv = match (side(-1.0), side(1.0)) {
        (Some(a), Some(b)) if (a - b).abs() <= 0.05 * a.max(b) => 0.5 * (a + b),
        (Some(a), Some(b)) => a.max(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => return None,
    };
    Some(1.0 / inv)
}

/// Convenience: detect segments in every frame.
pub fn detect_all(frames: &FrameSet, params: &LineParams) -> Vec<Vec<Segment>> {
    frames
        .frames
        .par_iter()
        .map(|f| detect_segments(&FloatImage::luminance(&f.color), params))
        .collect()
}

// ---------------------------------------------------------------------------
// residuals

/// `r_t = (T⁻¹ π⁻¹(t))ᵀ n + w` for every camera-space point of `points`.
pub fn line_residual(points: &[Vec3], pose: &Pose, plane: &Plane) -> Vec<f64> {
    points
        .iter()
        .map(|xc| plane.signed_distance(&world_point(pose, xc)))
        .collect()
}

/// One line residual and its derivatives with respect to the pose tangent
/// `(v, ω)` (left update `exp(ξ)·T`) and the plane tangent `(u, v, w)` of
/// [`Plane::retract`].
pub fn line_residual_jacobian(xc: &Vec3, pose: &Pose, plane: &Plane) -> (f64, [f64; 6], [f64; 3]) {
    let xw = world_point(pose, xc);
    let r = plane.signed_distance(&xw);
    let rt = pose.rotation.to_rotation_matrix().matrix().transpose();
    // ∂Xw/∂v = −Rᵀ, ∂Xw/∂ω = Rᵀ [Xc]×
    let nr = rt.transpose() * plane.normal; // (Rᵀ)ᵀ n = R n
    let jw = (skew(xc).transpose() * nr).transpose(); // nᵀ Rᵀ [Xc]×
    let (d0, d1) = plane.basis();
    (
        r,
        [-nr.x, -nr.y, -nr.z, jw[0], jw[1], jw[2]],
        [xw.dot(&d0), xw.dot(&d1), 1.0],
    )
}

/// Pixel depth lookup used by tests and debug overlays.
pub fn pixel_depth(depth: &DepthImage, px: [u32; 2]) -> Option<f64> {
    let d = depth.get(px[0], px[1]) as f64;
    (d > 0.0).then_some(d)
}
