//! Texture preparation: keyframe selection by blur score, per-cluster texel
//! grids anchored barycentrically to mesh faces, atlas layout, per-frame
//! visibility and initial texel colors.

use std::io::Write as _;
use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Plane, Pose, Vec2, Vec3};
use crate::image::FloatImage;
use crate::mesh::TriMesh;
use crate::partition::Cluster;
use crate::scene_io::FrameSet;

#[derive(Debug, Clone, Copy)]
pub struct TexgenParams {
    /// Texels per meter.
    pub resolution: f64,
    pub depth_tol: f64,
    pub max_view_angle_deg: f64,
    pub keyframe_interval: usize,
    /// Empty atlas pixels between patches.
    pub gutter: u32,
    /// Texels closer than this many image pixels to their patch border are
    /// not used as observations.
    pub border_margin_px: f64,
}

impl Default for TexgenParams {
    fn default() -> Self {
        TexgenParams {
            resolution: 200.0,
            depth_tol: 0.03,
            max_view_angle_deg: 80.0,
            keyframe_interval: 1,
            gutter: 2,
            border_margin_px: 2.0,
        }
    }
}

impl TexgenParams {
    pub fn visibility(&self) -> VisibilityParams {
        VisibilityParams {
            depth_tol: self.depth_tol,
            max_view_angle_deg: self.max_view_angle_deg,
            border_margin_px: self.border_margin_px,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityParams {
    pub depth_tol: f64,
    pub max_view_angle_deg: f64,
    pub border_margin_px: f64,
}

impl Default for VisibilityParams {
    fn default() -> Self {
        TexgenParams::default().visibility()
    }
}

// ---------------------------------------------------------------------------
// blur metric and keyframes

const BLUR_TAPS: i64 = 9;

/// No-reference blur score in `[0, 1]` (higher is blurrier): the fraction of
/// neighboring-pixel variation that survives a 9-tap box blur along each
/// axis, worst axis reported. Borders wrap around.
pub fn blurriness(gray: &FloatImage) -> f64 {
    assert_eq!(gray.channels, 1);
    let (w, h) = (gray.width as i64, gray.height as i64);
    if w < 2 || h < 2 {
        return 1.0;
    }
    let at = |x: i64, y: i64| gray.data[(y.rem_euclid(h) * w + x.rem_euclid(w)) as usize] as f64;
    let half = BLUR_TAPS / 2;
    let mut score: f64 = 0.0;
    for (dx, dy) in [(0i64, 1i64), (1, 0)] {
        let blurred = |x: i64, y: i64| {
            (-half..=half)
                .map(|k| at(x + k * dx, y + k * dy))
                .sum::<f64>()
                / BLUR_TAPS as f64
        };
        let mut s_f = 0.0;
        let mut s_v = 0.0;
        for y in 0..h {
            for x in 0..w {
                let d_f = (at(x, y) - at(x - dx, y - dy)).abs();
                let d_b = (blurred(x, y) - blurred(x - dx, y - dy)).abs();
                s_f += d_f;
                s_v += (d_f - d_b).max(0.0);
            }
        }
        let b = if s_f > 0.0 { (s_f - s_v) / s_f } else { 1.0 };
        score = score.max(b);
    }
    score
}

/// Keeps the sharpest frame of every window of `interval` consecutive frames
/// (first one on ties) and stores every frame's score.
pub fn select_keyframes(mut frames: FrameSet, interval: usize) -> Result<FrameSet> {
    if frames.is_empty() {
        return Err(Error::Argument("no frames to select keyframes from".into()));
    }
    if interval == 0 {
        return Err(Error::Argument(
            "keyframe interval must be at least 1".into(),
        ));
    }
    frames.frames.par_iter_mut().for_each(|f| {
        f.blurriness = Some(blurriness(&FloatImage::luminance(&f.color)));
    });
    if interval == 1 {
        return Ok(frames);
    }
    let mut keep = Vec::new();
    for (w, chunk) in frames.frames.chunks(interval).enumerate() {
        let best = chunk
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.blurriness.unwrap().total_cmp(&b.1.blurriness.unwrap()))
            .map(|(i, _)| i)
            .unwrap();
        keep.push(w * interval + best);
    }
    let mut it = keep.into_iter().peekable();
    let all = std::mem::take(&mut frames.frames);
    for (i, f) in all.into_iter().enumerate() {
        if it.peek() == Some(&i) {
            it.next();
            frames.frames.push(f);
        }
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// texels and atlas layout

#[derive(Debug, Clone, PartialEq)]
pub struct Texel {
    /// Cell within its patch.
    pub uv: [u32; 2],
    pub p: Vec3,
    pub face: u32,
    pub bary: [f64; 3],
    pub color: [f64; 3],
    pub cluster: u32,
    /// False until some frame has seen the texel.
    pub observed: bool,
    /// In-plane distance (meters) from the texel center to the nearest
    /// point outside its patch.
    pub border_dist: f64,
}

/// One cluster's texel grid and its place in the atlas.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub cluster: u32,
    /// Plane-frame origin and in-plane axes used for the projection.
    pub origin: Vec3,
    pub axes: [Vec3; 2],
    /// In-plane coordinates of the grid's lower corner (meters).
    pub min: Vec2,
    pub width: u32,
    pub height: u32,
    /// Atlas pixel of cell `(0, 0)`.
    pub atlas_x: u32,
    pub atlas_y: u32,
    pub first_texel: usize,
    pub texel_count: usize,
    /// Texel index per cell, `u32::MAX` where no face covers the cell.
    pub cells: Vec<u32>,
}

impl Patch {
    pub fn plane_coords(&self, p: &Vec3) -> Vec2 {
        let d = p - self.origin;
        Vec2::new(d.dot(&self.axes[0]), d.dot(&self.axes[1]))
    }

    /// Continuous atlas pixel position of a 3D point (pixel centers at
    /// `+0.5`).
    pub fn atlas_coords(&self, p: &Vec3, resolution: f64) -> Vec2 {
        let q = (self.plane_coords(p) - self.min) * resolution;
        Vec2::new(q.x + self.atlas_x as f64, q.y + self.atlas_y as f64)
    }

    pub fn texel_at(&self, i: u32, j: u32) -> Option<usize> {
        let t = self.cells[(j * self.width + i) as usize];
        (t != u32::MAX).then_some(t as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TexelSet {
    pub resolution: f64,
    pub texels: Vec<Texel>,
    pub patches: Vec<Patch>,
    pub atlas_width: u32,
    pub atlas_height: u32,
    /// Atlas pixel coordinates of each face corner.
    pub face_uvs: Vec<Option<[Vec2; 3]>>,
    /// Visible frames per texel (CSR).
    pub vis_offsets: Vec<usize>,
    pub vis_frames: Vec<u32>,
}

impl TexelSet {
    pub fn len(&self) -> usize {
        self.texels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texels.is_empty()
    }

    pub fn visible(&self, t: usize) -> &[u32] {
        if self.vis_offsets.is_empty() {
            return &[];
        }
        &self.vis_frames[self.vis_offsets[t]..self.vis_offsets[t + 1]]
    }

    pub fn patch_of(&self, cluster: u32) -> Option<&Patch> {
        self.patches.iter().find(|p| p.cluster == cluster)
    }

    /// `Σ b_i v_i` for texel `t` under vertex positions `verts`.
    pub fn anchor_point(&self, t: usize, mesh: &TriMesh, verts: &[Vec3]) -> Vec3 {
        let tx = &self.texels[t];
        let f = mesh.faces()[tx.face as usize];
        f.iter()
            .zip(tx.bary)
            .map(|(&v, b)| verts[v as usize] * b)
            .sum()
    }
}

fn barycentric(p: &Vec2, a: &Vec2, b: &Vec2, c: &Vec2) -> Option<[f64; 3]> {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let den = v0.x * v1.y - v1.x * v0.y;
    if den.abs() < 1e-300 {
        return None;
    }
    let l1 = (v2.x * v1.y - v1.x * v2.y) / den;
    let l2 = (v0.x * v2.y - v2.x * v0.y) / den;
    Some([1.0 - l1 - l2, l1, l2])
}

const INSIDE_EPS: f64 = 1e-9;

fn rasterize_cluster(
    mesh: &TriMesh,
    c: &Cluster,
    res: f64,
) -> Option<(Patch, Vec<Texel>, Vec<(u32, [Vec2; 3])>)> {
    let (e0, e1) = c.plane.basis();
    let origin = c.plane.project(&Vec3::zeros());
    let proj = |p: &Vec3| {
        let d = p - origin;
        Vec2::new(d.dot(&e0), d.dot(&e1))
    };
    let mut lo = Vec2::repeat(f64::INFINITY);
    let mut hi = Vec2::repeat(f64::NEG_INFINITY);
    for &f in &c.faces {
        for &v in &mesh.faces()[f as usize] {
            let q = proj(&mesh.vertices[v as usize]);
            lo = lo.inf(&q);
            hi = hi.sup(&q);
        }
    }
    let ext = hi - lo;
    if !(ext.x > 0.0 && ext.y > 0.0) {
        return None;
    }
    let width = ((ext.x * res).ceil() as u32).max(1);
    let height = ((ext.y * res).ceil() as u32).max(1);
    let mut cells = vec![u32::MAX; (width * height) as usize];
    let mut texels = Vec::new();
    let mut uvs = Vec::with_capacity(c.faces.len());
    for &f in &c.faces {
        let tri = mesh.faces()[f as usize];
        let p3 = tri.map(|v| mesh.vertices[v as usize]);
        let p2 = p3.map(|p| proj(&p));
        uvs.push((f, p2.map(|q| (q - lo) * res)));
        let flo = p2[0].inf(&p2[1]).inf(&p2[2]);
        let fhi = p2[0].sup(&p2[1]).sup(&p2[2]);
        let i0 = (((flo.x - lo.x) * res - 0.5).floor().max(0.0)) as u32;
        let j0 = (((flo.y - lo.y) * res - 0.5).floor().max(0.0)) as u32;
        let i1 = ((((fhi.x - lo.x) * res - 0.5).ceil()) as u32).min(width - 1);
        let j1 = ((((fhi.y - lo.y) * res - 0.5).ceil()) as u32).min(height - 1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let cell = (j * width + i) as usize;
                if cells[cell] != u32::MAX {
                    continue;
                }
                let q = lo + Vec2::new((i as f64 + 0.5) / res, (j as f64 + 0.5) / res);
                let Some(b) = barycentric(&q, &p2[0], &p2[1], &p2[2]) else {
                    continue;
                };
                if b.iter().any(|&x| x < -INSIDE_EPS) {
                    continue;
                }
                let b = b.map(|x| x.max(0.0));
                let s: f64 = b.iter().sum();
                let b = b.map(|x| x / s);
                cells[cell] = texels.len() as u32;
                texels.push(Texel {
                    uv: [i, j],
                    p: p3[0] * b[0] + p3[1] * b[1] + p3[2] * b[2],
                    face: f,
                    bary: b,
                    color: [0.0; 3],
                    cluster: c.id,
                    observed: false,
                    border_dist: 0.0,
                });
            }
        }
    }
    let dist = chamfer_distance(&cells, width, height);
    for (cell, &t) in cells.iter().enumerate() {
        if t != u32::MAX {
            texels[t as usize].border_dist = (dist[cell] - 0.5).max(0.0) / res;
        }
    }
    let patch = Patch {
        cluster: c.id,
        origin,
        axes: [e0, e1],
        min: lo,
        width,
        height,
        atlas_x: 0,
        atlas_y: 0,
        first_texel: 0,
        texel_count: texels.len(),
        cells,
    };
    Some((patch, texels, uvs))
}

/// Two-pass chamfer distance (in cells, weights 1 and √2) from every cell
/// to the nearest empty cell; cells beyond the grid count as empty.
fn chamfer_distance(cells: &[u32], width: u32, height: u32) -> Vec<f64> {
    let (w, h) = (width as i64, height as i64);
    let diag = std::f64::consts::SQRT_2;
    let mut d: Vec<f64> = cells
        .iter()
        .map(|&c| if c == u32::MAX { 0.0 } else { f64::INFINITY })
        .collect();
    let at = |d: &[f64], x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            d[(y * w + x) as usize]
        }
    };
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let v = d[i]
                .min(at(&d, x - 1, y) + 1.0)
                .min(at(&d, x, y - 1) + 1.0)
                .min(at(&d, x - 1, y - 1) + diag)
                .min(at(&d, x + 1, y - 1) + diag);
            d[i] = v;
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = (y * w + x) as usize;
            let v = d[i]
                .min(at(&d, x + 1, y) + 1.0)
                .min(at(&d, x, y + 1) + 1.0)
                .min(at(&d, x + 1, y + 1) + diag)
                .min(at(&d, x - 1, y + 1) + diag);
            d[i] = v;
        }
    }
    d
}

/// Shelf packing of `(width, height)` boxes, tallest first. Returns box
/// positions and the atlas size.
pub fn shelf_pack(sizes: &[(u32, u32)], gutter: u32) -> (Vec<(u32, u32)>, u32, u32) {
    let padded: Vec<(u32, u32)> = sizes
        .iter()
        .map(|&(w, h)| (w + 2 * gutter, h + 2 * gutter))
        .collect();
    let area: u64 = padded.iter().map(|&(w, h)| w as u64 * h as u64).sum();
    let widest = padded.iter().map(|p| p.0).max().unwrap_or(1);
    let atlas_w = widest.max(((area as f64).sqrt() * 1.1).ceil() as u32);
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(padded[i].1), i));
    let mut pos = vec![(0, 0); sizes.len()];
    let (mut x, mut y, mut shelf_h) = (0u32, 0u32, 0u32);
    for i in order {
        let (w, h) = padded[i];
        if x + w > atlas_w {
            y += shelf_h;
            x = 0;
            shelf_h = 0;
        }
        pos[i] = (x + gutter, y + gutter);
        x += w;
        shelf_h = shelf_h.max(h);
    }
    (pos, atlas_w, (y + shelf_h).max(1))
}

/// Builds every cluster's texel grid at `resolution` texels per meter and
/// lays the patches out in one atlas.
pub fn build_patches(
    mesh: &TriMesh,
    clusters: &[Cluster],
    resolution: f64,
    gutter: u32,
) -> Result<TexelSet> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::Argument(format!(
            "texel resolution {resolution} must be positive"
        )));
    }
    let built: Vec<_> = clusters
        .par_iter()
        .map(|c| rasterize_cluster(mesh, c, resolution))
        .collect();
    let mut patches = Vec::new();
    let mut texels = Vec::new();
    let mut face_uvs = vec![None; mesh.n_faces()];
    let mut local_uvs = Vec::new();
    for (c, b) in clusters.iter().zip(built) {
        match b {
            None => log::warn!(
                "cluster {} has a degenerate projection; no texture patch",
                c.id
            ),
            Some((mut patch, tx, uvs)) => {
                patch.first_texel = texels.len();
                let base = texels.len() as u32;
                for cell in &mut patch.cells {
                    if *cell != u32::MAX {
                        *cell += base;
                    }
                }
                texels.extend(tx);
                patches.push(patch);
                local_uvs.push(uvs);
            }
        }
    }
    let sizes: Vec<(u32, u32)> = patches.iter().map(|p| (p.width, p.height)).collect();
    let (pos, aw, ah) = shelf_pack(&sizes, gutter);
    for ((patch, &(x, y)), uvs) in patches.iter_mut().zip(&pos).zip(local_uvs) {
        patch.atlas_x = x;
        patch.atlas_y = y;
        let off = Vec2::new(x as f64, y as f64);
        for (f, tri) in uvs {
            face_uvs[f as usize] = Some(tri.map(|q| q + off));
        }
    }
    Ok(TexelSet {
        resolution,
        texels,
        patches,
        atlas_width: aw,
        atlas_height: ah,
        face_uvs,
        vis_offsets: Vec::new(),
        vis_frames: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// visibility and colors

/// Float copies of a frame's color and luminance.
#[derive(Debug, Clone)]
pub struct FrameImages {
    pub color: FloatImage,
    pub gray: FloatImage,
}

pub fn prepare_images(frames: &FrameSet) -> Vec<FrameImages> {
    frames
        .frames
        .par_iter()
        .map(|f| FrameImages {
            color: FloatImage::from_rgb(&f.color),
            gray: FloatImage::luminance(&f.color),
        })
        .collect()
}

/// Whether world point `p` on a plane with normal `n` is seen by a camera.
/// `n` must be oriented like the surface: back-facing points are rejected,
/// since near a silhouette the depth test alone lets them through.
#[allow(clippy::too_many_arguments)]
pub fn point_visible(
    p: &Vec3,
    n: &Vec3,
    pose: &Pose,
    k: &CameraIntrinsics,
    depth: &crate::image::DepthImage,
    depth_tol: f64,
    cos_max_angle: f64,
) -> bool {
    let pc = pose * nalgebra::Point3::from(*p);
    if pc.z <= 0.0 {
        return false;
    }
    let uv = k.project(&pc.coords);
    if !k.contains(&uv) {
        return false;
    }
    let Some(d) = depth.nearest(uv.x, uv.y) else {
        return false;
    };
    if (d - pc.z).abs() >= depth_tol {
        return false;
    }
    let center = pose
        .inverse_transform_point(&nalgebra::Point3::origin())
        .coords;
    let ray = center - p;
    n.dot(&ray) > cos_max_angle * ray.norm()
}

/// Recomputes every texel's visible-frame list under `poses`. A texel also
/// needs `border_margin_px` image pixels of clearance to its patch border,
/// so that its bilinear footprint stays on its own plane.
pub fn compute_visibility(
    texels: &mut TexelSet,
    planes: &[Plane],
    frames: &FrameSet,
    poses: &[Pose],
    params: &VisibilityParams,
) {
    let k = frames.intrinsics;
    let cos_max = params.max_view_angle_deg.to_radians().cos();
    let px = params.border_margin_px.max(0.0) / k.fx.min(k.fy);
    let per_frame: Vec<Vec<u32>> = frames
        .frames
        .par_iter()
        .zip(poses)
        .map(|(f, pose)| {
            texels
                .texels
                .iter()
                .enumerate()
                .filter(|(_, t)| {
                    let z = (pose * nalgebra::Point3::from(t.p)).z;
                    t.border_dist >= px * z
                        && point_visible(
                            &t.p,
                            &planes[t.cluster as usize].normal,
                            pose,
                            &k,
                            &f.depth,
                            params.depth_tol,
                            cos_max,
                        )
                })
                .map(|(i, _)| i as u32)
                .collect()
        })
        .collect();
    let n = texels.len();
    let mut counts = vec![0usize; n + 1];
    for list in &per_frame {
        for &t in list {
            counts[t as usize + 1] += 1;
        }
    }
    for i in 0..n {
        counts[i + 1] += counts[i];
    }
    let mut fill = counts.clone();
    let mut frames_out = vec![0u32; counts[n]];
    for (fi, list) in per_frame.iter().enumerate() {
        for &t in list {
            frames_out[fill[t as usize]] = fi as u32;
            fill[t as usize] += 1;
        }
    }
    texels.vis_offsets = counts;
    texels.vis_frames = frames_out;
}

/// Weighted mean of the bilinear color samples of every visible frame at the
/// texel's projection onto its plane, weights `cos²(view angle) / depth²`.
/// Unobserved texels are flagged and left black.
pub fn init_target_colors(
    texels: &mut TexelSet,
    planes: &[Plane],
    images: &[FrameImages],
    poses: &[Pose],
    k: &CameraIntrinsics,
) {
    let ts = &*texels;
    let colors: Vec<Option<[f64; 3]>> = (0..ts.len())
        .into_par_iter()
        .map(|t| {
            let tx = &ts.texels[t];
            let plane = &planes[tx.cluster as usize];
            let q = plane.project(&tx.p);
            let mut acc = [0.0; 3];
            let mut wsum = 0.0;
            let mut s = [0.0; 3];
            for &fi in ts.visible(t) {
                let pose = &poses[fi as usize];
                let qc = pose * nalgebra::Point3::from(q);
                if qc.z <= 0.0 {
                    continue;
                }
                let center = pose
                    .inverse_transform_point(&nalgebra::Point3::origin())
                    .coords;
                let ray = center - q;
                let cos = plane.normal.dot(&ray).abs() / ray.norm();
                let w = cos * cos / (qc.z * qc.z);
                let uv = k.project(&qc.coords);
                images[fi as usize].color.sample(uv.x, uv.y, &mut s);
                for c in 0..3 {
                    acc[c] += w * s[c];
                }
                wsum += w;
            }
            (wsum > 0.0).then(|| acc.map(|a| a / wsum))
        })
        .collect();
    for (t, c) in texels.texels.iter_mut().zip(colors) {
        match c {
            Some(c) => {
                t.color = c;
                t.observed = true;
            }
            None => {
                t.color = [0.0; 3];
                t.observed = false;
            }
        }
    }
}

/// Colors texels that no frame observes under the strict visibility (those
/// hugging a patch border) with the same weighted mean, over every frame
/// that sees them at all.
pub fn fill_unobserved(
    texels: &mut TexelSet,
    planes: &[Plane],
    frames: &FrameSet,
    images: &[FrameImages],
    poses: &[Pose],
    params: &VisibilityParams,
) {
    let k = frames.intrinsics;
    let cos_max = params.max_view_angle_deg.to_radians().cos();
    let ts = &*texels;
    let colors: Vec<Option<[f64; 3]>> = (0..ts.len())
        .into_par_iter()
        .map(|t| {
            let tx = &ts.texels[t];
            if !ts.visible(t).is_empty() {
                return None;
            }
            let plane = &planes[tx.cluster as usize];
            let q = plane.project(&tx.p);
            let mut acc = [0.0; 3];
            let mut wsum = 0.0;
            let mut s = [0.0; 3];
            for (fi, pose) in poses.iter().enumerate() {
                if !point_visible(
                    &tx.p,
                    &plane.normal,
                    pose,
                    &k,
                    &frames.frames[fi].depth,
                    params.depth_tol,
                    cos_max,
                ) {
                    continue;
                }
                let qc = pose * nalgebra::Point3::from(q);
                if qc.z <= 0.0 {
                    continue;
                }
                let center = pose
                    .inverse_transform_point(&nalgebra::Point3::origin())
                    .coords;
                let ray = center - q;
                let cos = plane.normal.dot(&ray).abs() / ray.norm();
                let w = cos * cos / (qc.z * qc.z);
                let uv = k.project(&qc.coords);
                images[fi].color.sample(uv.x, uv.y, &mut s);
                for c in 0..3 {
                    acc[c] += w * s[c];
                }
                wsum += w;
            }
            (wsum > 0.0).then(|| acc.map(|a| a / wsum))
        })
        .collect();
    for (t, c) in texels.texels.iter_mut().zip(colors) {
        if let Some(c) = c {
            t.color = c;
            t.observed = true;
        }
    }
}

/// Renders the texel colors into the atlas. Cells without an observed texel
/// (including the gutter) take the mean of already-filled 4-neighbors,
/// growing outward from each patch.
pub fn atlas_image(texels: &TexelSet, gutter: u32) -> RgbImage {
    let (w, h) = (texels.atlas_width, texels.atlas_height);
    let mut img = FloatImage::new(w, h, 3);
    let mut filled = vec![false; (w * h) as usize];
    let mut owner = vec![u32::MAX; (w * h) as usize];
    for (pi, p) in texels.patches.iter().enumerate() {
        let g = gutter as i64;
        for y in -g..p.height as i64 + g {
            for x in -g..p.width as i64 + g {
                let ax = p.atlas_x as i64 + x;
                let ay = p.atlas_y as i64 + y;
                if ax < 0 || ay < 0 || ax >= w as i64 || ay >= h as i64 {
                    continue;
                }
                owner[(ay * w as i64 + ax) as usize] = pi as u32;
            }
        }
        for j in 0..p.height {
            for i in 0..p.width {
                if let Some(t) = p.texel_at(i, j) {
                    let tx = &texels.texels[t];
                    if tx.observed {
                        let (ax, ay) = (p.atlas_x + i, p.atlas_y + j);
                        for c in 0..3 {
                            img.set(ax, ay, c, tx.color[c] as f32);
                        }
                        filled[(ay * w + ax) as usize] = true;
                    }
                }
            }
        }
    }
    // dilate inside each patch's padded rectangle
    loop {
        let mut updates = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                if filled[i] || owner[i] == u32::MAX {
                    continue;
                }
                let mut acc = [0.0f32; 3];
                let mut n = 0;
                for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = (ny as u32 * w + nx as u32) as usize;
                    if filled[j] && owner[j] == owner[i] {
                        for c in 0..3 {
                            acc[c] += img.get(nx as u32, ny as u32, c);
                        }
                        n += 1;
                    }
                }
                if n > 0 {
                    updates.push((x, y, acc.map(|a| a / n as f32)));
                }
            }
        }
        if updates.is_empty() {
            break;
        }
        for (x, y, c) in updates {
            for (ch, v) in c.iter().enumerate() {
                img.set(x, y, ch, *v);
            }
            filled[(y * w + x) as usize] = true;
        }
    }
    img.to_rgb8()
}

pub fn write_texel_csv(texels: &TexelSet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(out, "cluster,u,v,px,py,pz,face,b0,b1,b2")?;
        for t in &texels.texels {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                t.cluster,
                t.uv[0],
                t.uv[1],
                t.p.x,
                t.p.y,
                t.p.z,
                t.face,
                t.bary[0],
                t.bary[1],
                t.bary[2]
            )?;
        }
        out.flush()
    };
    go().map_err(|e| Error::io(path, e))
}
