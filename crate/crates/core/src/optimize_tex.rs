//! Joint refinement of camera poses, cluster planes and texel colors by
//! alternating minimization of
//! `E_tex = E_c + λ_p·E_p + λ_t·E_t`:
//!
//! * `E_c`: Huber photometric error between each texel color and its samples
//!   in the frames that see it, taken at the texel's projection onto its
//!   plane;
//! * `E_p`: squared distances of texels to their planes;
//! * `E_t`: squared distances of backprojected line pixels to both planes of
//!   the matched border.
//!
//! Each outer iteration re-estimates the colors (per texel, closed form up to
//! the robust reweighting) and then takes a damped Gauss-Newton step on the
//! geometry. Two step modes exist:
//!
//! * [`StepMode::Reduced`] solves for all poses and planes at once, with the
//!   colors eliminated from the normal equations. The color block is
//!   diagonal, so the elimination is exact and cheap, and the step sees how
//!   colors follow the geometry. Without it, motions that shift all cameras
//!   and planes together converge very slowly.
//! * [`StepMode::Block`] updates every frame, then every plane, with
//!   everything else held fixed.
//!
//! Steps are accepted only if the energy does not increase.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{apply_pose_delta, skew, CameraIntrinsics, Mat3, Plane, Pose, Vec3};
use crate::image::{FloatImage, LUMA};
use crate::lines::{line_residual_jacobian, LineCorrespondence};
use crate::scene_io::FrameSet;
use crate::texgen::{compute_visibility, FrameImages, TexelSet, VisibilityParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    Reduced,
    Block,
}

impl std::str::FromStr for StepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reduced" => Ok(StepMode::Reduced),
            "block" => Ok(StepMode::Block),
            _ => Err(Error::Config(format!(
                "unknown step mode '{s}' (expected reduced or block)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub lambda_p: f64,
    pub lambda_t: f64,
    pub lambda_l: f64,
    pub lambda_r: f64,
    pub outer_iters: usize,
    pub gn_iters: usize,
    pub tol: f64,
    pub huber_delta: f64,
    /// Visibility is recomputed every this many outer iterations (0: never).
    pub visibility_refresh: usize,
    pub depth_tol: f64,
    pub max_view_angle_deg: f64,
    /// Photometric residuals only use views within this angle of the plane
    /// normal. Grazing views blur the texture along the foreshortened axis
    /// and bias the poses; they still count for visibility and colors.
    pub residual_max_view_angle_deg: f64,
    pub border_margin_px: f64,
    pub step: StepMode,
    pub optimize_colors: bool,
    pub optimize_poses: bool,
    pub optimize_planes: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lambda_p: 10.0,
            lambda_t: 1.0,
            lambda_l: 100.0,
            lambda_r: 0.1,
            outer_iters: 20,
            gn_iters: 1,
            tol: 1e-5,
            huber_delta: 0.1,
            visibility_refresh: 5,
            depth_tol: 0.03,
            max_view_angle_deg: 80.0,
            residual_max_view_angle_deg: 60.0,
            border_margin_px: 2.0,
            step: StepMode::Reduced,
            optimize_colors: true,
            optimize_poses: true,
            optimize_planes: true,
        }
    }
}

impl OptimConfig {
    pub fn visibility(&self) -> VisibilityParams {
        VisibilityParams {
            depth_tol: self.depth_tol,
            max_view_angle_deg: self.max_view_angle_deg,
            border_margin_px: self.border_margin_px,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_p, self.lambda_t, self.lambda_l, self.lambda_r];
        if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::Config(
                "energy weights must be finite and non-negative".into(),
            ));
        }
        if self.outer_iters == 0 || self.gn_iters == 0 {
            return Err(Error::Config("iteration counts must be at least 1".into()));
        }
        if !(self.residual_max_view_angle_deg > 0.0 && self.residual_max_view_angle_deg <= 90.0) {
            return Err(Error::Config(
                "residual view angle must be in (0, 90] degrees".into(),
            ));
        }
        if !(self.tol > 0.0) || !(self.huber_delta > 0.0) {
            return Err(Error::Config("tol and huber_delta must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyTerms {
    pub e_c: f64,
    pub e_p: f64,
    pub e_t: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    /// Energy at the start of the iteration (after any visibility refresh).
    pub before: EnergyTerms,
    pub after: EnergyTerms,
    pub visibility_refreshed: bool,
    pub frames_stepped: usize,
    pub planes_stepped: usize,
    /// Systems that needed Levenberg damping.
    pub damped_blocks: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyReport {
    pub initial: EnergyTerms,
    pub iterations: Vec<IterationReport>,
    pub converged: bool,
    /// Poses after every outer iteration, when requested.
    pub pose_history: Vec<Vec<Pose>>,
}

impl EnergyReport {
    pub fn final_energy(&self) -> EnergyTerms {
        self.iterations.last().map_or(self.initial, |i| i.after)
    }

    /// True when no iteration ended above its starting energy.
    pub fn is_monotone(&self) -> bool {
        self.iterations
            .iter()
            .all(|i| i.after.total <= i.before.total)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("iteration,e_c,e_p,e_t,total,visibility_refreshed\n");
        let row = |s: &mut String, it: usize, e: &EnergyTerms, r: bool| {
            s.push_str(&format!(
                "{it},{:.9e},{:.9e},{:.9e},{:.9e},{}\n",
                e.e_c, e.e_p, e.e_t, e.total, r as u8
            ));
        };
        row(&mut s, 0, &self.initial, false);
        for it in &self.iterations {
            row(&mut s, it.iteration + 1, &it.after, it.visibility_refreshed);
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Squared-then-linear robust cost: `r²` inside `±δ`, `2δ|r| − δ²` outside.
#[inline]
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        r * r
    } else {
        2.0 * delta * a - delta * delta
    }
}

/// IRLS weight `ρ'(r) / 2r`.
#[inline]
fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

/// Projection of `p` onto the plane: `q = p − (pᵀn + w)·n`.
#[inline]
pub fn project_to_plane(p: &Vec3, plane: &Plane) -> Vec3 {
    plane.project(p)
}

/// Signed texel-to-plane distance `pᵀn + w` and its derivative in the plane
/// tangent `(u, v, w)`.
pub fn plane_residual_jacobian(p: &Vec3, plane: &Plane) -> (f64, [f64; 3]) {
    let (d0, d1) = plane.basis();
    (plane.signed_distance(p), [p.dot(&d0), p.dot(&d1), 1.0])
}

pub fn plane_residuals(texels: &TexelSet, planes: &[Plane]) -> Vec<f64> {
    texels
        .texels
        .iter()
        .map(|t| planes[t.cluster as usize].signed_distance(&t.p))
        .collect()
}

/// RGB residuals `C(p) − I(π(T q))`.
pub fn photometric_residual_rgb(
    color: &[f64; 3],
    p: &Vec3,
    pose: &Pose,
    plane: &Plane,
    image: &FloatImage,
    k: &CameraIntrinsics,
) -> [f64; 3] {
    let q = plane.project(p);
    let xc = (pose * nalgebra::Point3::from(q)).coords;
    let uv = k.project(&xc);
    let mut s = [0.0; 3];
    image.sample(uv.x, uv.y, &mut s);
    [color[0] - s[0], color[1] - s[1], color[2] - s[2]]
}

/// Per-channel residuals `c − I(π(T q))` of an `N`-channel image, with
/// derivatives in the pose tangent `(v, ω)` and the plane tangent
/// `(u, v, w)`.
fn photo_jacobian<const N: usize>(
    c: &[f64; N],
    p: &Vec3,
    pose: &Pose,
    plane: &Plane,
    image: &FloatImage,
    k: &CameraIntrinsics,
) -> ([f64; N], [[f64; 6]; N], [[f64; 3]; N]) {
    let n = plane.normal;
    let s = plane.signed_distance(p);
    let q = p - n * s;
    let xc = (pose * nalgebra::Point3::from(q)).coords;
    let (uv, jpi) = k.project_with_jacobian(&xc);
    let (mut val, mut du, mut dv) = ([0.0; N], [0.0; N], [0.0; N]);
    image.sample_grad(uv.x, uv.y, &mut val, &mut du, &mut dv);
    let rt = pose.rotation.to_rotation_matrix().matrix().transpose();
    let sk = skew(&xc).transpose();
    let (d0, d1) = plane.basis();
    // ∂q/∂w = −n, ∂q/∂n = −(s·I + n pᵀ), n moving along d0 / d1
    let dq = |d: &Vec3| -(d * s) - n * p.dot(d);
    let (q0, q1) = (dq(&d0), dq(&d1));
    let mut r = [0.0; N];
    let mut jp = [[0.0; 6]; N];
    let mut jl = [[0.0; 3]; N];
    for ch in 0..N {
        // ∂r/∂Xc = −∇I · ∂π/∂Xc
        let g = Vec3::new(
            -(du[ch] * jpi[0][0] + dv[ch] * jpi[1][0]),
            -(du[ch] * jpi[0][1] + dv[ch] * jpi[1][1]),
            -(du[ch] * jpi[0][2] + dv[ch] * jpi[1][2]),
        );
        // ∂Xc/∂v = I, ∂Xc/∂ω = −[Xc]×
        let gw = -(sk * g);
        jp[ch] = [g.x, g.y, g.z, gw.x, gw.y, gw.z];
        let gq = rt * g;
        jl[ch] = [gq.dot(&q0), gq.dot(&q1), -gq.dot(&n)];
        r[ch] = c[ch] - val[ch];
    }
    (r, jp, jl)
}

/// Single-channel residual `c − I(π(T q))` with derivatives in the pose
/// tangent `(v, ω)` and the plane tangent `(u, v, w)`.
pub fn photometric_residual_jacobian(
    c: f64,
    p: &Vec3,
    pose: &Pose,
    plane: &Plane,
    image: &FloatImage,
    k: &CameraIntrinsics,
) -> (f64, [f64; 6], [f64; 3]) {
    let (r, jp, jl) = photo_jacobian::<1>(&[c], p, pose, plane, image, k);
    (r[0], jp[0], jl[0])
}

/// RGB version of [`photometric_residual_jacobian`].
pub fn photometric_jacobian_rgb(
    c: &[f64; 3],
    p: &Vec3,
    pose: &Pose,
    plane: &Plane,
    image: &FloatImage,
    k: &CameraIntrinsics,
) -> ([f64; 3], [[f64; 6]; 3], [[f64; 3]; 3]) {
    photo_jacobian::<3>(c, p, pose, plane, image, k)
}

/// Stacked RGB photometric residuals over every (texel, visible frame).
pub fn photometric_residuals(
    texels: &TexelSet,
    images: &[FrameImages],
    poses: &[Pose],
    planes: &[Plane],
    k: &CameraIntrinsics,
) -> Vec<f64> {
    let mut out = Vec::new();
    for (t, tx) in texels.texels.iter().enumerate() {
        for &i in texels.visible(t) {
            let r = photometric_residual_rgb(
                &tx.color,
                &tx.p,
                &poses[i as usize],
                &planes[tx.cluster as usize],
                &images[i as usize].color,
                k,
            );
            out.extend(r);
        }
    }
    out
}

/// Sum of `f(i)` over `0..n` in fixed-size chunks, chunk sums added in
/// order, so the result does not depend on the thread count.
fn det_sum(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    const CHUNK: usize = 2048;
    let chunks = n.div_ceil(CHUNK);
    let sums: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum())
        .collect();
    sums.iter().sum()
}

type Colors = Vec<[f64; 3]>;

/// Frames whose photometric residuals enter the optimization, per texel
/// (CSR): the texel's visible frames minus grazing views.
struct Observations {
    offsets: Vec<usize>,
    frames: Vec<u32>,
}

impl Observations {
    fn new(texels: &TexelSet, planes: &[Plane], poses: &[Pose], max_angle_deg: f64) -> Self {
        let cos_max = max_angle_deg.to_radians().cos();
        let centers: Vec<Vec3> = poses
            .iter()
            .map(|p| p.inverse().translation.vector)
            .collect();
        let mut offsets = Vec::with_capacity(texels.len() + 1);
        let mut frames = Vec::new();
        offsets.push(0);
        for (t, tx) in texels.texels.iter().enumerate() {
            let n = planes[tx.cluster as usize].normal;
            frames.extend(texels.visible(t).iter().filter(|&&i| {
                let ray = centers[i as usize] - tx.p;
                n.dot(&ray) >= cos_max * ray.norm()
            }));
            offsets.push(frames.len());
        }
        Observations { offsets, frames }
    }

    fn of(&self, t: usize) -> &[u32] {
        &self.frames[self.offsets[t]..self.offsets[t + 1]]
    }
}

struct Problem<'a> {
    texels: &'a TexelSet,
    obs: &'a Observations,
    images: &'a [FrameImages],
    k: CameraIntrinsics,
    corrs: &'a [LineCorrespondence],
    cfg: OptimConfig,
    /// Visible texels per frame.
    frame_texels: Vec<Vec<u32>>,
    frame_corrs: Vec<Vec<usize>>,
    plane_texels: Vec<Vec<u32>>,
    /// `(correspondence, which of its two planes)` per plane.
    plane_corrs: Vec<Vec<(usize, usize)>>,
}

impl<'a> Problem<'a> {
    fn new(
        texels: &'a TexelSet,
        obs: &'a Observations,
        images: &'a [FrameImages],
        k: CameraIntrinsics,
        corrs: &'a [LineCorrespondence],
        n_planes: usize,
        cfg: OptimConfig,
    ) -> Self {
        let nf = images.len();
        let mut frame_texels = vec![Vec::new(); nf];
        for t in 0..texels.len() {
            for &i in obs.of(t) {
                frame_texels[i as usize].push(t as u32);
            }
        }
        let mut frame_corrs = vec![Vec::new(); nf];
        let mut plane_corrs = vec![Vec::new(); n_planes];
        for (ci, c) in corrs.iter().enumerate() {
            frame_corrs[c.frame as usize].push(ci);
            for (slot, &pl) in c.planes.iter().enumerate() {
                plane_corrs[pl as usize].push((ci, slot));
            }
        }
        let mut plane_texels = vec![Vec::new(); n_planes];
        for (t, tx) in texels.texels.iter().enumerate() {
            plane_texels[tx.cluster as usize].push(t as u32);
        }
        Problem {
            texels,
            obs,
            images,
            k,
            corrs,
            cfg,
            frame_texels,
            frame_corrs,
            plane_texels,
            plane_corrs,
        }
    }

    fn photo(&self, t: usize, frame: usize, pose: &Pose, plane: &Plane, color: &[f64; 3]) -> f64 {
        let r = photometric_residual_rgb(
            color,
            &self.texels.texels[t].p,
            pose,
            plane,
            &self.images[frame].color,
            &self.k,
        );
        r.iter().map(|&x| huber(x, self.cfg.huber_delta)).sum()
    }

    fn line_term(&self, ci: usize, pose: &Pose, plane: &Plane) -> f64 {
        self.corrs[ci]
            .points
            .iter()
            .map(|xc| {
                let xw = pose
                    .inverse_transform_point(&nalgebra::Point3::from(*xc))
                    .coords;
                plane.signed_distance(&xw).powi(2)
            })
            .sum()
    }

    fn energy(&self, poses: &[Pose], planes: &[Plane], colors: &[[f64; 3]]) -> EnergyTerms {
        let ts = self.texels;
        let e_c = det_sum(ts.len(), |t| {
            let pl = &planes[ts.texels[t].cluster as usize];
            self.obs
                .of(t)
                .iter()
                .map(|&i| self.photo(t, i as usize, &poses[i as usize], pl, &colors[t]))
                .sum()
        });
        let e_p = det_sum(ts.len(), |t| {
            planes[ts.texels[t].cluster as usize]
                .signed_distance(&ts.texels[t].p)
                .powi(2)
        });
        let e_t = det_sum(self.corrs.len(), |ci| {
            let c = &self.corrs[ci];
            let pose = &poses[c.frame as usize];
            c.planes
                .iter()
                .map(|&pl| self.line_term(ci, pose, &planes[pl as usize]))
                .sum()
        });
        EnergyTerms {
            e_c,
            e_p,
            e_t,
            total: e_c + self.cfg.lambda_p * e_p + self.cfg.lambda_t * e_t,
        }
    }

    fn frame_energy(&self, i: usize, pose: &Pose, planes: &[Plane], colors: &[[f64; 3]]) -> f64 {
        let ts = self.texels;
        let photo: f64 = self.frame_texels[i]
            .iter()
            .map(|&t| {
                let t = t as usize;
                self.photo(
                    t,
                    i,
                    pose,
                    &planes[ts.texels[t].cluster as usize],
                    &colors[t],
                )
            })
            .sum();
        let lines: f64 = self.frame_corrs[i]
            .iter()
            .map(|&ci| {
                self.corrs[ci]
                    .planes
                    .iter()
                    .map(|&pl| self.line_term(ci, pose, &planes[pl as usize]))
                    .sum::<f64>()
            })
            .sum();
        photo + self.cfg.lambda_t * lines
    }

    fn plane_energy(&self, c: usize, plane: &Plane, poses: &[Pose], colors: &[[f64; 3]]) -> f64 {
        let ts = self.texels;
        let mut e_p = 0.0;
        let mut e_c = 0.0;
        for &t in &self.plane_texels[c] {
            let t = t as usize;
            e_p += plane.signed_distance(&ts.texels[t].p).powi(2);
            for &i in self.obs.of(t) {
                e_c += self.photo(t, i as usize, &poses[i as usize], plane, &colors[t]);
            }
        }
        let e_t: f64 = self.plane_corrs[c]
            .iter()
            .map(|&(ci, _)| self.line_term(ci, &poses[self.corrs[ci].frame as usize], plane))
            .sum();
        e_c + self.cfg.lambda_p * e_p + self.cfg.lambda_t * e_t
    }

    /// Normal equations of frame `i`'s pose block, on luminance.
    fn frame_system(
        &self,
        i: usize,
        pose: &Pose,
        planes: &[Plane],
        colors: &[[f64; 3]],
    ) -> (SMatrix<f64, 6, 6>, SVector<f64, 6>) {
        let mut h = SMatrix::<f64, 6, 6>::zeros();
        let mut g = SVector::<f64, 6>::zeros();
        let gray = &self.images[i].gray;
        for &t in &self.frame_texels[i] {
            let tx = &self.texels.texels[t as usize];
            let (r, jp, _) = photometric_residual_jacobian(
                luma(&colors[t as usize]),
                &tx.p,
                pose,
                &planes[tx.cluster as usize],
                gray,
                &self.k,
            );
            let w = GRAY_CHANNELS * huber_weight(r, self.cfg.huber_delta);
            let j = SVector::<f64, 6>::from(jp);
            h += j * j.transpose() * w;
            g += j * (w * r);
        }
        for &ci in &self.frame_corrs[i] {
            for &pl in &self.corrs[ci].planes {
                for xc in &self.corrs[ci].points {
                    let (r, jp, _) = line_residual_jacobian(xc, pose, &planes[pl as usize]);
                    let j = SVector::<f64, 6>::from(jp);
                    h += j * j.transpose() * self.cfg.lambda_t;
                    g += j * (self.cfg.lambda_t * r);
                }
            }
        }
        (h, g)
    }

    fn plane_system(
        &self,
        c: usize,
        plane: &Plane,
        poses: &[Pose],
        colors: &[[f64; 3]],
    ) -> (Mat3, Vec3) {
        let mut h = Mat3::zeros();
        let mut g = Vec3::zeros();
        let ts = self.texels;
        for &t in &self.plane_texels[c] {
            let tx = &ts.texels[t as usize];
            let (r, jl) = plane_residual_jacobian(&tx.p, plane);
            let j = Vec3::from(jl);
            h += j * j.transpose() * self.cfg.lambda_p;
            g += j * (self.cfg.lambda_p * r);
            let cg = luma(&colors[t as usize]);
            for &i in self.obs.of(t as usize) {
                let (r, _, jl) = photometric_residual_jacobian(
                    cg,
                    &tx.p,
                    &poses[i as usize],
                    plane,
                    &self.images[i as usize].gray,
                    &self.k,
                );
                let w = GRAY_CHANNELS * huber_weight(r, self.cfg.huber_delta);
                let j = Vec3::from(jl);
                h += j * j.transpose() * w;
                g += j * (w * r);
            }
        }
        for &(ci, _) in &self.plane_corrs[c] {
            let pose = &poses[self.corrs[ci].frame as usize];
            for xc in &self.corrs[ci].points {
                let (r, _, jl) = line_residual_jacobian(xc, pose, plane);
                let j = Vec3::from(jl);
                h += j * j.transpose() * self.cfg.lambda_t;
                g += j * (self.cfg.lambda_t * r);
            }
        }
        (h, g)
    }

    /// Gauss-Newton system over every pose and plane, with the texel colors
    /// eliminated when `eliminate` is set.
    fn reduced_system(
        &self,
        layout: &Layout,
        poses: &[Pose],
        planes: &[Plane],
        colors: &[[f64; 3]],
        eliminate: bool,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let d = layout.dim;
        let ts = self.texels;
        let n = ts.len();
        let chunks = n.div_ceil(4096).clamp(1, 16);
        let per = n.div_ceil(chunks).max(1);
        let parts: Vec<Acc> = (0..chunks)
            .into_par_iter()
            .map(|ch| {
                let mut acc = Acc::new(d);
                let mut rows: Vec<([f64; 3], [[f64; 6]; 3], [[f64; 3]; 3], usize)> = Vec::new();
                let mut u: Vec<Blk> = Vec::new();
                for t in ch * per..((ch + 1) * per).min(n) {
                    let tx = &ts.texels[t];
                    let c = tx.cluster as usize;
                    let plane = &planes[c];
                    let po = layout.plane(c);
                    if let Some(po) = po {
                        let (r, jl) = plane_residual_jacobian(&tx.p, plane);
                        let b = [Blk::new(po, &jl)];
                        acc.outer(&b, &b, self.cfg.lambda_p);
                        acc.grad(&b, self.cfg.lambda_p * r);
                    }
                    let vis = self.obs.of(t);
                    if vis.is_empty() || (eliminate && vis.len() == 1) {
                        // a single observation is absorbed entirely by the color
                        continue;
                    }
                    rows.clear();
                    for &i in vis {
                        let i = i as usize;
                        let (r, jp, jl) = photometric_jacobian_rgb(
                            &colors[t],
                            &tx.p,
                            &poses[i],
                            plane,
                            &self.images[i].color,
                            &self.k,
                        );
                        rows.push((r, jp, jl, i));
                    }
                    for chn in 0..3 {
                        let (mut s, mut gc) = (0.0, 0.0);
                        u.clear();
                        let mut uplane = [0.0; 3];
                        for (r, jp, jl, i) in &rows {
                            let w = huber_weight(r[chn], self.cfg.huber_delta);
                            let pi = layout.pose(*i);
                            let mut blocks = [Blk::EMPTY; 2];
                            let mut nb = 0;
                            if let Some(pi) = pi {
                                blocks[nb] = Blk::new(pi, &jp[chn]);
                                nb += 1;
                            }
                            if let Some(po) = po {
                                blocks[nb] = Blk::new(po, &jl[chn]);
                                nb += 1;
                            }
                            acc.outer(&blocks[..nb], &blocks[..nb], w);
                            acc.grad(&blocks[..nb], w * r[chn]);
                            if eliminate {
                                s += w;
                                gc += w * r[chn];
                                if let Some(pi) = pi {
                                    u.push(Blk::new(pi, &jp[chn].map(|x| w * x)));
                                }
                                for k in 0..3 {
                                    uplane[k] += w * jl[chn][k];
                                }
                            }
                        }
                        if eliminate && s > 0.0 {
                            if let Some(po) = po {
                                u.push(Blk::new(po, &uplane));
                            }
                            acc.outer(&u, &u, -1.0 / s);
                            acc.grad(&u, -gc / s);
                        }
                    }
                }
                acc
            })
            .collect();
        let mut total = Acc::new(d);
        for p in parts {
            total.add(&p);
        }
        let (mut h, mut g) = total.into_system();
        for corr in self.corrs {
            let i = corr.frame as usize;
            let pose = &poses[i];
            for &pl in &corr.planes {
                let pl = pl as usize;
                for xc in &corr.points {
                    let (r, jp, jl) = line_residual_jacobian(xc, pose, &planes[pl]);
                    let mut blocks: Vec<(usize, &[f64])> = Vec::with_capacity(2);
                    if let Some(pi) = layout.pose(i) {
                        blocks.push((pi, &jp));
                    }
                    if let Some(po) = layout.plane(pl) {
                        blocks.push((po, &jl));
                    }
                    add_outer(&mut h, &mut g, &blocks, self.cfg.lambda_t, r);
                }
            }
        }
        (h, g)
    }
}

/// Dense slice of a Jacobian row starting at column `off`.
#[derive(Clone, Copy)]
struct Blk {
    off: usize,
    len: usize,
    v: [f64; 6],
}

impl Blk {
    const EMPTY: Blk = Blk {
        off: 0,
        len: 0,
        v: [0.0; 6],
    };

    fn new(off: usize, v: &[f64]) -> Self {
        let mut b = Blk {
            off,
            len: v.len(),
            v: [0.0; 6],
        };
        b.v[..v.len()].copy_from_slice(v);
        b
    }
}

/// Normal-equation accumulator that only fills blocks on or above the
/// diagonal (column-major, `H[r + c·d]`); `into_system` mirrors the rest.
struct Acc {
    d: usize,
    h: Vec<f64>,
    g: Vec<f64>,
}

impl Acc {
    fn new(d: usize) -> Self {
        Acc {
            d,
            h: vec![0.0; d * d],
            g: vec![0.0; d],
        }
    }

    /// `H += w · Σ aᵢ bⱼᵀ` over block pairs with `aᵢ.off <= bⱼ.off`.
    #[inline]
    fn outer(&mut self, a: &[Blk], b: &[Blk], w: f64) {
        for x in a {
            for y in b {
                if x.off > y.off {
                    continue;
                }
                for j in 0..y.len {
                    let wy = w * y.v[j];
                    let col = &mut self.h[(y.off + j) * self.d + x.off..][..x.len];
                    for (h, xv) in col.iter_mut().zip(&x.v[..x.len]) {
                        *h += xv * wy;
                    }
                }
            }
        }
    }

    #[inline]
    fn grad(&mut self, a: &[Blk], s: f64) {
        for x in a {
            for (g, xv) in self.g[x.off..x.off + x.len].iter_mut().zip(&x.v) {
                *g += xv * s;
            }
        }
    }

    fn add(&mut self, o: &Acc) {
        for (a, b) in self.h.iter_mut().zip(&o.h) {
            *a += b;
        }
        for (a, b) in self.g.iter_mut().zip(&o.g) {
            *a += b;
        }
    }

    fn into_system(self) -> (DMatrix<f64>, DVector<f64>) {
        let mut h = DMatrix::from_vec(self.d, self.d, self.h);
        for c in 0..self.d {
            for r in c + 1..self.d {
                h[(r, c)] = h[(c, r)];
            }
        }
        (h, DVector::from_vec(self.g))
    }
}

/// `H += w·JᵀJ`, `g += w·Jᵀr` for a row `J` given as dense blocks.
fn add_outer(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    blocks: &[(usize, &[f64])],
    w: f64,
    r: f64,
) {
    for &(a0, ja) in blocks {
        for (a, &va) in ja.iter().enumerate() {
            g[a0 + a] += w * va * r;
            for &(b0, jb) in blocks {
                for (b, &vb) in jb.iter().enumerate() {
                    h[(a0 + a, b0 + b)] += w * va * vb;
                }
            }
        }
    }
}

/// Variable offsets of the joint system.
struct Layout {
    n_frames: usize,
    poses: bool,
    planes: bool,
    dim: usize,
}

impl Layout {
    fn new(n_frames: usize, n_planes: usize, cfg: &OptimConfig) -> Self {
        let dim = if cfg.optimize_poses { 6 * n_frames } else { 0 }
            + if cfg.optimize_planes { 3 * n_planes } else { 0 };
        Layout {
            n_frames,
            poses: cfg.optimize_poses,
            planes: cfg.optimize_planes,
            dim,
        }
    }

    fn pose(&self, i: usize) -> Option<usize> {
        self.poses.then_some(6 * i)
    }

    fn plane(&self, c: usize) -> Option<usize> {
        self.planes
            .then(|| if self.poses { 6 * self.n_frames } else { 0 } + 3 * c)
    }
}

#[inline]
fn luma(c: &[f64; 3]) -> f64 {
    LUMA[0] * c[0] + LUMA[1] * c[1] + LUMA[2] * c[2]
}

/// Luminance residuals stand in for all three color channels in the
/// per-block systems, so they count three times.
const GRAY_CHANNELS: f64 = 3.0;

const LM_DAMPING: f64 = 1e-6;
const MAX_HALVINGS: usize = 8;

/// Solves `H δ = −g`, adding Levenberg damping when `H` is not safely
/// positive definite. Returns the step and whether damping was needed.
fn damped_solve_dyn(h: DMatrix<f64>, g: &DVector<f64>) -> Option<(DVector<f64>, bool)> {
    let n = h.nrows();
    if n == 0 || g.iter().all(|x| *x == 0.0) {
        return None;
    }
    let diag_max = (0..n).map(|i| h[(i, i)]).fold(0.0f64, f64::max);
    if let Some(c) = h.clone().cholesky() {
        let l = c.l_dirty();
        let min_pivot = (0..n)
            .map(|i| l[(i, i)] * l[(i, i)])
            .fold(f64::INFINITY, f64::min);
        if min_pivot > 1e-12 * diag_max {
            return Some((-c.solve(g), false));
        }
    }
    let hd = h + DMatrix::<f64>::identity(n, n) * (LM_DAMPING * diag_max.max(1.0));
    hd.cholesky().map(|c| (-c.solve(g), true))
}

fn damped_solve<const N: usize>(
    h: SMatrix<f64, N, N>,
    g: SVector<f64, N>,
) -> Option<(SVector<f64, N>, bool)> {
    let hd = DMatrix::from_column_slice(N, N, h.as_slice());
    let gd = DVector::from_column_slice(g.as_slice());
    damped_solve_dyn(hd, &gd)
        .map(|(d, dmp)| (SVector::<f64, N>::from_column_slice(d.as_slice()), dmp))
}

/// Tries `x + α δ` for `α = 1, ½, …`; returns the first candidate whose
/// energy does not exceed `e0`.
fn line_search<T>(
    e0: f64,
    mut make: impl FnMut(f64) -> T,
    mut energy: impl FnMut(&T) -> f64,
) -> Option<(T, f64)> {
    let mut alpha = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let cand = make(alpha);
        let e = energy(&cand);
        if e <= e0 && e.is_finite() {
            return Some((cand, e));
        }
        alpha *= 0.5;
    }
    None
}

/// Per texel and channel, the minimizer of `Σ_i ρ(C − s_i)` over the texel's
/// current samples, found by iteratively reweighted means starting from the
/// current colors. Unobserved texels keep their color.
fn color_step(prob: &Problem, poses: &[Pose], planes: &[Plane], colors: &[[f64; 3]]) -> Colors {
    let ts = prob.texels;
    let delta = prob.cfg.huber_delta;
    (0..ts.len())
        .into_par_iter()
        .map(|t| {
            let tx = &ts.texels[t];
            let vis = prob.obs.of(t);
            if vis.is_empty() {
                return colors[t];
            }
            let plane = &planes[tx.cluster as usize];
            let q = plane.project(&tx.p);
            let samples: Vec<[f64; 3]> = vis
                .iter()
                .map(|&i| {
                    let xc = (poses[i as usize] * nalgebra::Point3::from(q)).coords;
                    let uv = prob.k.project(&xc);
                    let mut s = [0.0; 3];
                    prob.images[i as usize].color.sample(uv.x, uv.y, &mut s);
                    s
                })
                .collect();
            let mut out = [0.0; 3];
            let mut xs = Vec::with_capacity(samples.len());
            for ch in 0..3 {
                xs.clear();
                xs.extend(samples.iter().map(|s| s[ch]));
                out[ch] = huber_location(&xs, colors[t][ch], delta);
            }
            out
        })
        .collect()
}

/// Minimizer of `Σ ρ_δ(c − x_i)` by IRLS from `start`.
pub fn huber_location(xs: &[f64], start: f64, delta: f64) -> f64 {
    let mut c = if start.is_finite() {
        start
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    for _ in 0..100 {
        let (mut num, mut den) = (0.0, 0.0);
        for &x in xs {
            let w = huber_weight(c - x, delta);
            num += w * x;
            den += w;
        }
        let next = num / den;
        if (next - c).abs() <= 1e-14 * (1.0 + c.abs()) {
            return next;
        }
        c = next;
    }
    c
}

struct StepStats {
    frames: usize,
    planes: usize,
    damped: usize,
}

fn block_steps(
    prob: &Problem,
    poses: &mut [Pose],
    planes: &mut [Plane],
    colors: &[[f64; 3]],
) -> StepStats {
    let cfg = prob.cfg;
    let mut st = StepStats {
        frames: 0,
        planes: 0,
        damped: 0,
    };
    if cfg.optimize_poses {
        let fixed: Vec<Plane> = planes.to_vec();
        let results: Vec<(Option<Pose>, bool)> = (0..poses.len())
            .into_par_iter()
            .map(|i| {
                let mut pose = poses[i];
                let mut e = prob.frame_energy(i, &pose, &fixed, colors);
                let (mut moved, mut damped) = (false, false);
                for _ in 0..cfg.gn_iters {
                    let (h, g) = prob.frame_system(i, &pose, &fixed, colors);
                    let Some((d, dmp)) = damped_solve(h, g) else {
                        break;
                    };
                    damped |= dmp;
                    let step = |a: f64| apply_pose_delta(&pose, &std::array::from_fn(|j| d[j] * a));
                    match line_search(e, step, |p| prob.frame_energy(i, p, &fixed, colors)) {
                        Some((p, en)) => {
                            pose = p;
                            e = en;
                            moved = true;
                        }
                        None => break,
                    }
                }
                (moved.then_some(pose), damped)
            })
            .collect();
        for (i, (p, dmp)) in results.into_iter().enumerate() {
            if let Some(p) = p {
                poses[i] = p;
                st.frames += 1;
            }
            st.damped += dmp as usize;
        }
    }
    if cfg.optimize_planes {
        let fixed: Vec<Pose> = poses.to_vec();
        let results: Vec<(Option<Plane>, bool)> = (0..planes.len())
            .into_par_iter()
            .map(|c| {
                let mut plane = planes[c];
                if prob.plane_texels[c].is_empty() && prob.plane_corrs[c].is_empty() {
                    return (None, false);
                }
                let mut e = prob.plane_energy(c, &plane, &fixed, colors);
                let (mut moved, mut damped) = (false, false);
                for _ in 0..cfg.gn_iters {
                    let (h, g) = prob.plane_system(c, &plane, &fixed, colors);
                    let Some((d, dmp)) = damped_solve(h, g) else {
                        break;
                    };
                    damped |= dmp;
                    let step = |a: f64| plane.retract(&(d * a));
                    match line_search(e, step, |p| prob.plane_energy(c, p, &fixed, colors)) {
                        Some((p, en)) => {
                            plane = p;
                            e = en;
                            moved = true;
                        }
                        None => break,
                    }
                }
                (moved.then_some(plane), damped)
            })
            .collect();
        for (c, (p, dmp)) in results.into_iter().enumerate() {
            if let Some(p) = p {
                planes[c] = p;
                st.planes += 1;
            }
            st.damped += dmp as usize;
        }
    }
    st
}

fn reduced_steps(
    prob: &Problem,
    poses: &mut [Pose],
    planes: &mut [Plane],
    colors: &mut Colors,
    e0: f64,
) -> StepStats {
    let cfg = prob.cfg;
    let layout = Layout::new(poses.len(), planes.len(), &cfg);
    let mut st = StepStats {
        frames: 0,
        planes: 0,
        damped: 0,
    };
    if layout.dim == 0 {
        return st;
    }
    let eliminate = cfg.optimize_colors;
    let mut e = e0;
    for _ in 0..cfg.gn_iters {
        let (h, g) = prob.reduced_system(&layout, poses, planes, colors, eliminate);
        let Some((d, dmp)) = damped_solve_dyn(h, &g) else {
            break;
        };
        st.damped += dmp as usize;
        let apply = |a: f64| {
            let np: Vec<Pose> = (0..poses.len())
                .map(|i| match layout.pose(i) {
                    Some(o) => apply_pose_delta(&poses[i], &std::array::from_fn(|j| d[o + j] * a)),
                    None => poses[i],
                })
                .collect();
            let nl: Vec<Plane> = (0..planes.len())
                .map(|c| match layout.plane(c) {
                    Some(o) => planes[c].retract(&(Vec3::new(d[o], d[o + 1], d[o + 2]) * a)),
                    None => planes[c],
                })
                .collect();
            let nc = if eliminate {
                color_step(prob, &np, &nl, colors)
            } else {
                colors.clone()
            };
            (np, nl, nc)
        };
        let found = line_search(e, apply, |(np, nl, nc)| prob.energy(np, nl, nc).total);
        match found {
            Some(((np, nl, nc), en)) => {
                poses.copy_from_slice(&np);
                planes.copy_from_slice(&nl);
                *colors = nc;
                e = en;
                st.frames = if cfg.optimize_poses { poses.len() } else { 0 };
                st.planes = if cfg.optimize_planes { planes.len() } else { 0 };
            }
            None => break,
        }
    }
    st
}

/// Runs the alternating optimization, updating colors in `texels`, `poses`
/// and `planes` in place.
#[allow(clippy::too_many_arguments)]
pub fn solve(
    texels: &mut TexelSet,
    frames: &FrameSet,
    images: &[FrameImages],
    poses: &mut [Pose],
    planes: &mut [Plane],
    corrs: &[LineCorrespondence],
    cfg: &OptimConfig,
    record_poses: bool,
) -> Result<EnergyReport> {
    cfg.validate()?;
    if poses.len() != images.len() || poses.len() != frames.len() {
        return Err(Error::Argument(
            "pose, image and frame counts differ".into(),
        ));
    }
    let k = frames.intrinsics;
    let mut colors: Colors = texels.texels.iter().map(|t| t.color).collect();
    let mut report = EnergyReport::default();
    let mut obs = Observations::new(texels, planes, poses, cfg.residual_max_view_angle_deg);
    report.initial = Problem::new(texels, &obs, images, k, corrs, planes.len(), *cfg)
        .energy(poses, planes, &colors);
    log::info!(
        "texture optimization: {} texels, {} frames, {} planes, {} line matches; E = {:.6e}",
        texels.len(),
        poses.len(),
        planes.len(),
        corrs.len(),
        report.initial.total
    );
    for it in 0..cfg.outer_iters {
        let refreshed = cfg.visibility_refresh > 0 && it > 0 && it % cfg.visibility_refresh == 0;
        if refreshed {
            compute_visibility(texels, planes, frames, poses, &cfg.visibility());
            obs = Observations::new(texels, planes, poses, cfg.residual_max_view_angle_deg);
            log::debug!("iteration {it}: visibility refreshed");
        }
        let prob = Problem::new(texels, &obs, images, k, corrs, planes.len(), *cfg);
        // unchanged state since the last evaluation unless visibility moved
        let before = match report.iterations.last() {
            Some(last) if !refreshed => last.after,
            None => report.initial,
            _ => prob.energy(poses, planes, &colors),
        };
        if cfg.optimize_colors {
            colors = color_step(&prob, poses, planes, &colors);
        }
        let st = match cfg.step {
            StepMode::Block => block_steps(&prob, poses, planes, &colors),
            StepMode::Reduced => {
                let e1 = prob.energy(poses, planes, &colors).total;
                reduced_steps(&prob, poses, planes, &mut colors, e1)
            }
        };
        let after = prob.energy(poses, planes, &colors);
        if st.damped > 0 {
            log::debug!("iteration {it}: {} systems needed damping", st.damped);
        }
        log::info!(
            "iteration {it}: E {:.6e} -> {:.6e} (c {:.4e}, p {:.4e}, t {:.4e})",
            before.total,
            after.total,
            after.e_c,
            after.e_p,
            after.e_t
        );
        report.iterations.push(IterationReport {
            iteration: it,
            before,
            after,
            visibility_refreshed: refreshed,
            frames_stepped: st.frames,
            planes_stepped: st.planes,
            damped_blocks: st.damped,
        });
        if record_poses {
            report.pose_history.push(poses.to_vec());
        }
        let rel = (before.total - after.total) / before.total.max(f64::MIN_POSITIVE);
        if rel < cfg.tol {
            report.converged = true;
            break;
        }
    }
    for (t, c) in texels.texels.iter_mut().zip(&colors) {
        t.color = *c;
    }
    for t in 0..texels.len() {
        if !texels.visible(t).is_empty() {
            texels.texels[t].observed = true;
        }
    }
    crate::texgen::fill_unobserved(texels, planes, frames, images, poses, &cfg.visibility());
    Ok(report)
}

/// Writes poses as a TUM trajectory (camera→world).
pub fn write_tum(poses: &[Pose], timestamps: &[f64], path: &Path) -> Result<()> {
    let entries: Vec<(f64, Pose)> = timestamps
        .iter()
        .copied()
        .zip(poses.iter().copied())
        .collect();
    let text = crate::scene_io::frames::format_trajectory(&entries);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
