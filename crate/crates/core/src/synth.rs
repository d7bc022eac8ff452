//! Ground-truth scenes for testing: planar rectangles tessellated into a
//! (optionally noisy) mesh, procedural textures, and a z-buffer renderer
//! producing RGB-D frames.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{look_at, CameraIntrinsics, Plane, Pose, Vec3};
use crate::image::{DepthImage, FloatImage};
use crate::mesh::TriMesh;
use crate::scene_io::{Frame, FrameSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    Checker {
        cell: f64,
    },
    Gradient,
    /// Sum of low-frequency sinusoids; smooth at any sensible texel size.
    Waves,
    /// Dark bars on a light background, a stand-in for printed text.
    Text,
    Constant,
}

/// A textured rectangle `origin + s·a + t·b`, `s, t ∈ [0, 1]`. The face
/// normal is `a × b`.
#[derive(Debug, Clone)]
pub struct Rect {
    pub origin: Vec3,
    pub a: Vec3,
    pub b: Vec3,
    pub pattern: Pattern,
    pub base_color: [f64; 3],
    /// Rectangles in the same group are welded into one connected surface.
    pub group: u32,
}

impl Rect {
    pub fn plane(&self) -> Plane {
        Plane::from_point_normal(&self.origin, &self.a.cross(&self.b))
    }
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub rects: Vec<Rect>,
    /// Target tessellation edge length (meters).
    pub edge_len: f64,
    /// Isotropic Gaussian vertex noise (meters).
    pub noise_sigma: f64,
    /// Texture resolution (pixels per meter).
    pub texture_res: f64,
    pub seed: u64,
}

const PALETTE: [[f64; 3]; 8] = [
    [0.80, 0.55, 0.35],
    [0.35, 0.55, 0.80],
    [0.55, 0.80, 0.40],
    [0.85, 0.80, 0.45],
    [0.65, 0.40, 0.70],
    [0.40, 0.75, 0.75],
    [0.75, 0.45, 0.45],
    [0.50, 0.50, 0.55],
];

fn rect(origin: Vec3, a: Vec3, b: Vec3, idx: usize, pattern: Pattern, group: u32) -> Rect {
    Rect {
        origin,
        a,
        b,
        pattern,
        base_color: PALETTE[idx % PALETTE.len()],
        group,
    }
}

/// Five visible sides of an axis-aligned box resting on `z = min.z`
/// (outward normals). With `closed` the bottom is included.
fn box_rects(
    min: Vec3,
    size: Vec3,
    pattern: Pattern,
    group: u32,
    first: usize,
    closed: bool,
) -> Vec<Rect> {
    let (x, y, z) = (Vec3::x() * size.x, Vec3::y() * size.y, Vec3::z() * size.z);
    let mut r = vec![
        rect(min + z, x, y, first, pattern, group),     // top (+z)
        rect(min, x, z, first + 1, pattern, group),     // -y
        rect(min + y, z, x, first + 2, pattern, group), // +y
        rect(min, z, y, first + 3, pattern, group),     // -x
        rect(min + x, y, z, first + 4, pattern, group), // +x
    ];
    if closed {
        r.push(rect(min, y, x, first + 5, pattern, group)); // bottom (-z)
    }
    r
}

impl SceneSpec {
    /// Closed axis-aligned box with side `size` and its min corner at `min`.
    pub fn closed_box(min: Vec3, size: f64, edge_len: f64, noise_sigma: f64) -> Self {
        SceneSpec {
            rects: box_rects(min, Vec3::repeat(size), Pattern::Waves, 0, 0, true),
            edge_len,
            noise_sigma,
            texture_res: 100.0,
            seed: 1,
        }
    }

    /// Room interior (inward normals) of `dims`, optionally with a box on the
    /// floor (separate component).
    pub fn room(dims: Vec3, with_box: bool, edge_len: f64, noise_sigma: f64) -> Self {
        let (x, y, z) = (Vec3::x() * dims.x, Vec3::y() * dims.y, Vec3::z() * dims.z);
        let o = Vec3::zeros();
        let p = Pattern::Waves;
        let mut rects = vec![
            rect(o, x, y, 0, p, 0),     // floor, +z
            rect(o + z, y, x, 1, p, 0), // ceiling, -z
            rect(o, y, z, 2, p, 0),     // x=0 wall, +x
            rect(o + x, z, y, 3, p, 0), // x=X wall, -x
            rect(o, z, x, 4, p, 0),     // y=0 wall, +y
            rect(o + y, x, z, 5, p, 0), // y=Y wall, -y
        ];
        if with_box {
            let bmin = Vec3::new(dims.x * 0.55, dims.y * 0.4, 0.0);
            rects.extend(box_rects(
                bmin,
                Vec3::new(0.8, 0.6, 0.7),
                Pattern::Waves,
                1,
                6,
                false,
            ));
        }
        SceneSpec {
            rects,
            edge_len,
            noise_sigma,
            texture_res: 100.0,
            seed: 2,
        }
    }

    /// Floor plus two walls meeting in a corner at the origin.
    pub fn corner(extent: f64, height: f64, edge_len: f64) -> Self {
        let p = Pattern::Waves;
        let (x, y, z) = (Vec3::x() * extent, Vec3::y() * extent, Vec3::z() * height);
        SceneSpec {
            rects: vec![
                rect(Vec3::zeros(), x, y, 0, p, 0),
                rect(Vec3::zeros(), y, z, 1, p, 0),
                rect(Vec3::zeros(), z, x, 2, p, 0),
            ],
            edge_len,
            noise_sigma: 0.0,
            texture_res: 100.0,
            seed: 3,
        }
    }

    /// A single square in `z = 0` facing +z.
    pub fn plane(size: f64, edge_len: f64, pattern: Pattern) -> Self {
        SceneSpec {
            rects: vec![rect(
                Vec3::new(-size / 2.0, -size / 2.0, 0.0),
                Vec3::x() * size,
                Vec3::y() * size,
                0,
                pattern,
                0,
            )],
            edge_len,
            noise_sigma: 0.0,
            texture_res: 100.0,
            seed: 4,
        }
    }

    pub fn with_pattern(mut self, pattern: Pattern) -> Self {
        for r in &mut self.rects {
            r.pattern = pattern;
        }
        self
    }
}

/// Procedural texture of one rectangle, rasterized at `res` pixels per meter.
#[derive(Debug, Clone)]
pub struct Texture {
    pub image: FloatImage,
    pub res: f64,
}

impl Texture {
    /// Bilinear color at in-plane coordinates `(s, t)` in meters.
    pub fn sample(&self, s: f64, t: f64) -> [f64; 3] {
        let mut c = [0.0; 3];
        self.image
            .sample(s * self.res - 0.5, t * self.res - 0.5, &mut c);
        c
    }
}

fn make_texture(r: &Rect, res: f64, seed: u64) -> Texture {
    let la = r.a.norm();
    let lb = r.b.norm();
    let w = ((la * res).ceil() as u32).max(2);
    let h = ((lb * res).ceil() as u32).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[f64; 5]> = (0..5)
        .map(|_| {
            let f = rng.random_range(0.6..2.4);
            let th = rng.random_range(0.0..PI);
            [
                f * th.cos(),
                f * th.sin(),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.05..0.12),
                rng.random_range(0.0..1.0),
            ]
        })
        .collect();
    let bars: Vec<[f64; 4]> = (0..((la * lb * 40.0) as usize).max(4))
        .map(|_| {
            [
                rng.random_range(0.0..la),
                rng.random_range(0.0..lb),
                rng.random_range(0.03..0.12),
                rng.random_range(0.01..0.025),
            ]
        })
        .collect();
    let mut img = FloatImage::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let s = (x as f64 + 0.5) / res;
            let t = (y as f64 + 0.5) / res;
            let mut c = r.base_color;
            match r.pattern {
                Pattern::Constant => {}
                Pattern::Gradient => {
                    for (k, ch) in c.iter_mut().enumerate() {
                        *ch = (*ch * (0.6 + 0.4 * s / la) + 0.1 * (k as f64) * t / lb).min(1.0);
                    }
                }
                Pattern::Checker { cell } => {
                    let odd = ((s / cell).floor() as i64 + (t / cell).floor() as i64) & 1 == 1;
                    if odd {
                        c = c.map(|v| v * 0.45);
                    }
                }
                Pattern::Waves => {
                    for wv in &waves {
                        let v = wv[3] * (2.0 * PI * (wv[0] * s + wv[1] * t) + wv[2]).sin();
                        let k = (wv[4] * 3.0) as usize;
                        for (ch, cv) in c.iter_mut().enumerate() {
                            *cv += if ch == k { 1.3 * v } else { 0.7 * v };
                        }
                    }
                }
                Pattern::Text => {
                    let dark = bars
                        .iter()
                        .any(|b| s >= b[0] && s <= b[0] + b[2] && t >= b[1] && t <= b[1] + b[3]);
                    if dark {
                        c = c.map(|v| v * 0.2);
                    }
                }
            }
            for (ch, v) in c.iter().enumerate() {
                img.set(x, y, ch, v.clamp(0.02, 0.98) as f32);
            }
        }
    }
    Texture { image: img, res }
}

/// Generated scene with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub spec: SceneSpec,
    pub mesh: TriMesh,
    /// Ground-truth rectangle index per face.
    pub labels: Vec<u32>,
    pub planes: Vec<Plane>,
    pub textures: Vec<Texture>,
}

pub fn make_scene(spec: &SceneSpec) -> SynthScene {
    let mut verts: Vec<Vec3> = Vec::new();
    let mut faces = Vec::new();
    let mut labels = Vec::new();
    let mut weld: HashMap<(u32, i64, i64, i64), u32> = HashMap::new();
    let key = |g: u32, p: &Vec3| {
        let q = |x: f64| (x * 1e6).round() as i64;
        (g, q(p.x), q(p.y), q(p.z))
    };
    for (ri, r) in spec.rects.iter().enumerate() {
        let na = ((r.a.norm() / spec.edge_len).ceil() as usize).max(1);
        let nb = ((r.b.norm() / spec.edge_len).ceil() as usize).max(1);
        let mut ids = vec![0u32; (na + 1) * (nb + 1)];
        for j in 0..=nb {
            for i in 0..=na {
                let p = r.origin + r.a * (i as f64 / na as f64) + r.b * (j as f64 / nb as f64);
                let id = *weld.entry(key(r.group, &p)).or_insert_with(|| {
                    verts.push(p);
                    (verts.len() - 1) as u32
                });
                ids[j * (na + 1) + i] = id;
            }
        }
        for j in 0..nb {
            for i in 0..na {
                let v00 = ids[j * (na + 1) + i];
                let v10 = ids[j * (na + 1) + i + 1];
                let v01 = ids[(j + 1) * (na + 1) + i];
                let v11 = ids[(j + 1) * (na + 1) + i + 1];
                // alternate the diagonal so the tessellation has no global bias
                if (i + j) % 2 == 0 {
                    faces.push([v00, v10, v11]);
                    faces.push([v00, v11, v01]);
                } else {
                    faces.push([v00, v10, v01]);
                    faces.push([v10, v11, v01]);
                }
                labels.push(ri as u32);
                labels.push(ri as u32);
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = Normal::new(0.0, spec.noise_sigma).unwrap();
        for v in &mut verts {
            *v += Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
        }
    }
    let mesh = TriMesh::from_valid(verts, faces).with_labels(labels.clone());
    let planes = spec.rects.iter().map(Rect::plane).collect();
    let textures = spec
        .rects
        .par_iter()
        .enumerate()
        .map(|(i, r)| make_texture(r, spec.texture_res, spec.seed.wrapping_mul(1000) + i as u64))
        .collect();
    SynthScene {
        spec: spec.clone(),
        mesh,
        labels,
        planes,
        textures,
    }
}

impl SynthScene {
    /// Ground-truth color of a world point on rectangle `rect`.
    pub fn color_at(&self, rect: usize, p: &Vec3) -> [f64; 3] {
        let r = &self.spec.rects[rect];
        let d = p - r.origin;
        let s = d.dot(&r.a) / r.a.norm();
        let t = d.dot(&r.b) / r.b.norm();
        self.textures[rect].sample(s, t)
    }

    /// Nearest ray hit `(rect, camera z, world point)` for pixel `(u, v)`.
    pub fn cast(
        &self,
        pose: &Pose,
        k: &CameraIntrinsics,
        u: f64,
        v: f64,
    ) -> Option<(usize, f64, Vec3)> {
        let inv = pose.inverse();
        let center = inv.translation.vector;
        let dir = inv.rotation * Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        let mut best: Option<(usize, f64, Vec3)> = None;
        for (i, r) in self.spec.rects.iter().enumerate() {
            let n = r.a.cross(&r.b);
            let denom = n.dot(&dir);
            if denom.abs() < 1e-12 {
                continue;
            }
            let z = n.dot(&(r.origin - center)) / denom;
            if z <= NEAR_CLIP || best.is_some_and(|b| b.1 <= z) {
                continue;
            }
            let x = center + dir * z;
            let d = x - r.origin;
            let s = d.dot(&r.a) / r.a.norm_squared();
            let t = d.dot(&r.b) / r.b.norm_squared();
            if (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t) {
                best = Some((i, z, x));
            }
        }
        best
    }
}

const NEAR_CLIP: f64 = 0.05;

/// Renders an RGB-D frame: z-buffered ray hits at pixel centers for depth,
/// `supersample²` jittered-grid samples averaged for color.
pub fn render(
    scene: &SynthScene,
    pose: &Pose,
    k: &CameraIntrinsics,
    supersample: u32,
) -> (RgbImage, DepthImage) {
    let (w, h) = (k.width, k.height);
    let ss = supersample.max(1);
    let rows: Vec<(Vec<u8>, Vec<f32>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut rgb = Vec::with_capacity(w as usize * 3);
            let mut dep = Vec::with_capacity(w as usize);
            for x in 0..w {
                let hit = scene.cast(pose, k, x as f64, y as f64);
                dep.push(hit.map_or(0.0, |(_, z, _)| z as f32));
                let mut acc = [0.0; 3];
                let mut n = 0.0;
                for sy in 0..ss {
                    for sx in 0..ss {
                        let du = (sx as f64 + 0.5) / ss as f64 - 0.5;
                        let dv = (sy as f64 + 0.5) / ss as f64 - 0.5;
                        if let Some((ri, _, p)) = scene.cast(pose, k, x as f64 + du, y as f64 + dv)
                        {
                            let c = scene.color_at(ri, &p);
                            for i in 0..3 {
                                acc[i] += c[i];
                            }
                        }
                        n += 1.0;
                    }
                }
                for a in acc {
                    rgb.push((a / n * 255.0).round().clamp(0.0, 255.0) as u8);
                }
            }
            (rgb, dep)
        })
        .collect();
    let mut color = Vec::with_capacity((w * h * 3) as usize);
    let mut depth = Vec::with_capacity((w * h) as usize);
    for (c, d) in rows {
        color.extend(c);
        depth.extend(d);
    }
    let color = RgbImage::from_raw(w, h, color).expect("color buffer");
    let mut depth = DepthImage {
        width: w,
        height: h,
        data: depth,
    };
    // quantize like a real sensor
    let raw = depth.to_raw_u16(k.depth_scale);
    depth = DepthImage::from_raw_u16(w, h, &raw, k.depth_scale);
    (color, depth)
}

pub fn render_frames(
    scene: &SynthScene,
    poses: &[Pose],
    k: &CameraIntrinsics,
    supersample: u32,
) -> FrameSet {
    let frames = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let (color, depth) = render(scene, pose, k, supersample);
            Frame {
                index: i,
                timestamp: i as f64 / 30.0,
                color,
                depth,
                pose: *pose,
                blurriness: None,
            }
        })
        .collect();
    FrameSet {
        intrinsics: *k,
        frames,
    }
}

pub fn default_intrinsics(width: u32, height: u32) -> CameraIntrinsics {
    let f = 0.9 * width as f64;
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
        width,
        height,
        depth_scale: 5000.0,
    }
}

/// `n` cameras on an arc around `target`, at `radius` horizontally and height
/// `eye_z`, spanning `arc_deg` centered on azimuth `azimuth_deg`.
pub fn arc_poses(
    target: Vec3,
    radius: f64,
    eye_z: f64,
    azimuth_deg: f64,
    arc_deg: f64,
    n: usize,
) -> Vec<Pose> {
    (0..n)
        .map(|i| {
            let t = if n == 1 {
                0.5
            } else {
                i as f64 / (n - 1) as f64
            };
            let az = (azimuth_deg + arc_deg * (t - 0.5)).to_radians();
            let eye = Vec3::new(
                target.x + radius * az.cos(),
                target.y + radius * az.sin(),
                eye_z,
            );
            look_at(&eye, &target, &Vec3::z())
        })
        .collect()
}

/// Perturbs every pose by a rotation of exactly `rot_deg` about a random
/// axis and a camera-center shift of exactly `trans_m` in a random direction.
pub fn perturb_poses(poses: &[Pose], rot_deg: f64, trans_m: f64, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = move || {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        v.normalize()
    };
    poses
        .iter()
        .map(|p| {
            let axis = unit();
            let shift = unit() * trans_m;
            let rot = nalgebra::UnitQuaternion::from_scaled_axis(axis * rot_deg.to_radians());
            // rotate about the camera center, then move the center
            let c2w = p.inverse();
            let center = c2w.translation.vector + shift;
            let r_c2w = rot * c2w.rotation;
            nalgebra::Isometry3::from_parts(nalgebra::Translation3::from(center), r_c2w).inverse()
        })
        .collect()
}

/// Ready-made scenes with camera paths that see most of their surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Closed 1 m box, cameras circling outside.
    Box,
    /// 4×3×2.5 m room, cameras near the center looking at the walls.
    Room,
    /// The room with a box on the floor.
    RoomBox,
    /// 2 m square plane seen head-on.
    Plane,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(Preset::Box),
            "room" => Ok(Preset::Room),
            "room-box" | "room_box" => Ok(Preset::RoomBox),
            "plane" => Ok(Preset::Plane),
            _ => Err(Error::Argument(format!(
                "unknown scene '{s}' (box, room, room-box, plane)"
            ))),
        }
    }
}

impl Preset {
    pub fn spec(self, edge_len: f64, noise_sigma: f64) -> SceneSpec {
        match self {
            Preset::Box => SceneSpec::closed_box(Vec3::zeros(), 1.0, edge_len, noise_sigma),
            Preset::Room | Preset::RoomBox => SceneSpec::room(
                Vec3::new(4.0, 3.0, 2.5),
                self == Preset::RoomBox,
                edge_len,
                noise_sigma,
            ),
            Preset::Plane => SceneSpec {
                noise_sigma,
                ..SceneSpec::plane(2.0, edge_len, Pattern::Waves)
            },
        }
    }

    pub fn poses(self, n: usize) -> Vec<Pose> {
        let n = n.max(1);
        match self {
            Preset::Box => arc_poses(Vec3::repeat(0.5), 2.5, 1.6, -45.0, 300.0, n),
            Preset::Room | Preset::RoomBox => {
                let center = Vec3::new(2.0, 1.5, 1.4);
                (0..n)
                    .map(|i| {
                        let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                        let dir = Vec3::new(a.cos(), a.sin(), 0.0);
                        let eye = center - dir * 0.4;
                        // alternate floor and ceiling views
                        let tilt = if i % 2 == 0 { -0.7 } else { 0.6 };
                        look_at(&eye, &(center + dir * 2.0 + Vec3::z() * tilt), &Vec3::z())
                    })
                    .collect()
            }
            Preset::Plane => (0..n)
                .map(|i| {
                    let s = if n == 1 {
                        0.0
                    } else {
                        i as f64 / (n - 1) as f64 - 0.5
                    };
                    look_at(
                        &Vec3::new(0.4 * s, -0.2 * s, 1.5),
                        &Vec3::zeros(),
                        &Vec3::y(),
                    )
                })
                .collect(),
        }
    }
}

/// Writes a dataset directory consumable by the CLI: `mesh.ply`, `color/`,
/// `depth/`, `trajectory.txt`, `intrinsics.txt` and `planeopt.cfg`.
/// `extra_config` lines are appended to the config file.
pub fn write_dataset(
    scene: &SynthScene,
    frames: &FrameSet,
    dir: &Path,
    extra_config: &str,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::scene_io::save_mesh(&scene.mesh, &dir.join("mesh.ply"))?;
    crate::scene_io::save_frames(frames, dir)?;
    let cfg = format!("mesh = mesh.ply\nframes = .\ntrajectory = trajectory.txt\nintrinsics = intrinsics.txt\noutput = out\n{extra_config}");
    let p = dir.join("planeopt.cfg");
    std::fs::write(&p, cfg).map_err(|e| Error::io(&p, e))
}
