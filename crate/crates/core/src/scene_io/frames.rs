//! RGB-D keyframe ingestion: intrinsics, trajectories (TUM or per-frame
//! 4×4 matrices) and color/depth image pairs.
//!
//! Depth is assumed registered to the color camera.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, RgbImage};
use nalgebra::{Isometry3, Matrix3, Quaternion, Rotation3, Translation3, UnitQuaternion};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Pose, Vec3};
use crate::image::DepthImage;

#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    pub timestamp: f64,
    pub color: RgbImage,
    pub depth: DepthImage,
    /// World→camera.
    pub pose: Pose,
    /// Crete-style blur score, filled by keyframe selection.
    pub blurriness: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FrameSet {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.pose).collect()
    }
}

/// One trajectory sample; `cam_to_world` as stored in the file.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryEntry {
    pub timestamp: f64,
    pub cam_to_world: Pose,
}

pub const QUATERNION_TOLERANCE: f64 = 1e-3;

pub fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics> {
    let mut map = BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line
            .split(|c: char| c == '=' || c == ':' || c.is_whitespace())
            .filter(|s| !s.is_empty());
        let (Some(k), Some(v)) = (it.next(), it.next()) else {
            return Err(Error::Ingest(format!(
                "intrinsics line {}: expected `key = value`",
                ln + 1
            )));
        };
        let v: f64 = v
            .parse()
            .map_err(|_| Error::Ingest(format!("intrinsics line {}: bad number `{v}`", ln + 1)))?;
        map.insert(k.to_ascii_lowercase(), v);
    }
    let get = |k: &str| {
        map.get(k)
            .copied()
            .ok_or_else(|| Error::Ingest(format!("intrinsics missing `{k}`")))
    };
    let k = CameraIntrinsics {
        fx: get("fx")?,
        fy: get("fy")?,
        cx: get("cx")?,
        cy: get("cy")?,
        width: get("width")? as u32,
        height: get("height")? as u32,
        depth_scale: map.get("depth_scale").copied().unwrap_or(5000.0),
    };
    k.validate().map_err(|e| Error::Ingest(e.to_string()))?;
    Ok(k)
}

pub fn format_intrinsics(k: &CameraIntrinsics) -> String {
    format!(
        "fx = {}\nfy = {}\ncx = {}\ncy = {}\nwidth = {}\nheight = {}\ndepth_scale = {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height, k.depth_scale
    )
}

/// Parses a trajectory, auto-detecting the TUM layout
/// (`timestamp tx ty tz qx qy qz qw`) or the index-matched layout
/// (`frame_id` followed by a row-major 4×4 matrix). Both store camera→world.
pub fn parse_trajectory(text: &str) -> Result<Vec<TrajectoryEntry>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Ingest(format!("trajectory line {}: non-numeric token", ln + 1)))?;
        let entry = match vals.len() {
            8 => {
                let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
                let norm = q.norm();
                if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
                    return Err(Error::Ingest(format!(
                        "trajectory line {}: quaternion norm {norm} is not unit (tolerance {QUATERNION_TOLERANCE})",
                        ln + 1
                    )));
                }
                TrajectoryEntry {
                    timestamp: vals[0],
                    cam_to_world: Isometry3::from_parts(
                        Translation3::new(vals[1], vals[2], vals[3]),
                        UnitQuaternion::from_quaternion(q),
                    ),
                }
            }
            17 => {
                let m = Matrix3::new(
                    vals[1], vals[2], vals[3], vals[5], vals[6], vals[7], vals[9], vals[10],
                    vals[11],
                );
                let ortho = (m.transpose() * m - Matrix3::identity()).norm();
                if ortho > QUATERNION_TOLERANCE
                    || (m.determinant() - 1.0).abs() > QUATERNION_TOLERANCE
                {
                    return Err(Error::Ingest(format!(
                        "trajectory line {}: rotation block is not orthonormal",
                        ln + 1
                    )));
                }
                let rot =
                    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
                TrajectoryEntry {
                    timestamp: vals[0],
                    cam_to_world: Isometry3::from_parts(
                        Translation3::new(vals[4], vals[8], vals[12]),
                        rot,
                    ),
                }
            }
            n => {
                return Err(Error::Ingest(format!(
                    "trajectory line {}: expected 8 (TUM) or 17 (id + 4x4) values, found {n}",
                    ln + 1
                )))
            }
        };
        out.push(entry);
    }
    Ok(out)
}

/// TUM text for world→camera poses (written inverted, as camera→world).
pub fn format_trajectory(entries: &[(f64, Pose)]) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (ts, world_to_cam) in entries {
        let c2w = world_to_cam.inverse();
        let t = c2w.translation.vector;
        let q = c2w.rotation.quaternion();
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            ts, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        );
    }
    s
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| e.to_ascii_lowercase())
                    .as_deref(),
                Some("png") | Some("jpg") | Some("jpeg")
            )
        })
        .collect();
    out.sort();
    Ok(out)
}

fn stem_timestamp(p: &Path) -> Option<f64> {
    p.file_stem()?.to_str()?.parse().ok()
}

fn nearest_within(sorted: &[(f64, usize)], t: f64, tol: f64) -> Option<usize> {
    let i = sorted.partition_point(|(s, _)| *s < t);
    [i.checked_sub(1), Some(i)]
        .into_iter()
        .flatten()
        .filter_map(|j| sorted.get(j))
        .filter(|(s, _)| (s - t).abs() <= tol)
        .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
        .map(|(_, k)| *k)
}

const ASSOCIATION_TOLERANCE_S: f64 = 0.02;

/// Loads `dir/color/*` and `dir/depth/*` together with a trajectory and
/// intrinsics. Frames are matched by index when counts agree, otherwise by
/// timestamps parsed from the file names.
pub fn load_frames(dir: &Path, trajectory_path: &Path, intrinsics_path: &Path) -> Result<FrameSet> {
    let intr_text =
        std::fs::read_to_string(intrinsics_path).map_err(|e| Error::io(intrinsics_path, e))?;
    let intrinsics = parse_intrinsics(&intr_text)?;
    let traj_text =
        std::fs::read_to_string(trajectory_path).map_err(|e| Error::io(trajectory_path, e))?;
    let traj = parse_trajectory(&traj_text)?;
    let colors = image_files(&dir.join("color"))?;
    let depths = image_files(&dir.join("depth"))?;

    // (color, depth, pose) index triples
    let triples: Vec<(usize, usize, usize)> = if colors.len() == depths.len()
        && colors.len() == traj.len()
    {
        (0..colors.len()).map(|i| (i, i, i)).collect()
    } else {
        let ct: Option<Vec<f64>> = colors.iter().map(|p| stem_timestamp(p)).collect();
        let dt: Option<Vec<f64>> = depths.iter().map(|p| stem_timestamp(p)).collect();
        let (Some(ct), Some(dt)) = (ct, dt) else {
            return Err(Error::Ingest(format!(
                "cannot match {} color images, {} depth images and {} poses: counts differ and file names are not timestamps",
                colors.len(),
                depths.len(),
                traj.len()
            )));
        };
        let mut ds: Vec<(f64, usize)> = dt.iter().copied().zip(0..).collect();
        ds.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut ps: Vec<(f64, usize)> = traj.iter().map(|e| e.timestamp).zip(0..).collect();
        ps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut missing = Vec::new();
        let mut out = Vec::new();
        for (ci, &t) in ct.iter().enumerate() {
            let d = nearest_within(&ds, t, ASSOCIATION_TOLERANCE_S);
            let p = nearest_within(&ps, t, ASSOCIATION_TOLERANCE_S);
            match (d, p) {
                (Some(d), Some(p)) => out.push((ci, d, p)),
                (d, p) => {
                    let mut what = Vec::new();
                    if d.is_none() {
                        what.push("depth");
                    }
                    if p.is_none() {
                        what.push("pose");
                    }
                    missing.push(format!("{} (no {})", colors[ci].display(), what.join("/")));
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Ingest(format!(
                "unmatched frames: {}",
                missing.join(", ")
            )));
        }
        out
    };

    let frames = triples
        .par_iter()
        .enumerate()
        .map(|(index, &(ci, di, pi))| -> Result<Frame> {
            let color = image::open(&colors[ci])?.into_rgb8();
            let depth_raw = image::open(&depths[di])?.into_luma16();
            if color.dimensions() != (intrinsics.width, intrinsics.height)
                || depth_raw.dimensions() != (intrinsics.width, intrinsics.height)
            {
                return Err(Error::Ingest(format!(
                    "frame {index}: image size {:?}/{:?} differs from intrinsics {}x{}",
                    color.dimensions(),
                    depth_raw.dimensions(),
                    intrinsics.width,
                    intrinsics.height
                )));
            }
            let depth = DepthImage::from_raw_u16(
                intrinsics.width,
                intrinsics.height,
                depth_raw.as_raw(),
                intrinsics.depth_scale,
            );
            let entry = traj[pi];
            Ok(Frame {
                index,
                timestamp: stem_timestamp(&colors[ci]).unwrap_or(entry.timestamp),
                color,
                depth,
                pose: entry.cam_to_world.inverse(),
                blurriness: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameSet { intrinsics, frames })
}

/// Writes frames in the layout [`load_frames`] reads: `color/NNNNNN.png`,
/// `depth/NNNNNN.png`, `trajectory.txt`, `intrinsics.txt`.
pub fn save_frames(set: &FrameSet, dir: &Path) -> Result<()> {
    for sub in ["color", "depth"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    set.frames.par_iter().try_for_each(|f| -> Result<()> {
        let name = format!("{:06}.png", f.index);
        f.color.save(dir.join("color").join(&name))?;
        let raw = f.depth.to_raw_u16(set.intrinsics.depth_scale);
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(f.depth.width, f.depth.height, raw).expect("depth buffer size");
        img.save(dir.join("depth").join(&name))?;
        Ok(())
    })?;
    let entries: Vec<(f64, Pose)> = set.frames.iter().map(|f| (f.timestamp, f.pose)).collect();
    let tp = dir.join("trajectory.txt");
    std::fs::write(&tp, format_trajectory(&entries)).map_err(|e| Error::io(&tp, e))?;
    let ip = dir.join("intrinsics.txt");
    std::fs::write(&ip, format_intrinsics(&set.intrinsics)).map_err(|e| Error::io(&ip, e))?;
    Ok(())
}

/// Camera center of a world→camera pose.
pub fn camera_center(pose: &Pose) -> Vec3 {
    pose.inverse().translation.vector
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pose() {
        let t = parse_trajectory("0.0 0 0 0 0 0 0 1\n").unwrap();
        let w2c = t[0].cam_to_world.inverse();
        assert!((w2c.to_homogeneous() - nalgebra::Matrix4::identity()).norm() < 1e-15);
    }

    #[test]
    fn pure_translation_inverts() {
        let t = parse_trajectory("1.5 1 0 0 0 0 0 1\n").unwrap();
        let w2c = t[0].cam_to_world.inverse();
        assert_eq!(w2c.translation.vector, Vec3::new(-1.0, 0.0, 0.0));
        assert_eq!(t[0].timestamp, 1.5);
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let err = parse_trajectory("0 0 0 0 0 0 0 1.01\n").unwrap_err();
        assert!(err.to_string().contains("quaternion"));
        // within tolerance is accepted and normalized
        let ok = parse_trajectory("0 0 0 0 0 0 0 1.0005\n").unwrap();
        assert!((ok[0].cam_to_world.rotation.quaternion().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matrix_layout_detected() {
        let t = parse_trajectory("3 1 0 0 0.5  0 1 0 0  0 0 1 -2  0 0 0 1\n").unwrap();
        assert_eq!(t[0].timestamp, 3.0);
        assert_eq!(
            t[0].cam_to_world.translation.vector,
            Vec3::new(0.5, 0.0, -2.0)
        );
        assert!(parse_trajectory("3 2 0 0 0  0 1 0 0  0 0 1 0  0 0 0 1\n").is_err());
    }

    #[test]
    fn wrong_token_count() {
        assert!(parse_trajectory("1 2 3\n").is_err());
    }

    #[test]
    fn trajectory_text_roundtrip() {
        let pose = crate::geom::look_at(
            &Vec3::new(0.3, -1.2, 1.4),
            &Vec3::new(1.0, 2.0, 0.2),
            &Vec3::z(),
        );
        let text = format_trajectory(&[(0.25, pose)]);
        let back = parse_trajectory(&text).unwrap();
        let w2c = back[0].cam_to_world.inverse();
        // composing the stored world→camera with the file's camera→world is identity
        let id = (w2c * back[0].cam_to_world).to_homogeneous();
        assert!((id - nalgebra::Matrix4::identity()).norm() < 1e-9);
        assert!((w2c.to_homogeneous() - pose.to_homogeneous()).norm() < 1e-9);
    }

    #[test]
    fn intrinsics_parse() {
        let k = parse_intrinsics("# kinect\nfx = 525\nfy: 525\ncx 319.5\ncy=239.5\nwidth=640\nheight=480\ndepth_scale=5000\n").unwrap();
        assert_eq!(k.fx, 525.0);
        assert_eq!(k.width, 640);
        assert!(parse_intrinsics("fx=1\nfy=1\ncx=1\ncy=1\nwidth=2\n").is_err());
    }

    #[test]
    fn association_by_timestamp() {
        let ps = vec![(0.0, 0), (0.1, 1), (0.2, 2)];
        assert_eq!(nearest_within(&ps, 0.105, 0.02), Some(1));
        assert_eq!(nearest_within(&ps, 0.15, 0.02), None);
    }
}
