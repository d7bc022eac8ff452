//! Wavefront OBJ + MTL + PNG atlas output.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::mesh::TriMesh;
use crate::texgen::{atlas_image, TexelSet};

/// Atlas image plus per-face corner coordinates in atlas pixels (x right,
/// y down, pixel `i` covering `[i, i+1)`).
#[derive(Debug, Clone)]
pub struct TextureAtlas {
    pub image: RgbImage,
    pub face_uvs: Vec<Option<[Vec2; 3]>>,
}

impl TextureAtlas {
    pub fn from_texels(texels: &TexelSet, gutter: u32) -> Self {
        TextureAtlas {
            image: atlas_image(texels, gutter),
            face_uvs: texels.face_uvs.clone(),
        }
    }

    /// OBJ texture coordinates: normalized, `v` pointing up.
    pub fn normalized(&self, uv: &Vec2) -> Vec2 {
        let (w, h) = (self.image.width() as f64, self.image.height() as f64);
        Vec2::new(uv.x / w, 1.0 - uv.y / h)
    }
}

/// Paths written next to `obj_path`.
pub fn companion_paths(obj_path: &Path) -> (PathBuf, PathBuf) {
    (
        obj_path.with_extension("mtl"),
        obj_path.with_extension("png"),
    )
}

/// Writes `path` (OBJ), its MTL and the atlas PNG.
pub fn save_textured_mesh(mesh: &TriMesh, atlas: &TextureAtlas, path: &Path) -> Result<()> {
    if atlas.face_uvs.len() != mesh.n_faces() {
        return Err(Error::Export(format!(
            "atlas has UVs for {} faces, mesh has {}",
            atlas.face_uvs.len(),
            mesh.n_faces()
        )));
    }
    if let Some(f) = atlas.face_uvs.iter().position(|u| u.is_none()) {
        return Err(Error::Export(format!(
            "face {f} has no texture coordinates"
        )));
    }
    let (mtl_path, png_path) = companion_paths(path);
    let file_name = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    atlas
        .image
        .save(&png_path)
        .map_err(|e| Error::Export(format!("writing {}: {e}", png_path.display())))?;
    let mtl = format!(
        "newmtl atlas\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {}\n",
        file_name(&png_path)
    );
    std::fs::write(&mtl_path, mtl).map_err(|e| Error::io(&mtl_path, e))?;

    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "mtllib {}", file_name(&mtl_path))?;
        for v in &mesh.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for uvs in atlas.face_uvs.iter().flatten() {
            for uv in uvs {
                let t = atlas.normalized(uv);
                writeln!(w, "vt {} {}", t.x, t.y)?;
            }
        }
        writeln!(w, "usemtl atlas")?;
        for (i, f) in mesh.faces().iter().enumerate() {
            let t = 3 * i + 1;
            writeln!(
                w,
                "f {}/{} {}/{} {}/{}",
                f[0] + 1,
                t,
                f[1] + 1,
                t + 1,
                f[2] + 1,
                t + 2
            )?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Minimal reader for the OBJ files written above: positions, texture
/// coordinates and `v/vt` triangle corners (1-based in the file, 0-based
/// here).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjContents {
    pub vertices: Vec<[f64; 3]>,
    pub texcoords: Vec<[f64; 2]>,
    pub faces: Vec<[[usize; 2]; 3]>,
}

pub fn read_obj(path: &Path) -> Result<ObjContents> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = ObjContents::default();
    let mut offset = 0u64;
    for line in text.lines() {
        let bad = |m: &str| Error::format(offset, format!("{m}: {line:?}"));
        let mut it = line.split_whitespace();
        let nums = |it: std::str::SplitWhitespace| {
            it.map(|s| s.parse::<f64>()).collect::<Result<Vec<_>, _>>()
        };
        match it.next() {
            Some("v") => {
                let n = nums(it).map_err(|_| bad("bad vertex"))?;
                out.vertices.push([n[0], n[1], n[2]]);
            }
            Some("vt") => {
                let n = nums(it).map_err(|_| bad("bad texcoord"))?;
                out.texcoords.push([n[0], n[1]]);
            }
            Some("f") => {
                let corners: Vec<[usize; 2]> = it
                    .map(|c| {
                        let mut p = c
                            .split('/')
                            .map(|x| x.parse::<usize>().ok().and_then(|v| v.checked_sub(1)));
                        Some([p.next()??, p.next()??])
                    })
                    .collect::<Option<_>>()
                    .ok_or_else(|| bad("bad face"))?;
                if corners.len() != 3 {
                    return Err(bad("non-triangle face"));
                }
                out.faces.push([corners[0], corners[1], corners[2]]);
            }
            _ => {}
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::partition::clusters_from_labels;
    use crate::synth::{make_scene, SceneSpec};
    use crate::texgen::build_patches;

    #[test]
    fn writes_obj_mtl_and_atlas() {
        let s = make_scene(&SceneSpec::closed_box(Vec3::zeros(), 1.0, 0.5, 0.0));
        let clusters = clusters_from_labels(&s.mesh, &s.labels);
        let ts = build_patches(&s.mesh, &clusters, 16.0, 1).unwrap();
        let atlas = TextureAtlas::from_texels(&ts, 1);
        let dir = tempfile::tempdir().unwrap();
        let obj = dir.path().join("model.obj");
        save_textured_mesh(&s.mesh, &atlas, &obj).unwrap();
        let (mtl, png) = companion_paths(&obj);
        assert!(std::fs::read_to_string(&mtl)
            .unwrap()
            .contains("map_Kd model.png"));
        let img = image::open(&png).unwrap();
        assert_eq!(
            (img.width(), img.height()),
            (ts.atlas_width, ts.atlas_height)
        );
        let back = read_obj(&obj).unwrap();
        assert_eq!(back.vertices.len(), s.mesh.n_vertices());
        assert_eq!(back.faces.len(), s.mesh.n_faces());
        for (f, face) in back.faces.iter().enumerate() {
            for (c, corner) in face.iter().enumerate() {
                assert_eq!(corner[0], s.mesh.faces()[f][c] as usize);
                let t = back.texcoords[corner[1]];
                assert!((0.0..=1.0).contains(&t[0]) && (0.0..=1.0).contains(&t[1]));
                // v is flipped relative to atlas rows
                let px = ts.face_uvs[f].unwrap()[c];
                assert!((t[1] - (1.0 - px.y / ts.atlas_height as f64)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn face_without_uv_is_an_error() {
        let s = make_scene(&SceneSpec::closed_box(Vec3::zeros(), 1.0, 0.5, 0.0));
        let mut atlas = TextureAtlas {
            image: RgbImage::new(4, 4),
            face_uvs: vec![Some([Vec2::zeros(); 3]); s.mesh.n_faces()],
        };
        atlas.face_uvs[5] = None;
        let dir = tempfile::tempdir().unwrap();
        let err = save_textured_mesh(&s.mesh, &atlas, &dir.path().join("m.obj")).unwrap_err();
        assert!(
            matches!(&err, Error::Export(m) if m.contains("face 5")),
            "{err}"
        );
    }
}
