//! PLY mesh reading (ascii and binary little-endian) and writing.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::TriMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar {
        name: String,
        ty: Scalar,
    },
    List {
        name: String,
        count: Scalar,
        item: Scalar,
    },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if !bytes.starts_with(b"ply") {
        return Err(Error::format(0, "missing `ply` magic"));
    }
    let mut offset = 0usize;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(Error::format(offset as u64, "unterminated header"));
        };
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::format(offset as u64, "non-utf8 header line"))?
            .trim_end_matches('\r')
            .trim();
        let line_offset = offset as u64;
        offset += nl + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("ply") | Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                encoding = Some(match toks.get(1).copied() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLe,
                    other => {
                        return Err(Error::format(
                            line_offset,
                            format!("unsupported PLY encoding {other:?}"),
                        ))
                    }
                });
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(Error::format(line_offset, "malformed element line"));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| Error::format(line_offset, "bad element count"))?;
                elements.push(Element {
                    name: toks[1].to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::format(line_offset, "property before element"))?;
                let bad = || Error::format(line_offset, format!("malformed property `{line}`"));
                if toks.get(1) == Some(&"list") {
                    if toks.len() != 5 {
                        return Err(bad());
                    }
                    el.props.push(Property::List {
                        name: toks[4].to_string(),
                        count: Scalar::parse(toks[2]).ok_or_else(bad)?,
                        item: Scalar::parse(toks[3]).ok_or_else(bad)?,
                    });
                } else {
                    if toks.len() != 3 {
                        return Err(bad());
                    }
                    el.props.push(Property::Scalar {
                        name: toks[2].to_string(),
                        ty: Scalar::parse(toks[1]).ok_or_else(bad)?,
                    });
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::format(
                    line_offset,
                    format!("unknown header keyword `{other}`"),
                ))
            }
        }
    }
    Ok(Header {
        encoding: encoding.ok_or_else(|| Error::format(0, "missing format line"))?,
        elements,
        body_offset: offset,
    })
}

/// Sequential reader over the PLY body that tracks its byte offset.
struct Body<'a> {
    bytes: &'a [u8],
    pos: usize,
    encoding: Encoding,
}

impl Body<'_> {
    fn skip_ws(&mut self) {
        if self.encoding == Encoding::Ascii {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
        }
    }

    fn read(&mut self, ty: Scalar) -> Result<f64> {
        match self.encoding {
            Encoding::BinaryLe => {
                let n = ty.size();
                if self.pos + n > self.bytes.len() {
                    return Err(Error::format(self.pos as u64, "unexpected end of file"));
                }
                let b = &self.bytes[self.pos..self.pos + n];
                self.pos += n;
                Ok(match ty {
                    Scalar::I8 => b[0] as i8 as f64,
                    Scalar::U8 => b[0] as f64,
                    Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
                    Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
                    Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
                    Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
                    Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
                    Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
                })
            }
            Encoding::Ascii => {
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                let start = self.pos;
                while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                if start == self.pos {
                    return Err(Error::format(start as u64, "unexpected end of file"));
                }
                let tok = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
                tok.parse::<f64>()
                    .map_err(|_| Error::format(start as u64, format!("invalid number `{tok}`")))
            }
        }
    }
}

/// Reads a triangle mesh from PLY bytes. Returns the mesh and the number of
/// degenerate faces dropped.
pub fn parse_ply(bytes: &[u8]) -> Result<(TriMesh, usize)> {
    let header = parse_header(bytes)?;
    let mut body = Body {
        bytes,
        pos: header.body_offset,
        encoding: header.encoding,
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &header.elements {
        match el.name.as_str() {
            "vertex" => {
                let idx = |n: &str| {
                    el.props
                        .iter()
                        .position(|p| matches!(p, Property::Scalar { name, .. } if name == n))
                };
                let (Some(ix), Some(iy), Some(iz)) = (idx("x"), idx("y"), idx("z")) else {
                    return Err(Error::format(0, "vertex element lacks x/y/z"));
                };
                vertices.reserve(el.count);
                let mut vals = vec![0.0; el.props.len()];
                for _ in 0..el.count {
                    for (k, p) in el.props.iter().enumerate() {
                        vals[k] = read_property(&mut body, p)?;
                    }
                    vertices.push(Vec3::new(vals[ix], vals[iy], vals[iz]));
                }
            }
            "face" => {
                faces.reserve(el.count);
                for _ in 0..el.count {
                    for p in &el.props {
                        match p {
                            Property::List { name, count, item }
                                if name == "vertex_indices" || name == "vertex_index" =>
                            {
                                body.skip_ws();
                                let at = body.pos as u64;
                                let n = body.read(*count)? as usize;
                                if n != 3 {
                                    return Err(Error::format(
                                        at,
                                        format!(
                                            "face with {n} vertices; only triangles are supported"
                                        ),
                                    ));
                                }
                                let mut f = [0u32; 3];
                                for slot in &mut f {
                                    let v = body.read(*item)?;
                                    if v < 0.0 || v >= vertices.len() as f64 {
                                        return Err(Error::format(
                                            body.pos as u64,
                                            format!("vertex index {v} out of range"),
                                        ));
                                    }
                                    *slot = v as u32;
                                }
                                faces.push(f);
                            }
                            other => {
                                read_property(&mut body, other)?;
                            }
                        }
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    for p in &el.props {
                        read_property(&mut body, p)?;
                    }
                }
            }
        }
    }
    let (mesh, dropped) = TriMesh::new(vertices, faces)?;
    if dropped > 0 {
        log::warn!("dropped {dropped} degenerate faces");
    }
    Ok((mesh, dropped))
}

fn read_property(body: &mut Body<'_>, p: &Property) -> Result<f64> {
    match p {
        Property::Scalar { ty, .. } => body.read(*ty),
        Property::List { count, item, .. } => {
            let n = body.read(*count)? as usize;
            for _ in 0..n {
                body.read(*item)?;
            }
            Ok(n as f64)
        }
    }
}

pub fn load_mesh(path: &Path) -> Result<(TriMesh, usize)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

/// Serializes as binary little-endian PLY with `double` coordinates, so a
/// load of the result reproduces the vertex bits exactly.
pub fn write_ply(
    mesh: &TriMesh,
    colors: Option<&[[u8; 3]]>,
    out: &mut impl Write,
) -> std::io::Result<()> {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\ncomment planeopt\n");
    h += &format!("element vertex {}\n", mesh.n_vertices());
    h += "property double x\nproperty double y\nproperty double z\n";
    if colors.is_some() {
        h += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    h += &format!("element face {}\n", mesh.n_faces());
    h += "property list uchar int vertex_indices\nend_header\n";
    out.write_all(h.as_bytes())?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v.iter() {
            out.write_all(&c.to_le_bytes())?;
        }
        if let Some(col) = colors {
            out.write_all(&col[i])?;
        }
    }
    for f in mesh.faces() {
        out.write_all(&[3u8])?;
        for &v in f {
            out.write_all(&(v as i32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    save_mesh_colored(mesh, None, path)
}

pub fn save_mesh_colored(mesh: &TriMesh, colors: Option<&[[u8; 3]]>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply(mesh, colors, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Debug dump with one color per cluster; border vertices take the color of
/// the first incident face.
pub fn save_cluster_colored(mesh: &TriMesh, path: &Path) -> Result<()> {
    let labels = mesh
        .labels()
        .ok_or_else(|| Error::Argument("mesh has no cluster labels".into()))?;
    let mut colors = vec![[128u8; 3]; mesh.n_vertices()];
    for (f, face) in mesh.faces().iter().enumerate().rev() {
        let c = cluster_color(labels[f]);
        for &v in face {
            colors[v as usize] = c;
        }
    }
    save_mesh_colored(mesh, Some(&colors), path)
}

pub fn cluster_color(id: u32) -> [u8; 3] {
    // golden-ratio hue walk
    let h = (id as f64 * 0.618_033_988_75).fract();
    let s = 0.65;
    let v = 0.95;
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE_ASCII: &str = "ply
format ascii 1.0
comment unit cube
element vertex 8
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
element face 12
property list uchar int vertex_indices
end_header
0 0 0 1 2 3
1 0 0 1 2 3
0 1 0 1 2 3
1 1 0 1 2 3
0 0 1 1 2 3
1 0 1 1 2 3
0 1 1 1 2 3
1 1 1 1 2 3
3 0 2 1
3 1 2 3
3 4 5 6
3 5 7 6
3 0 1 4
3 1 5 4
3 2 6 3
3 3 6 7
3 0 4 2
3 2 4 6
3 1 3 5
3 3 7 5
";

    #[test]
    fn ascii_cube() {
        let (m, dropped) = parse_ply(CUBE_ASCII.as_bytes()).unwrap();
        assert_eq!((m.n_vertices(), m.n_faces(), dropped), (8, 12, 0));
        assert!(m.validate().is_ok());
    }

    #[test]
    fn degenerate_face_dropped_with_count() {
        let text = CUBE_ASCII.replace("element face 12", "element face 13") + "3 3 3 5\n";
        let (m, dropped) = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(m.n_faces(), 12);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn quad_face_is_format_error() {
        let text = CUBE_ASCII.replace("element face 12", "element face 13") + "4 0 1 2 3\n";
        match parse_ply(text.as_bytes()) {
            Err(Error::Format { offset, message }) => {
                assert!(message.contains("triangles"));
                assert_eq!(offset as usize, text.rfind("4 0 1 2 3").unwrap());
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let m = crate::mesh::tests::unit_cube();
        let mut buf = Vec::new();
        write_ply(&m, None, &mut buf).unwrap();
        let cut = buf.len() - 5;
        match parse_ply(&buf[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset as usize >= cut - 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_offset() {
        let text = CUBE_ASCII.replacen("1 1 0 1 2 3", "1 zz 0 1 2 3", 1);
        match parse_ply(text.as_bytes()) {
            Err(Error::Format { offset, .. }) => {
                assert_eq!(offset as usize, text.find("zz").unwrap())
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn binary_roundtrip_is_bit_exact() {
        let mut m = crate::mesh::tests::unit_cube();
        m.vertices[3] = Vec3::new(0.1 + 0.2, std::f64::consts::PI, -1e-300);
        let mut buf = Vec::new();
        write_ply(&m, None, &mut buf).unwrap();
        let (back, _) = parse_ply(&buf).unwrap();
        assert_eq!(back.faces(), m.faces());
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            for k in 0..3 {
                assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }
}
