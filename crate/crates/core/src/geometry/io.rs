//! Point cloud and mesh files: XYZ (ASCII), PLY (ASCII and binary
//! little-endian) and OBJ.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::{PointCloud, TriangleMesh, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Ply,
    Obj,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match extension(path).as_deref() {
            Some("xyz") | Some("txt") | Some("pts") => Some(CloudFormat::Xyz),
            Some("ply") => Some(CloudFormat::Ply),
            Some("obj") => Some(CloudFormat::Obj),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match extension(path).as_deref() {
            Some("obj") => Some(MeshFormat::Obj),
            Some("ply") => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

pub fn load_point_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_point_cloud(&bytes, format)
}

/// Parse a cloud from raw file contents. Point order follows the file.
pub fn read_point_cloud(bytes: &[u8], format: CloudFormat) -> Result<PointCloud> {
    let (points, normals) = match format {
        CloudFormat::Xyz => parse_xyz(bytes)?,
        CloudFormat::Ply => {
            let ply = parse_ply(bytes)?;
            (ply.vertices, ply.normals)
        }
        CloudFormat::Obj => (parse_obj(bytes)?.0, None),
    };
    if points.is_empty() {
        return Err(Error::EmptyInput("file contains no points".into()));
    }
    match normals {
        Some(n) => PointCloud::with_normals(points, n),
        None => PointCloud::new(points),
    }
}

pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (vertices, faces) = match format {
        MeshFormat::Obj => parse_obj(&bytes)?,
        MeshFormat::Ply => {
            let ply = parse_ply(&bytes)?;
            (ply.vertices, ply.faces)
        }
    };
    let mut triangles = Vec::new();
    for f in faces {
        for k in 1..f.len().saturating_sub(1) {
            let t = [f[0], f[k], f[k + 1]];
            // Collapsed faces carry no area; drop them rather than fail.
            if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                triangles.push(t);
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}

fn parse_coord(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid coordinate {tok:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite coordinate {tok:?}"),
        });
    }
    Ok(v)
}

fn as_text(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        message: "invalid UTF-8".into(),
    })
}

/// Three columns per line, or six (`x y z nx ny nz`) on every line.
fn parse_xyz(bytes: &[u8]) -> Result<(Vec<Vec3>, Option<Vec<Vec3>>)> {
    let text = as_text(bytes)?;
    let mut out = Vec::new();
    let mut normals = Vec::new();
    let mut columns = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = s.split_whitespace().collect();
        let width = *columns.get_or_insert(if toks.len() >= 6 { 6 } else { 3 });
        if toks.len() < width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} columns, found {}", toks.len()),
            });
        }
        let mut c = [0.0; 6];
        for (v, tok) in c.iter_mut().zip(&toks[..width]) {
            *v = parse_coord(tok, line)?;
        }
        out.push(Vec3::new(c[0], c[1], c[2]));
        if width == 6 {
            normals.push(Vec3::new(c[3], c[4], c[5]));
        }
    }
    Ok((out, (columns == Some(6)).then_some(normals)))
}

fn parse_obj(bytes: &[u8]) -> Result<(Vec<Vec3>, Vec<Vec<usize>>)> {
    let text = as_text(bytes)?;
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for v in &mut c {
                    let tok = toks.next().ok_or_else(|| Error::Parse {
                        line,
                        message: "vertex needs three coordinates".into(),
                    })?;
                    *v = parse_coord(tok, line)?;
                }
                verts.push(Vec3::from(c));
            }
            Some("f") => {
                let mut face = Vec::new();
                for tok in toks {
                    let head = tok.split('/').next().unwrap_or("");
                    let idx: i64 = head.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("invalid face index {tok:?}"),
                    })?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else {
                        verts.len() as i64 + idx
                    };
                    if resolved < 0 || resolved as usize >= verts.len() {
                        return Err(Error::Parse {
                            line,
                            message: format!("face index {idx} out of range"),
                        });
                    }
                    face.push(resolved as usize);
                }
                if face.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        message: "face needs at least three vertices".into(),
                    });
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    Ok((verts, faces))
}

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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => LittleEndian::read_i16(b) as f64,
            Scalar::U16 => LittleEndian::read_u16(b) as f64,
            Scalar::I32 => LittleEndian::read_i32(b) as f64,
            Scalar::U32 => LittleEndian::read_u32(b) as f64,
            Scalar::F32 => LittleEndian::read_f32(b) as f64,
            Scalar::F64 => LittleEndian::read_f64(b),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Single { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Default)]
struct PlyData {
    vertices: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    faces: Vec<Vec<usize>>,
}

fn parse_ply(bytes: &[u8]) -> Result<PlyData> {
    let err = |line: usize, message: String| Error::Parse { line, message };

    // Header is ASCII lines terminated by "end_header".
    let mut pos = 0;
    let mut line_no = 0;
    let next_line = |pos: &mut usize| -> Option<String> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |k| *pos + k);
        let s = String::from_utf8_lossy(&bytes[*pos..end]).trim_end_matches('\r').to_string();
        *pos = (end + 1).min(bytes.len());
        Some(s)
    };

    let first = next_line(&mut pos);
    line_no += 1;
    if first.as_deref().map(str::trim) != Some("ply") {
        return Err(err(1, "missing 'ply' magic".into()));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line(&mut pos).ok_or_else(|| err(line_no, "unterminated header".into()))?;
        line_no += 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => {
                return Err(err(line_no, format!("unsupported PLY format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| err(line_no, format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err(line_no, "property before element".into()))?;
                let count = Scalar::parse(c).ok_or_else(|| err(line_no, format!("bad type {c}")))?;
                let item = Scalar::parse(i).ok_or_else(|| err(line_no, format!("bad type {i}")))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count,
                    item,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err(line_no, "property before element".into()))?;
                let ty = Scalar::parse(ty).ok_or_else(|| err(line_no, format!("bad type {ty}")))?;
                el.props.push(Property::Single {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => return Err(err(line_no, format!("unrecognized header line {line:?}"))),
        }
    }
    let binary = binary.ok_or_else(|| err(line_no, "missing format line".into()))?;

    let mut data = PlyData::default();
    let body = &bytes[pos..];
    let mut cursor = 0usize;
    let text_lines: Vec<&str> = if binary {
        Vec::new()
    } else {
        as_text(body)?.lines().collect()
    };
    let mut text_row = 0usize;

    for el in &elements {
        let prop_index = |n: &str| {
            el.props.iter().position(|p| match p {
                Property::Single { name, .. } => name == n,
                _ => false,
            })
        };
        let is_vertex = el.name == "vertex";
        let xyz = [prop_index("x"), prop_index("y"), prop_index("z")];
        let nxyz = [prop_index("nx"), prop_index("ny"), prop_index("nz")];
        if is_vertex && xyz.iter().any(Option::is_none) {
            return Err(err(line_no, "vertex element lacks x, y, z".into()));
        }
        let has_normals = is_vertex && nxyz.iter().all(Option::is_some);
        let mut normals = Vec::new();

        for row in 0..el.count {
            let mut singles = vec![0.0; el.props.len()];
            let mut list: Option<Vec<usize>> = None;
            if binary {
                for (k, p) in el.props.iter().enumerate() {
                    match *p {
                        Property::Single { ty, .. } => {
                            let b = body.get(cursor..cursor + ty.size()).ok_or_else(|| {
                                err(line_no, format!("truncated {} {row}", el.name))
                            })?;
                            singles[k] = ty.read_le(b);
                            cursor += ty.size();
                        }
                        Property::List {
                            ref name,
                            count,
                            item,
                        } => {
                            let b = body.get(cursor..cursor + count.size()).ok_or_else(|| {
                                err(line_no, format!("truncated {} {row}", el.name))
                            })?;
                            let n = count.read_le(b) as usize;
                            cursor += count.size();
                            let mut vals = Vec::with_capacity(n);
                            for _ in 0..n {
                                let b = body.get(cursor..cursor + item.size()).ok_or_else(|| {
                                    err(line_no, format!("truncated {} {row}", el.name))
                                })?;
                                vals.push(item.read_le(b) as usize);
                                cursor += item.size();
                            }
                            if name == "vertex_indices" || name == "vertex_index" {
                                list = Some(vals);
                            }
                        }
                    }
                }
            } else {
                let line = line_no + text_row + 1;
                let s = text_lines
                    .get(text_row)
                    .ok_or_else(|| err(line, format!("missing {} row {row}", el.name)))?;
                text_row += 1;
                let mut toks = s.split_whitespace();
                let mut take = || {
                    toks.next()
                        .ok_or_else(|| err(line, format!("short {} row", el.name)))
                };
                for (k, p) in el.props.iter().enumerate() {
                    match p {
                        Property::Single { .. } => singles[k] = parse_coord(take()?, line)?,
                        Property::List { name, .. } => {
                            let n: usize = take()?
                                .parse()
                                .map_err(|_| err(line, "bad list length".into()))?;
                            let mut vals = Vec::with_capacity(n);
                            for _ in 0..n {
                                let t = take()?;
                                vals.push(
                                    t.parse()
                                        .map_err(|_| err(line, format!("bad index {t:?}")))?,
                                );
                            }
                            if name == "vertex_indices" || name == "vertex_index" {
                                list = Some(vals);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                let p = Vec3::new(
                    singles[xyz[0].unwrap()],
                    singles[xyz[1].unwrap()],
                    singles[xyz[2].unwrap()],
                );
                if !p.is_finite() {
                    return Err(err(line_no, format!("non-finite vertex {row}")));
                }
                data.vertices.push(p);
                if has_normals {
                    normals.push(Vec3::new(
                        singles[nxyz[0].unwrap()],
                        singles[nxyz[1].unwrap()],
                        singles[nxyz[2].unwrap()],
                    ));
                }
            } else if el.name == "face" {
                if let Some(f) = list {
                    data.faces.push(f);
                }
            }
        }
        if has_normals {
            data.normals = Some(normals);
        }
    }
    let nv = data.vertices.len();
    if let Some(bad) = data.faces.iter().flatten().find(|&&i| i >= nv) {
        return Err(err(line_no, format!("face index {bad} out of range")));
    }
    Ok(data)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_point_cloud(path: impl AsRef<Path>, points: &[Vec3], format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    match format {
        CloudFormat::Xyz => {
            for p in points {
                writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(io)?;
            }
        }
        CloudFormat::Ply => {
            write!(
                w,
                "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
                points.len()
            )
            .map_err(io)?;
            for p in points {
                writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(io)?;
            }
        }
        CloudFormat::Obj => {
            for p in points {
                writeln!(w, "v {} {} {}", p.x, p.y, p.z).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Writes `mesh`. An empty mesh still produces a file: a single comment
/// line for OBJ, a zero-count header for PLY.
pub fn write_mesh(path: impl AsRef<Path>, mesh: &TriangleMesh, format: MeshFormat) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    match format {
        MeshFormat::Obj => {
            if mesh.is_empty() {
                writeln!(w, "# empty mesh").map_err(io)?;
            }
            for v in &mesh.vertices {
                writeln!(w, "v {} {} {}", v.x, v.y, v.z).map_err(io)?;
            }
            for t in &mesh.triangles {
                writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).map_err(io)?;
            }
        }
        MeshFormat::Ply => {
            write!(
                w,
                "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
                mesh.vertices.len(),
                mesh.triangles.len()
            )
            .map_err(io)?;
            for v in &mesh.vertices {
                writeln!(w, "{} {} {}", v.x, v.y, v.z).map_err(io)?;
            }
            for t in &mesh.triangles {
                writeln!(w, "3 {} {} {}", t[0], t[1], t[2]).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Six-column ASCII: `x y z nx ny nz`.
pub fn write_normals(path: impl AsRef<Path>, points: &[Vec3], normals: &[Vec3]) -> Result<()> {
    let path = path.as_ref();
    if points.len() != normals.len() {
        return Err(Error::Shape(format!(
            "{} normals for {} points",
            normals.len(),
            points.len()
        )));
    }
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for (p, n) in points.iter().zip(normals) {
        writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z).map_err(io)?;
    }
    w.flush().map_err(io)
}
