//! Readers and writers for meshes (PLY, OBJ), images (PFM, PNG, Radiance
//! HDR), masks (PNG) and JSON documents.
//!
//! Parsers report the byte offset at which they stopped making sense; they
//! never return partial results.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{EnvironmentMap, ImageBuffer, MaskBuffer, TriangleMesh, Vec3};
use crate::{Error, Result};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

// ---------------------------------------------------------------------------
// JSON

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| {
        // serde_json reports line/column; convert to a byte offset
        let offset = line_col_to_offset(&bytes, e.line(), e.column());
        Error::parse(offset, format!("valid JSON document ({e})"))
    })
}

fn line_col_to_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut cur_line = 1;
    for (i, &b) in bytes.iter().enumerate() {
        if cur_line == line {
            return (i + column.saturating_sub(1)).min(bytes.len());
        }
        if b == b'\n' {
            cur_line += 1;
        }
    }
    bytes.len()
}

// ---------------------------------------------------------------------------
// PLY

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

    fn name(self) -> &'static str {
        match self {
            Scalar::I8 => "char",
            Scalar::U8 => "uchar",
            Scalar::I16 => "short",
            Scalar::U16 => "ushort",
            Scalar::I32 => "int",
            Scalar::U32 => "uint",
            Scalar::F32 => "float",
            Scalar::F64 => "double",
        }
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

#[derive(Clone, Debug)]
struct PlyProperty {
    name: String,
    ty: Scalar,
    /// Count type for list properties.
    list: Option<Scalar>,
}

/// One element block of a parsed PLY file.
#[derive(Clone, Debug)]
pub struct PlyElement {
    pub name: String,
    pub count: usize,
    props: Vec<PlyProperty>,
    /// Scalar property values, one column per property (empty for lists).
    columns: Vec<Vec<f64>>,
    /// List property values, one entry per property (empty for scalars).
    lists: Vec<Vec<Vec<f64>>>,
}

impl PlyElement {
    fn prop_index(&self, name: &str) -> Option<usize> {
        self.props.iter().position(|p| p.name == name)
    }

    /// Column of a scalar property.
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let i = self.prop_index(name)?;
        if self.props[i].list.is_some() {
            return None;
        }
        Some(&self.columns[i])
    }

    /// Values of a list property.
    pub fn list(&self, name: &str) -> Option<&[Vec<f64>]> {
        let i = self.prop_index(name)?;
        self.props[i].list?;
        Some(&self.lists[i])
    }
}

/// Parsed PLY document.
#[derive(Clone, Debug)]
pub struct PlyData {
    pub format: PlyFormat,
    pub elements: Vec<PlyElement>,
}

impl PlyData {
    pub fn element(&self, name: &str) -> Option<&PlyElement> {
        self.elements.iter().find(|e| e.name == name)
    }
}

pub fn parse_ply(bytes: &[u8]) -> Result<PlyData> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let rest = &bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(bytes.len(), "newline-terminated header line ending in end_header"))?;
        *pos = start + end + 1;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::parse(start, "ASCII header line"))?
            .trim_end_matches('\r')
            .to_string();
        Ok((start, line))
    };

    let (off, magic) = next_line(&mut pos)?;
    if magic.trim() != "ply" {
        return Err(Error::parse(off, "magic line \"ply\""));
    }
    let mut format = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let (off, line) = next_line(&mut pos)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match toks.get(1).copied() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some("binary_big_endian") => PlyFormat::BinaryBigEndian,
                    _ => return Err(Error::parse(off, "format ascii|binary_little_endian|binary_big_endian")),
                });
            }
            Some("element") => {
                let (Some(name), Some(count)) = (toks.get(1), toks.get(2).and_then(|c| c.parse().ok())) else {
                    return Err(Error::parse(off, "element <name> <count>"));
                };
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                    columns: Vec::new(),
                    lists: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(off, "element declaration before property"))?;
                let prop = if toks.get(1) == Some(&"list") {
                    match (toks.get(2).and_then(|s| Scalar::parse(s)), toks.get(3).and_then(|s| Scalar::parse(s)), toks.get(4)) {
                        (Some(c), Some(t), Some(n)) => PlyProperty {
                            name: n.to_string(),
                            ty: t,
                            list: Some(c),
                        },
                        _ => return Err(Error::parse(off, "property list <count type> <item type> <name>")),
                    }
                } else {
                    match (toks.get(1).and_then(|s| Scalar::parse(s)), toks.get(2)) {
                        (Some(t), Some(n)) => PlyProperty {
                            name: n.to_string(),
                            ty: t,
                            list: None,
                        },
                        _ => return Err(Error::parse(off, "property <type> <name>")),
                    }
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some(_) => return Err(Error::parse(off, "header keyword (format, element, property, comment, end_header)")),
        }
    }
    let format = format.ok_or_else(|| Error::parse(pos, "format line in header"))?;
    for el in &mut elements {
        el.columns = vec![Vec::new(); el.props.len()];
        el.lists = vec![Vec::new(); el.props.len()];
    }

    match format {
        PlyFormat::Ascii => parse_ply_ascii(bytes, pos, &mut elements)?,
        _ => parse_ply_binary(bytes, pos, format == PlyFormat::BinaryBigEndian, &mut elements)?,
    }
    Ok(PlyData { format, elements })
}

fn parse_ply_ascii(bytes: &[u8], mut pos: usize, elements: &mut [PlyElement]) -> Result<()> {
    let next_token = |pos: &mut usize| -> Result<(usize, f64)> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::parse(start, "numeric value (file truncated)"));
        }
        let s = std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::parse(start, "ASCII number"))?;
        let v: f64 = s.parse().map_err(|_| Error::parse(start, "number"))?;
        Ok((start, v))
    };
    for el in elements.iter_mut() {
        for _ in 0..el.count {
            for (k, prop) in el.props.iter().enumerate() {
                if prop.list.is_some() {
                    let (off, n) = next_token(&mut pos)?;
                    if n < 0.0 || n.fract() != 0.0 {
                        return Err(Error::parse(off, "non-negative integer list length"));
                    }
                    let mut items = Vec::with_capacity(n as usize);
                    for _ in 0..n as usize {
                        items.push(next_token(&mut pos)?.1);
                    }
                    el.lists[k].push(items);
                } else {
                    let (_, v) = next_token(&mut pos)?;
                    el.columns[k].push(v);
                }
            }
        }
    }
    Ok(())
}

fn read_scalar(bytes: &[u8], pos: &mut usize, ty: Scalar, big: bool) -> Result<f64> {
    let n = ty.size();
    if *pos + n > bytes.len() {
        return Err(Error::parse(*pos, format!("{} bytes of {} data (file truncated)", n, ty.name())));
    }
    let mut buf = [0u8; 8];
    buf[..n].copy_from_slice(&bytes[*pos..*pos + n]);
    if big {
        buf[..n].reverse();
    }
    *pos += n;
    Ok(match ty {
        Scalar::I8 => buf[0] as i8 as f64,
        Scalar::U8 => buf[0] as f64,
        Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
        Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
        Scalar::I32 => i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
        Scalar::U32 => u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
        Scalar::F32 => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
        Scalar::F64 => f64::from_le_bytes(buf),
    })
}

fn parse_ply_binary(bytes: &[u8], mut pos: usize, big: bool, elements: &mut [PlyElement]) -> Result<()> {
    for el in elements.iter_mut() {
        for _ in 0..el.count {
            for (k, prop) in el.props.iter().enumerate() {
                if let Some(ct) = prop.list {
                    let n = read_scalar(bytes, &mut pos, ct, big)?;
                    let mut items = Vec::with_capacity(n as usize);
                    for _ in 0..n as usize {
                        items.push(read_scalar(bytes, &mut pos, prop.ty, big)?);
                    }
                    el.lists[k].push(items);
                } else {
                    el.columns[k].push(read_scalar(bytes, &mut pos, prop.ty, big)?);
                }
            }
        }
    }
    Ok(())
}

/// A vertex property to write: name, type (`Scalar` names), values.
pub struct PlyColumn<'a> {
    pub name: &'a str,
    pub ty: &'static str,
    pub values: Vec<f64>,
}

/// Writes a PLY file with one `vertex` element and an optional `face`
/// element (`list uchar int vertex_indices`).
pub fn write_ply(path: &Path, columns: &[PlyColumn], faces: Option<&[[u32; 3]]>, format: PlyFormat) -> Result<()> {
    let bytes = encode_ply(columns, faces, format)?;
    write_bytes(path, &bytes)
}

pub fn encode_ply(columns: &[PlyColumn], faces: Option<&[[u32; 3]]>, format: PlyFormat) -> Result<Vec<u8>> {
    let n = columns.first().map(|c| c.values.len()).unwrap_or(0);
    let mut types = Vec::with_capacity(columns.len());
    for c in columns {
        if c.values.len() != n {
            return Err(Error::Argument(format!("PLY column {} has wrong length", c.name)));
        }
        types.push(Scalar::parse(c.ty).ok_or_else(|| Error::Argument(format!("unknown PLY type {}", c.ty)))?);
    }
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::BinaryBigEndian => "binary_big_endian",
    };
    writeln!(out, "ply\nformat {fmt} 1.0\nelement vertex {n}").unwrap();
    for (c, t) in columns.iter().zip(&types) {
        writeln!(out, "property {} {}", t.name(), c.name).unwrap();
    }
    if let Some(f) = faces {
        writeln!(out, "element face {}\nproperty list uchar int vertex_indices", f.len()).unwrap();
    }
    writeln!(out, "end_header").unwrap();
    let big = format == PlyFormat::BinaryBigEndian;
    let put = |out: &mut Vec<u8>, v: f64, ty: Scalar| {
        let mut b: Vec<u8> = match ty {
            Scalar::I8 => vec![v as i8 as u8],
            Scalar::U8 => vec![v as u8],
            Scalar::I16 => (v as i16).to_le_bytes().to_vec(),
            Scalar::U16 => (v as u16).to_le_bytes().to_vec(),
            Scalar::I32 => (v as i32).to_le_bytes().to_vec(),
            Scalar::U32 => (v as u32).to_le_bytes().to_vec(),
            Scalar::F32 => (v as f32).to_le_bytes().to_vec(),
            Scalar::F64 => v.to_le_bytes().to_vec(),
        };
        if big {
            b.reverse();
        }
        out.extend_from_slice(&b);
    };
    for i in 0..n {
        match format {
            PlyFormat::Ascii => {
                let row: Vec<String> = columns
                    .iter()
                    .zip(&types)
                    .map(|(c, t)| match t {
                        Scalar::F32 => format!("{}", c.values[i] as f32),
                        Scalar::F64 => format!("{}", c.values[i]),
                        _ => format!("{}", c.values[i] as i64),
                    })
                    .collect();
                writeln!(out, "{}", row.join(" ")).unwrap();
            }
            _ => {
                for (c, t) in columns.iter().zip(&types) {
                    put(&mut out, c.values[i], *t);
                }
            }
        }
    }
    if let Some(faces) = faces {
        for f in faces {
            match format {
                PlyFormat::Ascii => writeln!(out, "3 {} {} {}", f[0], f[1], f[2]).unwrap(),
                _ => {
                    out.push(3);
                    for &v in f {
                        put(&mut out, v as f64, Scalar::I32);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn mesh_columns(mesh: &TriangleMesh) -> Vec<PlyColumn<'static>> {
    let comp = |f: &dyn Fn(&Vec3) -> f64, src: &[Vec3]| src.iter().map(f).collect::<Vec<f64>>();
    vec![
        PlyColumn { name: "x", ty: "double", values: comp(&|p| p.x, &mesh.positions) },
        PlyColumn { name: "y", ty: "double", values: comp(&|p| p.y, &mesh.positions) },
        PlyColumn { name: "z", ty: "double", values: comp(&|p| p.z, &mesh.positions) },
        PlyColumn { name: "nx", ty: "double", values: comp(&|p| p.x, &mesh.normals) },
        PlyColumn { name: "ny", ty: "double", values: comp(&|p| p.y, &mesh.normals) },
        PlyColumn { name: "nz", ty: "double", values: comp(&|p| p.z, &mesh.normals) },
    ]
}

pub fn save_mesh_ply(path: &Path, mesh: &TriangleMesh, format: PlyFormat) -> Result<()> {
    write_ply(path, &mesh_columns(mesh), Some(&mesh.indices), format)
}

pub fn mesh_from_ply(ply: &PlyData) -> Result<TriangleMesh> {
    let v = ply
        .element("vertex")
        .ok_or_else(|| Error::parse(0, "element vertex"))?;
    let (Some(x), Some(y), Some(z)) = (v.column("x"), v.column("y"), v.column("z")) else {
        return Err(Error::parse(0, "vertex properties x, y, z"));
    };
    let positions: Vec<Vec3> = (0..v.count).map(|i| Vec3::new(x[i], y[i], z[i])).collect();
    let mut indices = Vec::new();
    if let Some(f) = ply.element("face") {
        let lists = f
            .list("vertex_indices")
            .or_else(|| f.list("vertex_index"))
            .ok_or_else(|| Error::parse(0, "face property vertex_indices"))?;
        for poly in lists {
            if poly.len() < 3 {
                return Err(Error::parse(0, "faces with at least 3 vertices"));
            }
            // fan-triangulate polygons
            for k in 1..poly.len() - 1 {
                indices.push([poly[0] as u32, poly[k] as u32, poly[k + 1] as u32]);
            }
        }
    }
    match (v.column("nx"), v.column("ny"), v.column("nz")) {
        (Some(nx), Some(ny), Some(nz)) => {
            let normals: Vec<Vec3> = (0..v.count).map(|i| Vec3::new(nx[i], ny[i], nz[i])).collect();
            let mut mesh = TriangleMesh::new(positions, indices)?;
            // keep stored normals bit-exact
            mesh.normals = normals;
            Ok(mesh)
        }
        _ => TriangleMesh::new(positions, indices),
    }
}

pub fn load_ply(path: &Path) -> Result<PlyData> {
    parse_ply(&read_bytes(path)?)
}

// ---------------------------------------------------------------------------
// OBJ

pub fn encode_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    use std::fmt::Write as _;
    for p in &mesh.positions {
        writeln!(s, "v {} {} {}", p.x, p.y, p.z).unwrap();
    }
    for n in &mesh.normals {
        writeln!(s, "vn {} {} {}", n.x, n.y, n.z).unwrap();
    }
    for t in &mesh.indices {
        writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}", a = t[0] + 1, b = t[1] + 1, c = t[2] + 1).unwrap();
    }
    s
}

pub fn parse_obj(bytes: &[u8]) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(e.valid_up_to(), "UTF-8 text"))?;
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut vertex_normal: Vec<Option<usize>> = Vec::new();
    let mut indices = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let num = |k: usize| -> Result<f64> {
            toks.get(k)
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::parse(offset, "three numeric coordinates"))
        };
        match toks.first().copied() {
            Some("v") => {
                positions.push(Vec3::new(num(1)?, num(2)?, num(3)?));
                vertex_normal.push(None);
            }
            Some("vn") => normals.push(Vec3::new(num(1)?, num(2)?, num(3)?)),
            Some("f") => {
                let mut poly = Vec::new();
                for tok in &toks[1..] {
                    let mut parts = tok.split('/');
                    let resolve = |s: Option<&str>, n: usize| -> Result<Option<usize>> {
                        match s {
                            None | Some("") => Ok(None),
                            Some(s) => {
                                let i: i64 = s.parse().map_err(|_| Error::parse(offset, "integer face index"))?;
                                let idx = if i > 0 { i - 1 } else { n as i64 + i };
                                if idx < 0 || idx as usize >= n {
                                    return Err(Error::parse(offset, "face index within range"));
                                }
                                Ok(Some(idx as usize))
                            }
                        }
                    };
                    let vi = resolve(parts.next(), positions.len())?
                        .ok_or_else(|| Error::parse(offset, "vertex index"))?;
                    let _vt = parts.next();
                    if let Some(ni) = resolve(parts.next(), normals.len())? {
                        vertex_normal[vi] = Some(ni);
                    }
                    poly.push(vi as u32);
                }
                if poly.len() < 3 {
                    return Err(Error::parse(offset, "face with at least 3 vertices"));
                }
                for k in 1..poly.len() - 1 {
                    indices.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
        offset += line.len();
    }
    let mut mesh = TriangleMesh::new(positions, indices)?;
    if vertex_normal.iter().all(|n| n.is_some()) && !vertex_normal.is_empty() {
        mesh.normals = vertex_normal.iter().map(|n| normals[n.unwrap()]).collect();
    }
    Ok(mesh)
}

pub fn save_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    match extension(path).as_str() {
        "obj" => write_bytes(path, encode_obj(mesh).as_bytes()),
        _ => save_mesh_ply(path, mesh, PlyFormat::BinaryLittleEndian),
    }
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let bytes = read_bytes(path)?;
    match extension(path).as_str() {
        "obj" => parse_obj(&bytes),
        _ => mesh_from_ply(&parse_ply(&bytes)?),
    }
}

// ---------------------------------------------------------------------------
// PFM

/// Raw PFM payload, rows stored top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn parse_pfm(bytes: &[u8]) -> Result<Pfm> {
    let mut pos = 0usize;
    let token = |pos: &mut usize, what: &str| -> Result<(usize, String)> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::parse(start, what.to_string()));
        }
        Ok((start, String::from_utf8_lossy(&bytes[start..*pos]).into_owned()))
    };
    let (off, magic) = token(&mut pos, "PF or Pf magic")?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(Error::parse(off, "PF or Pf magic")),
    };
    let (off, w) = token(&mut pos, "image width")?;
    let width: usize = w.parse().map_err(|_| Error::parse(off, "integer width"))?;
    let (off, h) = token(&mut pos, "image height")?;
    let height: usize = h.parse().map_err(|_| Error::parse(off, "integer height"))?;
    let (off, s) = token(&mut pos, "scale")?;
    let scale: f64 = s.parse().map_err(|_| Error::parse(off, "numeric scale"))?;
    if scale == 0.0 {
        return Err(Error::parse(off, "non-zero scale"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse(pos, "single whitespace byte after scale"));
    }
    pos += 1;
    let little = scale < 0.0;
    let n = width * height * channels;
    if bytes.len() - pos < n * 4 {
        return Err(Error::parse(bytes.len(), format!("{} bytes of float raster", n * 4)));
    }
    let mut data = vec![0f32; n];
    let row = width * channels;
    for r in 0..height {
        // file rows run bottom to top
        let dst_row = height - 1 - r;
        for k in 0..row {
            let b: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
            pos += 4;
            data[dst_row * row + k] = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

pub fn encode_pfm(pfm: &Pfm) -> Vec<u8> {
    let magic = if pfm.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", pfm.width, pfm.height).into_bytes();
    let row = pfm.width * pfm.channels;
    for r in (0..pfm.height).rev() {
        for v in &pfm.data[r * row..(r + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_pfm(path: &Path, pfm: &Pfm) -> Result<()> {
    write_bytes(path, &encode_pfm(pfm))
}

pub fn load_pfm(path: &Path) -> Result<Pfm> {
    parse_pfm(&read_bytes(path)?)
}

impl From<&ImageBuffer> for Pfm {
    fn from(img: &ImageBuffer) -> Pfm {
        Pfm {
            width: img.width,
            height: img.height,
            channels: 3,
            data: img.data.iter().flatten().copied().collect(),
        }
    }
}

impl Pfm {
    pub fn into_image(self) -> Result<ImageBuffer> {
        let data = match self.channels {
            3 => self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            1 => self.data.iter().map(|&v| [v, v, v]).collect(),
            _ => return Err(Error::Argument("unsupported PFM channel count".into())),
        };
        Ok(ImageBuffer {
            width: self.width,
            height: self.height,
            data,
        })
    }
}

// ---------------------------------------------------------------------------
// PNG / HDR

pub fn srgb_to_linear(c: f32) -> f32 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f32) -> f32 {
    let c = c.clamp(0.0, 1.0);
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// Writes an 8-bit sRGB PNG for display (values clamped to [0, 1]).
pub fn save_png_srgb(path: &Path, img: &ImageBuffer) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (dst, src) in buf.pixels_mut().zip(&img.data) {
        *dst = image::Rgb(src.map(|c| (linear_to_srgb(c) * 255.0).round() as u8));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save(path)?;
    Ok(())
}

/// Reads an 8-bit PNG, decoding sRGB to linear.
pub fn load_png_linear(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(ImageBuffer {
        width: w as usize,
        height: h as usize,
        data: img
            .pixels()
            .map(|p| p.0.map(|c| srgb_to_linear(c as f32 / 255.0)))
            .collect(),
    })
}

pub fn save_mask_png(path: &Path, mask: &MaskBuffer) -> Result<()> {
    let buf = image::GrayImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        image::Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save(path)?;
    Ok(())
}

pub fn load_mask_png(path: &Path) -> Result<MaskBuffer> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(MaskBuffer {
        width: w as usize,
        height: h as usize,
        data: img.pixels().map(|p| p.0[0] >= 128).collect(),
    })
}

/// Loads a float image from PFM, Radiance HDR, or (sRGB) PNG.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    match extension(path).as_str() {
        "pfm" => load_pfm(path)?.into_image(),
        "hdr" => {
            let img = image::open(path)?.to_rgb32f();
            let (w, h) = img.dimensions();
            Ok(ImageBuffer {
                width: w as usize,
                height: h as usize,
                data: img.pixels().map(|p| p.0).collect(),
            })
        }
        _ => load_png_linear(path),
    }
}

pub fn save_image(path: &Path, img: &ImageBuffer) -> Result<()> {
    match extension(path).as_str() {
        "png" => save_png_srgb(path, img),
        _ => save_pfm(path, &Pfm::from(img)),
    }
}

pub fn load_env_map(path: &Path) -> Result<EnvironmentMap> {
    let img = load_image(path)?;
    EnvironmentMap::new(img.width, img.height, img.data)
}

pub fn save_env_map(path: &Path, env: &EnvironmentMap) -> Result<()> {
    save_pfm(
        path,
        &Pfm {
            width: env.width(),
            height: env.height(),
            channels: 3,
            data: env.texels().iter().flatten().copied().collect(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::mesh::icosphere;
    use rand::{Rng, SeedableRng};

    fn random_mesh() -> TriangleMesh {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut m = icosphere(1.0, 1);
        for p in &mut m.positions {
            *p += Vec3::new(rng.random(), rng.random(), rng.random()) * 0.1;
        }
        m.recompute_normals();
        m
    }

    #[test]
    fn ply_round_trip_all_formats() {
        let m = random_mesh();
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian, PlyFormat::BinaryBigEndian] {
            let bytes = encode_ply(&mesh_columns(&m), Some(&m.indices), fmt).unwrap();
            let back = mesh_from_ply(&parse_ply(&bytes).unwrap()).unwrap();
            assert_eq!(back, m, "{fmt:?}");
        }
    }

    #[test]
    fn obj_round_trip() {
        let m = random_mesh();
        let back = parse_obj(encode_obj(&m).as_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_ply_header_is_an_error() {
        let m = random_mesh();
        let bytes = encode_ply(&mesh_columns(&m), Some(&m.indices), PlyFormat::Ascii).unwrap();
        let cut = &bytes[..40];
        match parse_ply(cut) {
            Err(Error::Parse { offset, expected }) => {
                assert!(offset <= cut.len());
                assert!(expected.contains("end_header"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_binary_body_is_an_error() {
        let m = random_mesh();
        let bytes = encode_ply(&mesh_columns(&m), Some(&m.indices), PlyFormat::BinaryLittleEndian).unwrap();
        assert!(matches!(parse_ply(&bytes[..bytes.len() - 3]), Err(Error::Parse { .. })));
    }

    #[test]
    fn pfm_fixture_little_endian() {
        // 2x2 RGB, scale -1 (little endian); file rows bottom-to-top.
        let mut bytes = b"PF\n2 2\n-1.0\n".to_vec();
        let bottom = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let top = [0.5f32, -0.25, 7.0, 8.0, 9.0, 1e-3];
        for v in bottom.iter().chain(top.iter()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let pfm = parse_pfm(&bytes).unwrap();
        let img = pfm.into_image().unwrap();
        assert_eq!(img.get(0, 0), [0.5, -0.25, 7.0]);
        assert_eq!(img.get(1, 0), [8.0, 9.0, 1e-3]);
        assert_eq!(img.get(0, 1), [1.0, 2.0, 3.0]);
        assert_eq!(img.get(1, 1), [4.0, 5.0, 6.0]);
    }

    #[test]
    fn pfm_big_endian_and_round_trip() {
        let mut bytes = b"Pf\n1 2\n1.0\n".to_vec();
        bytes.extend_from_slice(&3.5f32.to_be_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_be_bytes());
        let pfm = parse_pfm(&bytes).unwrap();
        assert_eq!(pfm.data, vec![-2.0, 3.5]);

        let img = ImageBuffer::from_fn(3, 2, |i, j| [i as f32 * 0.1, j as f32 / 3.0, f32::MIN_POSITIVE]);
        let back = parse_pfm(&encode_pfm(&Pfm::from(&img))).unwrap().into_image().unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pfm_truncated_raster() {
        let bytes = b"PF\n2 2\n-1.0\n\0\0\0\0".to_vec();
        assert!(matches!(parse_pfm(&bytes), Err(Error::Parse { .. })));
    }

    #[test]
    fn png_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = MaskBuffer::new(5, 3);
        m.set(1, 1, true);
        m.set(4, 2, true);
        let p = dir.path().join("m.png");
        save_mask_png(&p, &m).unwrap();
        assert_eq!(load_mask_png(&p).unwrap(), m);
    }

    #[test]
    fn srgb_round_trip_8bit() {
        for k in 0..=255u32 {
            let c = k as f32 / 255.0;
            let back = (linear_to_srgb(srgb_to_linear(c)) * 255.0).round() as u32;
            assert_eq!(back, k);
        }
    }

    #[test]
    fn json_parse_error_has_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, b"{\"width\": 4,\n \"height\": }").unwrap();
        let r: Result<crate::geom::Camera> = load_json(&p);
        assert!(matches!(r, Err(Error::Parse { .. })));
    }
}
