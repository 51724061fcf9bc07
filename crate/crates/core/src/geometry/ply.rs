//! PLY reading and writing for point clouds and triangle meshes.
//!
//! Supports the `ascii` and `binary_little_endian` encodings. Vertex
//! properties understood: `x y z` (required), `red green blue` (uchar 0–255
//! or float 0–1), and `timestamp` (seconds). Faces use a `vertex_indices`
//! (or `vertex_index`) list; polygons are fan-triangulated. Unknown
//! properties and elements are skipped.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{GeometryError, PointCloud, Result, TriangleMesh};
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
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
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(err(format!("unknown scalar type {other}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Everything this module extracts from a PLY file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub colors: Option<Vec<[f64; 3]>>,
    pub timestamps: Option<Vec<f64>>,
    pub faces: Vec<[usize; 3]>,
}

fn err(msg: impl Into<String>) -> GeometryError {
    GeometryError::Ply(msg.into())
}

enum Values<'a> {
    Ascii(std::vec::IntoIter<String>, &'a mut dyn BufRead),
    Binary(&'a mut dyn Read),
}

impl Values<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64> {
        match self {
            Values::Ascii(tokens, reader) => loop {
                if let Some(t) = tokens.next() {
                    return t.parse::<f64>().map_err(|_| err(format!("bad number {t:?}")));
                }
                let mut line = String::new();
                if reader.read_line(&mut line)? == 0 {
                    return Err(err("unexpected end of ascii body"));
                }
                *tokens = line.split_whitespace().map(str::to_owned).collect::<Vec<_>>().into_iter();
            },
            Values::Binary(r) => {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf[..ty.size()]).map_err(|_| err("unexpected end of binary body"))?;
                Ok(ty.decode(&buf))
            }
        }
    }
}

pub fn read<R: Read>(reader: R) -> Result<PlyData> {
    let mut reader = BufReader::new(reader);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(err("missing ply magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(err("header not terminated"));
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, _] => return Err(err(format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| err("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => elements
                .last_mut()
                .ok_or_else(|| err("property before element"))?
                .props
                .push(Property::List { name: name.to_string(), count: Scalar::parse(count)?, item: Scalar::parse(item)? }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| err("property before element"))?
                .props
                .push(Property::Scalar { name: name.to_string(), ty: Scalar::parse(ty)? }),
            ["end_header"] => break,
            _ => return Err(err(format!("bad header line {:?}", line.trim()))),
        }
    }
    let format = format.ok_or_else(|| err("missing format line"))?;
    let mut values = match format {
        PlyFormat::Ascii => Values::Ascii(Vec::new().into_iter(), &mut reader),
        PlyFormat::BinaryLittleEndian => Values::Binary(&mut reader),
    };
    let mut data = PlyData::default();
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let has = |n: &str| el.props.iter().any(|p| matches!(p, Property::Scalar { name, .. } if name == n));
        if is_vertex {
            if !(has("x") && has("y") && has("z")) {
                return Err(err("vertex element lacks x/y/z"));
            }
            if has("red") && has("green") && has("blue") {
                data.colors = Some(Vec::with_capacity(el.count));
            }
            if has("timestamp") {
                data.timestamps = Some(Vec::with_capacity(el.count));
            }
        }
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            let mut rgb = [0.0; 3];
            let mut ts = 0.0;
            for prop in &el.props {
                match prop {
                    Property::Scalar { name, ty } => {
                        let v = values.next(*ty)?;
                        if !is_vertex {
                            continue;
                        }
                        let color = |v: f64| match ty {
                            Scalar::F32 | Scalar::F64 => v,
                            _ => v / 255.0,
                        };
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            "red" => rgb[0] = color(v),
                            "green" => rgb[1] = color(v),
                            "blue" => rgb[2] = color(v),
                            "timestamp" => ts = v,
                            _ => {}
                        }
                    }
                    Property::List { name, count, item } => {
                        let n = values.next(*count)? as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(values.next(*item)?);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            if n < 3 {
                                return Err(err("face with fewer than 3 vertices"));
                            }
                            for k in 1..n - 1 {
                                data.faces.push([idx[0] as usize, idx[k] as usize, idx[k + 1] as usize]);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                data.vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                if let Some(c) = data.colors.as_mut() {
                    c.push(rgb);
                }
                if let Some(t) = data.timestamps.as_mut() {
                    t.push(ts);
                }
            }
        }
    }
    Ok(data)
}

pub fn read_file(path: &Path) -> Result<PlyData> {
    let file = std::fs::File::open(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    read(file)
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let data = read_file(path)?;
    TriangleMesh::new(data.vertices, data.faces)
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let data = read_file(path)?;
    Ok(PointCloud { points: data.vertices, colors: data.colors, timestamps: data.timestamps })
}

/// Writes vertices (with optional colors and timestamps) and faces.
pub fn write<W: Write>(mut w: W, data: &PlyData, format: PlyFormat) -> Result<()> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0\nelement vertex {}", data.vertices.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if data.colors.is_some() {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    if data.timestamps.is_some() {
        writeln!(w, "property double timestamp")?;
    }
    if !data.faces.is_empty() {
        writeln!(w, "element face {}\nproperty list uchar int vertex_indices", data.faces.len())?;
    }
    writeln!(w, "end_header")?;
    let to_u8 = |c: f64| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
    for (i, v) in data.vertices.iter().enumerate() {
        let rgb = data.colors.as_ref().map(|c| c[i].map(to_u8));
        let ts = data.timestamps.as_ref().map(|t| t[i]);
        match format {
            PlyFormat::Ascii => {
                write!(w, "{:?} {:?} {:?}", v.x, v.y, v.z)?;
                if let Some(c) = rgb {
                    write!(w, " {} {} {}", c[0], c[1], c[2])?;
                }
                if let Some(t) = ts {
                    write!(w, " {t:?}")?;
                }
                writeln!(w)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for c in v.iter() {
                    w.write_all(&c.to_le_bytes())?;
                }
                if let Some(c) = rgb {
                    w.write_all(&c)?;
                }
                if let Some(t) = ts {
                    w.write_all(&t.to_le_bytes())?;
                }
            }
        }
    }
    for f in &data.faces {
        match format {
            PlyFormat::Ascii => writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?,
            PlyFormat::BinaryLittleEndian => {
                w.write_all(&[3u8])?;
                for &i in f {
                    w.write_all(&(i as i32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_file(path: &Path, data: &PlyData, format: PlyFormat) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write(&mut w, data, format)?;
    w.flush()?;
    Ok(())
}

pub fn write_mesh(path: &Path, mesh: &TriangleMesh, format: PlyFormat) -> Result<()> {
    let data = PlyData { vertices: mesh.vertices.clone(), faces: mesh.triangles.clone(), ..Default::default() };
    write_file(path, &data, format)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let data = PlyData {
        vertices: cloud.points.clone(),
        colors: cloud.colors.clone(),
        timestamps: cloud.timestamps.clone(),
        faces: Vec::new(),
    };
    write_file(path, &data, format)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reads_float_ascii_with_quads_and_extra_props() {
        let text = "ply\nformat ascii 1.0\ncomment test\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 1\n1 0 0 1\n1 1 0 1\n0 1 0 1\n4 0 1 2 3\n";
        let d = read(text.as_bytes()).unwrap();
        assert_eq!(d.vertices.len(), 4);
        assert_eq!(d.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(d.colors.is_none());
    }

    #[test]
    fn rejects_garbage() {
        assert!(read("plx\n".as_bytes()).is_err());
        assert!(read("ply\nformat binary_big_endian 1.0\nend_header\n".as_bytes()).is_err());
        assert!(read("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_both_encodings(pts in proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64, 0u8..=255, 0.0..100.0f64), 3..30), binary: bool) {
            let data = PlyData {
                vertices: pts.iter().map(|p| Vec3::new(p.0, p.1, p.2)).collect(),
                colors: Some(pts.iter().map(|p| [p.3 as f64 / 255.0; 3]).collect()),
                timestamps: Some(pts.iter().map(|p| p.4).collect()),
                faces: vec![[0, 1, 2]],
            };
            let fmt = if binary { PlyFormat::BinaryLittleEndian } else { PlyFormat::Ascii };
            let mut buf = Vec::new();
            write(&mut buf, &data, fmt).unwrap();
            let back = read(buf.as_slice()).unwrap();
            prop_assert_eq!(back, data);
        }
    }
}
