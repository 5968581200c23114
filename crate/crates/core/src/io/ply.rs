//! Binary little-endian PLY for Gaussian fields and point clouds.
//!
//! Fields use the property names of the common 3DGS exporters. Values are
//! stored as `double` so a save/load round trip is exact; the reader also
//! accepts `float` and the integer scalar types.

use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;

use super::atomic_write;
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian3D, GaussianField, ParamMode};

/// Vertex columns read from or written to a PLY file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlyTable {
    pub comments: Vec<String>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl PlyTable {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |(_, c)| c.len())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_slice())
    }

    fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name)
            .ok_or_else(|| Error::format("ply", format!("missing vertex property `{name}`")))
    }

    /// Value of a `comment key value` header line.
    pub fn comment(&self, key: &str) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            let (k, v) = c.split_once(' ')?;
            (k == key).then_some(v.trim())
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let rows = self.rows();
        let mut out = Vec::new();
        out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
        for c in &self.comments {
            out.extend_from_slice(format!("comment {c}\n").as_bytes());
        }
        out.extend_from_slice(format!("element vertex {rows}\n").as_bytes());
        for (name, _) in &self.columns {
            out.extend_from_slice(format!("property double {name}\n").as_bytes());
        }
        out.extend_from_slice(b"end_header\n");
        for r in 0..rows {
            for (_, col) in &self.columns {
                out.write_f64::<LittleEndian>(col[r]).expect("write to Vec");
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut line = String::new();
        let next_line = |cur: &mut Cursor<&[u8]>, line: &mut String| -> Result<()> {
            line.clear();
            if cur.read_line(line)? == 0 {
                return Err(Error::format("ply", "header ended unexpectedly"));
            }
            Ok(())
        };
        next_line(&mut cur, &mut line)?;
        if line.trim_end() != "ply" {
            return Err(Error::format("ply", "missing `ply` magic"));
        }
        let mut table = PlyTable::default();
        let mut types: Vec<ScalarType> = Vec::new();
        let mut rows: Option<usize> = None;
        let mut in_vertex = false;
        loop {
            next_line(&mut cur, &mut line)?;
            let l = line.trim_end();
            let mut words = l.split_whitespace();
            match words.next() {
                Some("format") => {
                    if words.next() != Some("binary_little_endian") {
                        return Err(Error::format("ply", "only binary_little_endian is supported"));
                    }
                }
                Some("comment") => table.comments.push(l["comment".len()..].trim().to_string()),
                Some("obj_info") => {}
                Some("element") => {
                    let name = words.next().unwrap_or_default();
                    let count: usize = words
                        .next()
                        .and_then(|c| c.parse().ok())
                        .ok_or_else(|| Error::format("ply", "bad element count"))?;
                    if name == "vertex" {
                        in_vertex = true;
                        rows = Some(count);
                    } else if count > 0 {
                        return Err(Error::format("ply", format!("unsupported element `{name}`")));
                    } else {
                        in_vertex = false;
                    }
                }
                Some("property") if in_vertex => {
                    let ty = words.next().unwrap_or_default();
                    if ty == "list" {
                        return Err(Error::format("ply", "list properties are not supported"));
                    }
                    let name = words
                        .next()
                        .ok_or_else(|| Error::format("ply", "property without a name"))?;
                    types.push(ScalarType::parse(ty)?);
                    table.columns.push((name.to_string(), Vec::new()));
                }
                Some("property") => {}
                Some("end_header") => break,
                Some(other) => return Err(Error::format("ply", format!("unexpected header keyword `{other}`"))),
                None => {}
            }
        }
        let rows = rows.ok_or_else(|| Error::format("ply", "no vertex element"))?;
        let stride: usize = types.iter().map(|t| t.size()).sum();
        let remaining = bytes.len() - cur.position() as usize;
        if remaining < rows * stride {
            return Err(Error::format(
                "ply",
                format!("expected {} bytes of vertex data, found {remaining}", rows * stride),
            ));
        }
        for (_, col) in table.columns.iter_mut() {
            col.reserve(rows);
        }
        for _ in 0..rows {
            for (ty, (_, col)) in types.iter().zip(table.columns.iter_mut()) {
                col.push(ty.read(&mut cur)?);
            }
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            other => return Err(Error::format("ply", format!("unknown scalar type `{other}`"))),
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read(self, r: &mut impl Read) -> Result<f64> {
        Ok(match self {
            ScalarType::I8 => r.read_i8()? as f64,
            ScalarType::U8 => r.read_u8()? as f64,
            ScalarType::I16 => r.read_i16::<LittleEndian>()? as f64,
            ScalarType::U16 => r.read_u16::<LittleEndian>()? as f64,
            ScalarType::I32 => r.read_i32::<LittleEndian>()? as f64,
            ScalarType::U32 => r.read_u32::<LittleEndian>()? as f64,
            ScalarType::F32 => r.read_f32::<LittleEndian>()? as f64,
            ScalarType::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

const FIELD_COLUMNS: [&str; 26] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "f_rest_0", "f_rest_1", "f_rest_2", "f_rest_3",
    "f_rest_4", "f_rest_5", "f_rest_6", "f_rest_7", "f_rest_8", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

/// Index of `f_rest_i`: channel-major, as in the reference exporter.
fn rest_slot(k: usize, c: usize) -> usize {
    c * 3 + (k - 1)
}

pub fn field_to_table(field: &GaussianField) -> PlyTable {
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(field.len()); FIELD_COLUMNS.len()];
    for g in &field.gaussians {
        let mut row = [0.0; 26];
        row[0..3].copy_from_slice(g.position.as_slice());
        row[3..6].copy_from_slice(g.normal_raw.as_slice());
        row[6..9].copy_from_slice(&g.sh[0]);
        if field.sh_degree > 0 {
            for k in 1..4 {
                for c in 0..3 {
                    row[9 + rest_slot(k, c)] = g.sh[k][c];
                }
            }
        }
        row[18] = g.opacity_raw;
        row[19..22].copy_from_slice(g.scales_log.as_slice());
        row[22..26].copy_from_slice(&g.rotation_raw);
        for (col, v) in cols.iter_mut().zip(row) {
            col.push(v);
        }
    }
    PlyTable {
        comments: vec![
            format!("param_mode {}", field.param_mode),
            format!("sh_degree {}", field.sh_degree),
        ],
        columns: FIELD_COLUMNS.iter().map(|s| s.to_string()).zip(cols).collect(),
    }
}

pub fn field_from_table(table: &PlyTable) -> Result<GaussianField> {
    let param_mode = match table.comment("param_mode") {
        Some(m) => m.parse()?,
        None => ParamMode::Unconstrained,
    };
    let has_rest = table.column("f_rest_0").is_some();
    let sh_degree = match table.comment("sh_degree") {
        Some(d) => d
            .parse::<u8>()
            .ok()
            .filter(|d| *d <= 1)
            .ok_or_else(|| Error::format("ply", format!("bad sh_degree `{d}`")))?,
        None => u8::from(has_rest),
    };
    let get = |name: &str| table.require(name);
    let pos = [get("x")?, get("y")?, get("z")?];
    let dc = [get("f_dc_0")?, get("f_dc_1")?, get("f_dc_2")?];
    let opacity = get("opacity")?;
    let scale = [get("scale_0")?, get("scale_1")?, get("scale_2")?];
    let rot = [get("rot_0")?, get("rot_1")?, get("rot_2")?, get("rot_3")?];
    let normal = [table.column("nx"), table.column("ny"), table.column("nz")];
    let rest: Vec<Option<&[f64]>> = (0..9).map(|i| table.column(&format!("f_rest_{i}"))).collect();

    let gaussians = (0..table.rows())
        .map(|i| {
            let mut g = Gaussian3D::new(Vector3::new(pos[0][i], pos[1][i], pos[2][i]));
            g.rotation_raw = [rot[0][i], rot[1][i], rot[2][i], rot[3][i]];
            g.scales_log = Vector3::new(scale[0][i], scale[1][i], scale[2][i]);
            g.opacity_raw = opacity[i];
            for c in 0..3 {
                g.sh[0][c] = dc[c][i];
                for k in 1..4 {
                    g.sh[k][c] = rest[rest_slot(k, c)].map_or(0.0, |col| col[i]);
                }
            }
            if let [Some(x), Some(y), Some(z)] = normal {
                g.normal_raw = Vector3::new(x[i], y[i], z[i]);
            }
            g
        })
        .collect();
    let field = GaussianField::new(gaussians, param_mode, sh_degree);
    field.validate()?;
    Ok(field)
}

pub fn save_field(path: &Path, field: &GaussianField) -> Result<()> {
    atomic_write(path, &field_to_table(field).to_bytes())
}

pub fn load_field(path: &Path) -> Result<GaussianField> {
    field_from_table(&PlyTable::from_bytes(&std::fs::read(path)?)?)
}

/// Point cloud with optional normals and `[0, 1]` colors.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub colors: Option<Vec<Vector3<f64>>>,
}

pub fn points_to_table(cloud: &PointCloud) -> PlyTable {
    let mut columns = Vec::new();
    let mut push3 = |names: [&str; 3], vs: &[Vector3<f64>]| {
        for (k, name) in names.iter().enumerate() {
            columns.push((name.to_string(), vs.iter().map(|v| v[k]).collect()));
        }
    };
    push3(["x", "y", "z"], &cloud.points);
    if let Some(n) = &cloud.normals {
        push3(["nx", "ny", "nz"], n);
    }
    if let Some(c) = &cloud.colors {
        push3(["red", "green", "blue"], c);
    }
    PlyTable {
        comments: Vec::new(),
        columns,
    }
}

pub fn points_from_table(table: &PlyTable) -> Result<PointCloud> {
    let triple = |names: [&str; 3]| -> Option<Vec<Vector3<f64>>> {
        let cols = [table.column(names[0])?, table.column(names[1])?, table.column(names[2])?];
        Some((0..table.rows()).map(|i| Vector3::new(cols[0][i], cols[1][i], cols[2][i])).collect())
    };
    let points = triple(["x", "y", "z"]).ok_or_else(|| Error::format("ply", "point cloud without x, y, z"))?;
    Ok(PointCloud {
        points,
        normals: triple(["nx", "ny", "nz"]),
        colors: triple(["red", "green", "blue"]),
    })
}

pub fn save_points(path: &Path, cloud: &PointCloud) -> Result<()> {
    atomic_write(path, &points_to_table(cloud).to_bytes())
}

pub fn load_points(path: &Path) -> Result<PointCloud> {
    points_from_table(&PlyTable::from_bytes(&std::fs::read(path)?)?)
}
