//! Flat binary container for triplane stacks: an 8-byte magic, a
//! little-endian `u64` header length, a JSON header, then every value as a
//! little-endian `f64` in scale, plane (xy, yz, zx), row, column, channel
//! order.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{FeatureGrid, PlaneDir, Triplane, TriplaneStack};
use crate::error::{Error, Result};
use crate::io::atomic_write;

pub const CONTAINER_MAGIC: &[u8; 8] = b"NSTRIPL1";
const LAYOUT: &str = "scale,plane,row,column,channel";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackHeader {
    pub seed: u64,
    pub order: Vec<String>,
    pub layout: String,
    /// `(resolution, channels)` per scale.
    pub scales: Vec<(usize, usize)>,
}

impl StackHeader {
    fn of(stack: &TriplaneStack) -> Self {
        Self {
            seed: stack.seed,
            order: PlaneDir::ALL.iter().map(|d| d.as_str().to_string()).collect(),
            layout: LAYOUT.to_string(),
            scales: stack.scales.iter().map(|t| (t.resolution(), t.channels())).collect(),
        }
    }
}

pub fn write_stack(stack: &TriplaneStack) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&StackHeader::of(stack))?;
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.write_u64::<LittleEndian>(header.len() as u64)?;
    out.extend_from_slice(&header);
    for t in &stack.scales {
        for p in &t.planes {
            for v in &p.data {
                out.write_f64::<LittleEndian>(*v)?;
            }
        }
    }
    Ok(out)
}

pub fn read_stack(bytes: &[u8]) -> Result<TriplaneStack> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)
        .map_err(|_| Error::format("triplane", "truncated magic"))?;
    if &magic != CONTAINER_MAGIC {
        return Err(Error::format("triplane", "bad magic"));
    }
    let len = cur.read_u64::<LittleEndian>()? as usize;
    let start = cur.position() as usize;
    let json = bytes
        .get(start..start.saturating_add(len))
        .ok_or_else(|| Error::format("triplane", "truncated header"))?;
    let header: StackHeader = serde_json::from_slice(json)?;
    let order: Vec<&str> = PlaneDir::ALL.iter().map(|d| d.as_str()).collect();
    if header.order != order {
        return Err(Error::format("triplane", format!("unsupported plane order {:?}", header.order)));
    }
    if header.layout != LAYOUT {
        return Err(Error::format("triplane", format!("unsupported layout `{}`", header.layout)));
    }
    cur.set_position((start + len) as u64);
    let mut scales = Vec::with_capacity(header.scales.len());
    for &(r, c) in &header.scales {
        let n = r
            .checked_mul(r)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::format("triplane", "scale shape overflows"))?;
        if bytes.len() - (cur.position() as usize) < 3 * n * 8 {
            return Err(Error::format("triplane", "truncated plane data"));
        }
        let mut plane = || -> Result<FeatureGrid> {
            let data = (0..n).map(|_| cur.read_f64::<LittleEndian>()).collect::<std::io::Result<Vec<_>>>()?;
            FeatureGrid::from_data(r, c, data)
        };
        scales.push(Triplane::new([plane()?, plane()?, plane()?])?);
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(Error::format("triplane", "trailing bytes after plane data"));
    }
    TriplaneStack::new(header.seed, scales)
}

pub fn save_stack(path: &Path, stack: &TriplaneStack) -> Result<()> {
    atomic_write(path, &write_stack(stack)?)
}

pub fn load_stack(path: &Path) -> Result<TriplaneStack> {
    read_stack(&std::fs::read(path)?)
}

/// CSV with one row per point: `x,y,z,f0,f1,...`.
pub fn features_csv(points: &[Vector3<f64>], features: &[Vec<f64>]) -> Result<String> {
    if points.len() != features.len() {
        return Err(Error::Shape {
            expected: format!("{} feature rows", points.len()),
            actual: features.len().to_string(),
        });
    }
    let width = features.first().map_or(0, Vec::len);
    if features.iter().any(|f| f.len() != width) {
        return Err(Error::invalid("feature rows differ in width"));
    }
    let mut out = String::from("x,y,z");
    for k in 0..width {
        out.push_str(&format!(",f{k}"));
    }
    out.push('\n');
    for (p, f) in points.iter().zip(features) {
        out.push_str(&format!("{},{},{}", p.x, p.y, p.z));
        for v in f {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    Ok(out)
}
