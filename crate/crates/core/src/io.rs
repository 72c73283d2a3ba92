//! Binary file formats: one UTF-8 JSON header line, then little-endian data.
//!
//! * `SFLD/1` fields: `B*C*H*W` float64 values, batch-major.
//! * `SNBR/1` neighborhood maps: `(lat, lon_offset)` int32 pairs, row by row.
//! * `SPRM/1` block parameters: float64 tensors in header order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attention::{Neighbor, NeighborhoodMap};
use crate::block::{AttentionMode, BlockParams, Linear};
use crate::error::{Error, Result};
use crate::field::{Field, GridSpec};
use crate::grid::GridFamily;

const MAX_HEADER: u64 = 1 << 20;

fn malformed(format: &'static str, reason: impl Into<String>) -> Error {
    Error::Malformed { format, reason: reason.into() }
}

fn read_header<T: DeserializeOwned, R: BufRead>(r: &mut R, format: &'static str, magic: &str) -> Result<T> {
    let mut line = Vec::new();
    r.by_ref().take(MAX_HEADER).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(malformed(format, "missing header line"));
    }
    line.pop();
    let value: serde_json::Value =
        serde_json::from_slice(&line).map_err(|e| malformed(format, format!("header is not JSON: {e}")))?;
    if value.get("magic").and_then(|m| m.as_str()) != Some(magic) {
        return Err(malformed(format, format!("magic is not {magic:?}")));
    }
    if value.get("version").and_then(|v| v.as_u64()) != Some(1) {
        return Err(malformed(format, "unsupported version"));
    }
    serde_json::from_value(value).map_err(|e| malformed(format, format!("bad header: {e}")))
}

fn write_header<T: Serialize, W: Write>(w: &mut W, header: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_payload<R: Read>(r: &mut R, format: &'static str, bytes: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(bytes as u64 + 1).read_to_end(&mut buf)?;
    match buf.len().cmp(&bytes) {
        std::cmp::Ordering::Less => Err(malformed(format, format!("expected {bytes} data bytes, found {}", buf.len()))),
        std::cmp::Ordering::Greater => Err(malformed(format, "trailing bytes after data")),
        std::cmp::Ordering::Equal => Ok(buf),
    }
}

fn read_f64s<R: Read>(r: &mut R, format: &'static str, count: usize) -> Result<Vec<f64>> {
    let bytes = count.checked_mul(8).ok_or_else(|| malformed(format, "size overflow"))?;
    let buf = read_payload(r, format, bytes)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GridHeader {
    family: GridFamily,
    nlat: usize,
    nlon: usize,
}

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    magic: String,
    version: u32,
    shape: [usize; 4],
    dtype: String,
    grid: GridHeader,
}

pub fn write_field<W: Write>(w: &mut W, field: &Field) -> Result<()> {
    let g = field.grid_spec();
    let header = FieldHeader {
        magic: "SFLD".into(),
        version: 1,
        shape: field.shape(),
        dtype: "f64".into(),
        grid: GridHeader { family: g.family, nlat: g.nlat, nlon: g.nlon },
    };
    write_header(w, &header)?;
    write_f64s(w, field.values())
}

pub fn read_field<R: BufRead>(r: &mut R) -> Result<Field> {
    const F: &str = "SFLD";
    let h: FieldHeader = read_header(r, F, F)?;
    if h.dtype != "f64" {
        return Err(malformed(F, format!("unsupported dtype {:?}", h.dtype)));
    }
    let [b, c, nlat, nlon] = h.shape;
    if (nlat, nlon) != (h.grid.nlat, h.grid.nlon) {
        return Err(malformed(F, "shape disagrees with grid"));
    }
    let count = [b, c, nlat, nlon]
        .iter()
        .try_fold(1usize, |acc, &x| acc.checked_mul(x))
        .ok_or_else(|| malformed(F, "size overflow"))?;
    let values = read_f64s(r, F, count)?;
    Field::from_spec(GridSpec { family: h.grid.family, nlat, nlon }, b, c, values)
}

pub fn save_field(path: impl AsRef<Path>, field: &Field) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<Field> {
    read_field(&mut BufReader::new(File::open(path)?))
}

#[derive(Serialize, Deserialize)]
struct MapHeader {
    magic: String,
    version: u32,
    /// Not part of the minimal header, but membership depends on the
    /// colatitudes, so the grid family is stored too.
    family: GridFamily,
    nlat: usize,
    nlon: usize,
    theta_cutoff: f64,
    counts: Vec<usize>,
}

pub fn write_neighborhood_map<W: Write>(w: &mut W, map: &NeighborhoodMap) -> Result<()> {
    let g = map.grid_spec();
    if g.nlat > i32::MAX as usize || g.nlon > i32::MAX as usize {
        return Err(Error::InvalidArgument("grid too large for int32 offsets".into()));
    }
    let header = MapHeader {
        magic: "SNBR".into(),
        version: 1,
        family: g.family,
        nlat: g.nlat,
        nlon: g.nlon,
        theta_cutoff: map.theta_cutoff(),
        counts: map.counts(),
    };
    write_header(w, &header)?;
    for row in map.rows() {
        for n in row {
            w.write_all(&(n.lat as i32).to_le_bytes())?;
            w.write_all(&(n.lon_offset as i32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_neighborhood_map<R: BufRead>(r: &mut R) -> Result<NeighborhoodMap> {
    const F: &str = "SNBR";
    let h: MapHeader = read_header(r, F, F)?;
    if h.counts.len() != h.nlat {
        return Err(malformed(F, format!("{} row counts for nlat={}", h.counts.len(), h.nlat)));
    }
    if !(h.theta_cutoff > 0.0 && h.theta_cutoff <= std::f64::consts::PI) {
        return Err(malformed(F, format!("cutoff {} outside (0, pi]", h.theta_cutoff)));
    }
    let total = h
        .counts
        .iter()
        .try_fold(0usize, |a, &c| a.checked_add(c))
        .and_then(|t| t.checked_mul(8))
        .ok_or_else(|| malformed(F, "size overflow"))?;
    let buf = read_payload(r, F, total)?;
    let mut pairs = buf.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap()));
    let mut rows = Vec::with_capacity(h.nlat);
    for &count in &h.counts {
        let mut row = Vec::with_capacity(count);
        for _ in 0..count {
            let (lat, off) = (pairs.next().unwrap(), pairs.next().unwrap());
            if lat < 0 || off < 0 {
                return Err(malformed(F, "negative index"));
            }
            row.push(Neighbor { lat: lat as u32, lon_offset: off as u32 });
        }
        rows.push(row);
    }
    let grid = GridSpec { family: h.family, nlat: h.nlat, nlon: h.nlon };
    NeighborhoodMap::from_rows(grid, h.theta_cutoff, rows).map_err(|e| malformed(F, e.to_string()))
}

pub fn save_neighborhood_map(path: impl AsRef<Path>, map: &NeighborhoodMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_neighborhood_map(&mut w, map)?;
    w.flush()?;
    Ok(())
}

pub fn load_neighborhood_map(path: impl AsRef<Path>) -> Result<NeighborhoodMap> {
    read_neighborhood_map(&mut BufReader::new(File::open(path)?))
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BlockHeader {
    heads: usize,
    epsilon: f64,
    mode: AttentionMode,
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    magic: String,
    version: u32,
    blocks: Vec<BlockHeader>,
}

const LINEARS: [&str; 6] = ["w_q", "w_k", "w_v", "w_o", "mlp_in", "mlp_out"];

fn linears(p: &BlockParams) -> [&Linear; 6] {
    [&p.w_q, &p.w_k, &p.w_v, &p.w_o, &p.mlp_in, &p.mlp_out]
}

/// Writes a stack of blocks: all tensor shapes in the header, then the
/// tensors of every block in header order.
pub fn write_params<W: Write>(w: &mut W, blocks: &[BlockParams]) -> Result<()> {
    let headers = blocks
        .iter()
        .map(|p| {
            let mut tensors = Vec::new();
            for (name, l) in LINEARS.iter().zip(linears(p)) {
                tensors.push(TensorHeader { name: format!("{name}.weight"), shape: vec![l.out_dim(), l.in_dim()] });
                if l.bias().is_some() {
                    tensors.push(TensorHeader { name: format!("{name}.bias"), shape: vec![l.out_dim()] });
                }
            }
            BlockHeader { heads: p.heads, epsilon: p.epsilon, mode: p.mode, tensors }
        })
        .collect();
    write_header(w, &ParamsHeader { magic: "SPRM".into(), version: 1, blocks: headers })?;
    for p in blocks {
        for l in linears(p) {
            write_f64s(w, l.weight())?;
            if let Some(b) = l.bias() {
                write_f64s(w, b)?;
            }
        }
    }
    Ok(())
}

pub fn read_params<R: BufRead>(r: &mut R) -> Result<Vec<BlockParams>> {
    const F: &str = "SPRM";
    let h: ParamsHeader = read_header(r, F, F)?;
    let mut total = 0usize;
    for t in h.blocks.iter().flat_map(|b| &b.tensors) {
        let n = t.shape.iter().try_fold(1usize, |a, &x| a.checked_mul(x));
        total = n.and_then(|n| total.checked_add(n)).ok_or_else(|| malformed(F, "size overflow"))?;
    }
    let data = read_f64s(r, F, total)?;
    let mut cursor = data.into_iter();
    let mut blocks = Vec::with_capacity(h.blocks.len());
    for bh in &h.blocks {
        let mut tensors = bh.tensors.iter().peekable();
        let mut layers = Vec::with_capacity(6);
        for name in LINEARS {
            let t = tensors.next().ok_or_else(|| malformed(F, format!("missing {name}.weight")))?;
            if t.name != format!("{name}.weight") || t.shape.len() != 2 {
                return Err(malformed(F, format!("expected {name}.weight, found {:?}", t.name)));
            }
            let (out_dim, in_dim) = (t.shape[0], t.shape[1]);
            let weight: Vec<f64> = cursor.by_ref().take(out_dim * in_dim).collect();
            let bias = match tensors.peek() {
                Some(b) if b.name == format!("{name}.bias") => {
                    if b.shape != [out_dim] {
                        return Err(malformed(F, format!("{name}.bias has shape {:?}", b.shape)));
                    }
                    tensors.next();
                    Some(cursor.by_ref().take(out_dim).collect())
                }
                _ => None,
            };
            layers.push(Linear::new(in_dim, out_dim, weight, bias).map_err(|e| malformed(F, e.to_string()))?);
        }
        if tensors.next().is_some() {
            return Err(malformed(F, "unexpected extra tensors"));
        }
        let mut it = layers.into_iter();
        let mut next = || it.next().unwrap();
        let proj = [next(), next(), next(), next()];
        let (mlp_in, mlp_out) = (next(), next());
        blocks.push(
            BlockParams::new(bh.heads, bh.epsilon, bh.mode, proj, mlp_in, mlp_out)
                .map_err(|e| malformed(F, e.to_string()))?,
        );
    }
    Ok(blocks)
}

pub fn save_params(path: impl AsRef<Path>, blocks: &[BlockParams]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(&mut w, blocks)?;
    w.flush()?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<Vec<BlockParams>> {
    read_params(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SphericalGrid;

    #[test]
    fn field_round_trip_is_bitwise() {
        let g = SphericalGrid::gaussian(3, 6).unwrap();
        let mut f = Field::from_fn(&g, 2, 2, |b, c, i, j| ((b * 7 + c * 3 + i) as f64 * 0.37 + j as f64).sin());
        f.values_mut()[0] = -0.0;
        f.values_mut()[1] = f64::MIN_POSITIVE / 4.0;
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        let back = read_field(&mut buf.as_slice()).unwrap();
        let bits = |f: &Field| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&f));
        assert_eq!(back.grid_spec(), f.grid_spec());
    }

    #[test]
    fn field_header_layout() {
        let g = SphericalGrid::equiangular(2, 4).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &Field::filled(&g, 1, 1, 1.0)).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&buf[..nl]).unwrap();
        assert_eq!(header["magic"], "SFLD");
        assert_eq!(header["shape"], serde_json::json!([1, 1, 2, 4]));
        assert_eq!(header["grid"]["family"], "equiangular");
        assert_eq!(buf.len() - nl - 1, 8 * 8);
        assert_eq!(&buf[nl + 1..nl + 9], &1.0f64.to_le_bytes());
    }

    #[test]
    fn malformed_fields_rejected() {
        let g = SphericalGrid::equiangular(2, 4).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &Field::filled(&g, 1, 1, 1.0)).unwrap();
        let truncated = &buf[..buf.len() - 1];
        assert!(matches!(read_field(&mut &truncated[..]), Err(Error::Malformed { .. })));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_field(&mut extra.as_slice()), Err(Error::Malformed { .. })));
        assert!(matches!(read_field(&mut &b"garbage"[..]), Err(Error::Malformed { .. })));
        let bad = String::from_utf8_lossy(&buf).replace("SFLD", "SFLX");
        assert!(read_field(&mut bad.as_bytes()).is_err());
    }

    #[test]
    fn map_round_trip() {
        let g = SphericalGrid::gaussian(8, 16).unwrap();
        let map = NeighborhoodMap::build(&g, 0.5).unwrap();
        let mut buf = Vec::new();
        write_neighborhood_map(&mut buf, &map).unwrap();
        assert_eq!(read_neighborhood_map(&mut buf.as_slice()).unwrap(), map);
        buf.truncate(buf.len() - 4);
        assert!(read_neighborhood_map(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn params_round_trip() {
        let blocks = vec![
            BlockParams::random(4, 2, 4.0, AttentionMode::Global, 1).unwrap(),
            BlockParams::random(4, 1, 2.0, AttentionMode::Neighborhood { theta_cutoff: 0.3 }, 2).unwrap(),
        ];
        let mut buf = Vec::new();
        write_params(&mut buf, &blocks).unwrap();
        assert_eq!(read_params(&mut buf.as_slice()).unwrap(), blocks);
        buf.pop();
        assert!(read_params(&mut buf.as_slice()).is_err());
    }
}
