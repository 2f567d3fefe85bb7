//! Binary APR files and raw volume files. Layouts are documented in
//! `docs/FORMATS.md`; all integers and floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::access::{grid_dims, LinearAccess};
use crate::apr::{Apr, ParticleValues};
use crate::build::BuildParams;
use crate::error::{Error, Result};
use crate::gradient::{GradientPolicy, SigmaPolicy};
use crate::tree::fill_tree;
use crate::volume::{Dims, PixelVolume};

pub const APR_MAGIC: &[u8; 4] = b"APRB";
pub const APR_VERSION: u8 = 1;
pub const RAW_MAGIC: &str = "APRKIT-RAW 1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("not an APR file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("file truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("header inconsistent: {0}")]
    Header(String),
    #[error("raw volume header: {0}")]
    RawHeader(String),
    #[error("raw volume payload has {found} bytes, header declares {expected}")]
    RawSize { expected: usize, found: usize },
}

/// An APR file: structure, leaf values and tree values.
#[derive(Debug, Clone, PartialEq)]
pub struct AprFile {
    pub apr: Apr,
    pub values: ParticleValues,
    pub tree_values: ParticleValues,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64s(&mut self, v: &[u64]) {
        v.iter().for_each(|&x| self.u64(x));
    }
    fn u16s(&mut self, v: &[u16]) {
        v.iter().for_each(|&x| self.buf.extend_from_slice(&x.to_le_bytes()));
    }
    fn f32s(&mut self, v: &[f32]) {
        v.iter().for_each(|&x| self.buf.extend_from_slice(&x.to_le_bytes()));
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.data.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated { offset: self.pos, needed: n, available }.into());
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn count(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()?;
        // Reject counts that cannot fit in the remaining bytes before allocating.
        let available = self.data.len() - self.pos;
        match usize::try_from(n).ok().and_then(|n| n.checked_mul(elem)) {
            Some(b) if b <= available => Ok(n as usize),
            _ => Err(FormatError::Truncated { offset: self.pos, needed: (n as usize).saturating_mul(elem), available }.into()),
        }
    }
    fn u64s(&mut self, n: usize) -> Result<Vec<u64>> {
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn u16s(&mut self, n: usize) -> Result<Vec<u16>> {
        Ok(self.take(n * 2)?.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn header_err(msg: impl Into<String>) -> Error {
    FormatError::Header(msg.into()).into()
}

fn write_params(w: &mut Writer, p: Option<&BuildParams>) {
    let Some(p) = p else {
        w.u8(0);
        return;
    };
    w.u8(1);
    w.f64(p.error_bound);
    match p.sigma {
        SigmaPolicy::Constant(s) => {
            w.u8(0);
            w.f64(s);
            w.u32(0);
        }
        SigmaPolicy::LocalRange { window_radius, floor } => {
            w.u8(1);
            w.f64(floor.unwrap_or(f64::NAN));
            w.u32(window_radius as u32);
        }
    }
    w.u8(match p.gradient {
        GradientPolicy::CentralDiff => 0,
        GradientPolicy::Sobel => 1,
    });
    w.u32(p.smoothing_passes as u32);
}

fn read_params(r: &mut Reader<'_>) -> Result<Option<BuildParams>> {
    match r.u8()? {
        0 => return Ok(None),
        1 => {}
        f => return Err(header_err(format!("bad params flag {f}"))),
    }
    let error_bound = r.f64()?;
    let kind = r.u8()?;
    let value = r.f64()?;
    let radius = r.u32()? as usize;
    let sigma = match kind {
        0 => SigmaPolicy::Constant(value),
        1 => SigmaPolicy::LocalRange { window_radius: radius, floor: if value.is_nan() { None } else { Some(value) } },
        k => return Err(header_err(format!("bad sigma policy {k}"))),
    };
    let gradient = match r.u8()? {
        0 => GradientPolicy::CentralDiff,
        1 => GradientPolicy::Sobel,
        g => return Err(header_err(format!("bad gradient policy {g}"))),
    };
    let smoothing_passes = r.u32()? as usize;
    Ok(Some(BuildParams { error_bound, sigma, gradient, smoothing_passes }))
}

fn write_access(w: &mut Writer, a: &LinearAccess) {
    w.u8(a.l_min() as u8);
    w.u8(a.l_max() as u8);
    for l in a.levels() {
        let d = a.level_dims(l);
        w.u64s(&[d.z as u64, d.x as u64, d.y as u64]);
    }
    w.u64(a.level_offset().len() as u64);
    w.u64(a.xz_end().len() as u64);
    w.u64(a.y_idx().len() as u64);
    w.u64s(a.level_offset());
    w.u64s(a.xz_end());
    w.u16s(a.y_idx());
}

fn read_access(r: &mut Reader<'_>, pixel_dims: Dims, pixel_level: usize) -> Result<LinearAccess> {
    let l_min = r.u8()? as usize;
    let l_max = r.u8()? as usize;
    if l_min > l_max || l_max > pixel_level {
        return Err(header_err(format!("levels {l_min}..={l_max} with pixel level {pixel_level}")));
    }
    for l in l_min..=l_max {
        let d = Dims::new(r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
        let want = grid_dims(pixel_dims, pixel_level, l);
        if d != want {
            return Err(header_err(format!("level {l} dims {d}, expected {want}")));
        }
    }
    let n_off = r.count(8)?;
    let n_rows = r.count(8)?;
    let n_y = r.count(2)?;
    let level_offset = r.u64s(n_off)?;
    let xz_end = r.u64s(n_rows)?;
    let y_idx = r.u16s(n_y)?;
    Ok(LinearAccess::from_parts(l_min, l_max, pixel_level, pixel_dims, y_idx, xz_end, level_offset))
}

/// Fixed header bytes: magic, version, pixel dims.
const PREFIX_BYTES: u64 = 4 + 1 + 3 * 8;

/// Bytes of everything in an APR file other than the three arrays of each
/// access structure and the two value blocks.
pub fn header_bytes(apr: &Apr) -> u64 {
    let params = match apr.params() {
        None => 1,
        Some(_) => 1 + 8 + 1 + 8 + 4 + 1 + 4,
    };
    let access_header = |a: &LinearAccess| 2 + 24 * (a.l_max() + 1 - a.l_min()) as u64 + 3 * 8;
    PREFIX_BYTES + params + access_header(apr.access()) + 8 + access_header(apr.tree()) + 8
}

/// Serialize an APR with its leaf and tree values.
pub fn encode_apr(apr: &Apr, values: &[f32], tree_values: &[f32]) -> Result<Vec<u8>> {
    crate::apr::check_len(apr.access(), values.len())?;
    if tree_values.len() != apr.num_tree_nodes() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} tree values", apr.num_tree_nodes()),
            found: tree_values.len().to_string(),
        });
    }
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(APR_MAGIC);
    w.u8(APR_VERSION);
    let d = apr.dims();
    w.u64s(&[d.z as u64, d.x as u64, d.y as u64]);
    write_params(&mut w, apr.params());
    write_access(&mut w, apr.access());
    w.u64(values.len() as u64);
    w.f32s(values);
    write_access(&mut w, apr.tree());
    w.u64(tree_values.len() as u64);
    w.f32s(tree_values);
    Ok(w.buf)
}

/// Parse and validate an APR file image.
pub fn decode_apr(data: &[u8]) -> Result<AprFile> {
    let mut r = Reader { data, pos: 0 };
    if data.len() < 4 || &data[..4] != APR_MAGIC {
        return Err(FormatError::BadMagic.into());
    }
    r.take(4)?;
    let version = r.u8()?;
    if version != APR_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let dims = Dims::new(r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
    if dims.is_empty() {
        return Err(header_err(format!("empty volume {dims}")));
    }
    let (_, l_max) = crate::access::level_bounds(dims);
    let params = read_params(&mut r)?;
    let access = read_access(&mut r, dims, l_max)?;
    let n = r.count(4)?;
    let values = r.f32s(n)?;
    let tree = read_access(&mut r, dims, l_max)?;
    let nt = r.count(4)?;
    let tree_values = r.f32s(nt)?;
    if r.pos != data.len() {
        return Err(FormatError::TrailingBytes(data.len() - r.pos).into());
    }
    if access.l_max() != l_max {
        return Err(header_err(format!("leaf l_max {} but dims imply {l_max}", access.l_max())));
    }
    if n != access.num_particles() || nt != tree.num_particles() {
        return Err(header_err("value counts do not match the access structures"));
    }
    let apr = Apr::from_parts(access, tree, params);
    apr.validate()?;
    Ok(AprFile { apr, values: ParticleValues::new(values), tree_values: ParticleValues::new(tree_values) })
}

/// Write an APR and its values; tree values are computed from `values`.
pub fn write_apr(path: impl AsRef<Path>, apr: &Apr, values: &[f32]) -> Result<()> {
    let tree = fill_tree(apr, values)?;
    let bytes = encode_apr(apr, values, &tree)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_apr(path: impl AsRef<Path>) -> Result<(Apr, ParticleValues)> {
    let f = read_apr_file(path)?;
    Ok((f.apr, f.values))
}

pub fn read_apr_file(path: impl AsRef<Path>) -> Result<AprFile> {
    decode_apr(&fs::read(path)?)
}

/// Element type of a raw volume payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    U8,
    U16,
    F32,
}

impl ElementType {
    pub fn size(self) -> usize {
        match self {
            ElementType::U8 => 1,
            ElementType::U16 => 2,
            ElementType::F32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementType::U8 => "u8",
            ElementType::U16 => "u16",
            ElementType::F32 => "f32",
        }
    }
}

impl std::str::FromStr for ElementType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(ElementType::U8),
            "u16" => Ok(ElementType::U16),
            "f32" => Ok(ElementType::F32),
            _ => Err(FormatError::RawHeader(format!("unknown element type '{s}'")).into()),
        }
    }
}

/// Serialize a volume. Integer element types require every value to be an
/// exactly representable integer.
pub fn encode_volume(v: &PixelVolume, elem: ElementType) -> Result<Vec<u8>> {
    let d = v.dims();
    let mut out = format!("{RAW_MAGIC}\ndims {} {} {}\ndtype {}\nendian little\n\n", d.z, d.x, d.y, elem.name()).into_bytes();
    out.reserve(d.len() * elem.size());
    let max = match elem {
        ElementType::U8 => f32::from(u8::MAX),
        ElementType::U16 => f32::from(u16::MAX),
        ElementType::F32 => f32::INFINITY,
    };
    for &x in v.values() {
        if elem != ElementType::F32 && !(x >= 0.0 && x <= max && x.fract() == 0.0) {
            return Err(Error::param(format!("value {x} is not representable as {}", elem.name())));
        }
        match elem {
            ElementType::U8 => out.push(x as u8),
            ElementType::U16 => out.extend_from_slice(&(x as u16).to_le_bytes()),
            ElementType::F32 => out.extend_from_slice(&x.to_le_bytes()),
        }
    }
    Ok(out)
}

/// Parse a raw volume. Returns the volume (as `f32`) and the stored type.
pub fn decode_volume(data: &[u8]) -> Result<(PixelVolume, ElementType)> {
    let raw = |m: &str| -> Error { FormatError::RawHeader(m.to_string()).into() };
    let end = data.windows(2).position(|w| w == b"\n\n").ok_or_else(|| raw("missing blank line after header"))?;
    let header = std::str::from_utf8(&data[..end]).map_err(|_| raw("header is not UTF-8"))?;
    let payload = &data[end + 2..];
    let mut lines = header.lines();
    if lines.next() != Some(RAW_MAGIC) {
        return Err(raw("missing magic line"));
    }
    let (mut dims, mut elem, mut endian) = (None, None, None);
    for line in lines {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("dims") => {
                let v: Vec<usize> = parts
                    .map(|p| p.parse().map_err(|_| raw(&format!("bad dimension '{p}'"))))
                    .collect::<Result<_>>()?;
                if v.len() != 3 {
                    return Err(raw("dims needs three values"));
                }
                dims = Some(Dims::new(v[0], v[1], v[2]));
            }
            Some("dtype") => elem = Some(parts.next().ok_or_else(|| raw("dtype needs a value"))?.parse::<ElementType>()?),
            Some("endian") => endian = parts.next().map(str::to_string),
            Some(k) => return Err(raw(&format!("unknown header key '{k}'"))),
            None => {}
        }
    }
    let dims = dims.ok_or_else(|| raw("missing dims"))?;
    let elem = elem.ok_or_else(|| raw("missing dtype"))?;
    if endian.as_deref() != Some("little") {
        return Err(raw("byte order must be 'endian little'"));
    }
    let expected = dims.len() * elem.size();
    if payload.len() != expected {
        return Err(FormatError::RawSize { expected, found: payload.len() }.into());
    }
    let values: Vec<f32> = match elem {
        ElementType::U8 => payload.iter().map(|&b| f32::from(b)).collect(),
        ElementType::U16 => payload.chunks_exact(2).map(|c| f32::from(u16::from_le_bytes([c[0], c[1]]))).collect(),
        ElementType::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Ok((PixelVolume::new(dims, values)?, elem))
}

pub fn write_volume(path: impl AsRef<Path>, v: &PixelVolume, elem: ElementType) -> Result<()> {
    fs::write(path, encode_volume(v, elem)?)?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<PixelVolume> {
    Ok(decode_volume(&fs::read(path)?)?.0)
}
