//! Binary file formats. All integers and floats are little-endian.
//!
//! Model file (`RIAN`, version 1):
//!
//! | field        | type              |
//! |--------------|-------------------|
//! | magic        | `b"RIAN"`         |
//! | version      | u16 = 1           |
//! | n            | u32               |
//! | patch_w      | u16               |
//! | patch_h      | u16               |
//! | channels     | u8                |
//! | metric_id    | u8                |
//! | refs         | n × dim × f32     |
//! | sorted_dist  | n × n × f32       |
//! | sorted_idx   | n × n × u32       |
//!
//! Field stream (`ANNF`, version 1): magic `b"ANNF"`, version u16 = 1,
//! grid_w u32, grid_h u32, patch_w u16, patch_h u16, frame_count u32, then
//! for each frame `grid_w × grid_h` u32 indices followed by as many f32
//! distances, both row-major.

use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::engine::AnnField;
use crate::error::{Error, Result};
use crate::model::ReferenceModel;
use crate::patch::{MetricKind, PatchShape};

pub const MODEL_MAGIC: &[u8; 4] = b"RIAN";
pub const FIELD_MAGIC: &[u8; 4] = b"ANNF";
pub const VERSION: u16 = 1;

const MODEL_HEADER_LEN: usize = 4 + 2 + 4 + 2 + 2 + 1 + 1;
const FIELD_HEADER_LEN: usize = 4 + 2 + 4 + 4 + 2 + 2 + 4;
const FRAME_COUNT_OFFSET: u64 = (FIELD_HEADER_LEN - 4) as u64;

pub fn serialize_model(model: &ReferenceModel) -> Vec<u8> {
    let n = model.n();
    let mut out = Vec::with_capacity(MODEL_HEADER_LEN + 4 * (n * model.dim() + 2 * n * n));
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(model.shape.width as u16).to_le_bytes());
    out.extend_from_slice(&(model.shape.height as u16).to_le_bytes());
    out.push(model.shape.channels as u8);
    out.push(model.metric.id());
    for v in model.references() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in model.sorted_dist() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in model.sorted_idx() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated: need {} bytes at offset {}, have {}", len, self.pos, self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u32s(&mut self, count: usize) -> Result<Vec<u32>> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn check_magic(c: &mut Cursor<'_>, magic: &[u8; 4]) -> Result<()> {
    let got = c.take(4)?;
    if got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(got),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    Ok(())
}

pub fn deserialize_model(bytes: &[u8]) -> Result<ReferenceModel> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    check_magic(&mut c, MODEL_MAGIC)?;
    let n = c.u32()? as usize;
    let shape = PatchShape { width: c.u16()? as usize, height: c.u16()? as usize, channels: c.u8()? as usize };
    let metric_id = c.u8()?;
    let metric =
        MetricKind::from_id(metric_id).ok_or_else(|| Error::Format(format!("unknown metric id {metric_id}")))?;
    if n == 0 || shape.dim() == 0 {
        return Err(Error::Format("empty model".into()));
    }
    let expected = (n as u64) * (shape.dim() as u64 + 2 * n as u64) * 4;
    let payload = (bytes.len() - MODEL_HEADER_LEN) as u64;
    if payload < expected {
        return Err(Error::Format(format!(
            "truncated: header declares n = {n} needing {expected} payload bytes, file has {payload}"
        )));
    }
    if payload > expected {
        return Err(Error::Format(format!("{} trailing bytes after model payload", payload - expected)));
    }
    let refs = c.f32s(n * shape.dim())?;
    let sorted_dist = c.f32s(n * n)?;
    let sorted_idx = c.u32s(n * n)?;
    if let Some(&bad) = sorted_idx.iter().find(|&&i| i as usize >= n) {
        return Err(Error::Format(format!("sorted index {bad} out of range for n = {n}")));
    }
    Ok(ReferenceModel::from_parts(shape, metric, n, refs, sorted_dist, sorted_idx))
}

pub fn write_model(path: impl AsRef<Path>, model: &ReferenceModel) -> Result<()> {
    std::fs::write(path, serialize_model(model))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ReferenceModel> {
    deserialize_model(&std::fs::read(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldHeader {
    pub grid_w: u32,
    pub grid_h: u32,
    pub patch_w: u16,
    pub patch_h: u16,
    pub frame_count: u32,
}

impl FieldHeader {
    fn encode(&self) -> [u8; FIELD_HEADER_LEN] {
        let mut out = [0u8; FIELD_HEADER_LEN];
        out[0..4].copy_from_slice(FIELD_MAGIC);
        out[4..6].copy_from_slice(&VERSION.to_le_bytes());
        out[6..10].copy_from_slice(&self.grid_w.to_le_bytes());
        out[10..14].copy_from_slice(&self.grid_h.to_le_bytes());
        out[14..16].copy_from_slice(&self.patch_w.to_le_bytes());
        out[16..18].copy_from_slice(&self.patch_h.to_le_bytes());
        out[18..22].copy_from_slice(&self.frame_count.to_le_bytes());
        out
    }
}

/// Streams fields to an `ANNF` file, patching the frame count on [`finish`](Self::finish).
pub struct AnnfWriter<W: Write + Seek> {
    inner: W,
    header: FieldHeader,
}

impl<W: Write + Seek> AnnfWriter<W> {
    pub fn new(mut inner: W, grid_w: usize, grid_h: usize, shape: PatchShape) -> Result<Self> {
        let header = FieldHeader {
            grid_w: grid_w as u32,
            grid_h: grid_h as u32,
            patch_w: shape.width as u16,
            patch_h: shape.height as u16,
            frame_count: 0,
        };
        inner.write_all(&header.encode())?;
        Ok(AnnfWriter { inner, header })
    }

    pub fn write_field(&mut self, field: &AnnField) -> Result<()> {
        if field.width != self.header.grid_w as usize || field.height != self.header.grid_h as usize {
            return Err(Error::Dimension(format!(
                "field {}x{} does not match stream grid {}x{}",
                field.width, field.height, self.header.grid_w, self.header.grid_h
            )));
        }
        let mut buf = Vec::with_capacity(field.len() * 8);
        for i in &field.indices {
            buf.extend_from_slice(&i.to_le_bytes());
        }
        for d in &field.distances {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        self.header.frame_count += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> u32 {
        self.header.frame_count
    }

    pub fn finish(mut self) -> Result<W> {
        let end = self.inner.stream_position()?;
        self.inner.seek(SeekFrom::Start(FRAME_COUNT_OFFSET))?;
        self.inner.write_all(&self.header.frame_count.to_le_bytes())?;
        self.inner.seek(SeekFrom::Start(end))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// A fully decoded `ANNF` file. Frames are numbered from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldStreamFile {
    pub header: FieldHeader,
    pub fields: Vec<AnnField>,
}

pub fn decode_fields(bytes: &[u8]) -> Result<FieldStreamFile> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    check_magic(&mut c, FIELD_MAGIC)?;
    let header =
        FieldHeader { grid_w: c.u32()?, grid_h: c.u32()?, patch_w: c.u16()?, patch_h: c.u16()?, frame_count: c.u32()? };
    let cells = header.grid_w as usize * header.grid_h as usize;
    let mut fields = Vec::with_capacity(header.frame_count as usize);
    for t in 0..header.frame_count {
        let indices = c.u32s(cells)?;
        let distances = c.f32s(cells)?;
        fields.push(AnnField {
            width: header.grid_w as usize,
            height: header.grid_h as usize,
            indices,
            distances,
            frame_t: t as u64 + 1,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {} frames",
            bytes.len() - c.pos,
            header.frame_count
        )));
    }
    Ok(FieldStreamFile { header, fields })
}

pub fn read_fields(mut reader: impl Read) -> Result<FieldStreamFile> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode_fields(&bytes)
}

/// Encode a whole sequence of fields in memory.
pub fn encode_fields(fields: &[AnnField], shape: PatchShape) -> Result<Vec<u8>> {
    let (w, h) = fields.first().map_or((0, 0), |f| (f.width, f.height));
    let mut writer = AnnfWriter::new(std::io::Cursor::new(Vec::new()), w, h, shape)?;
    for f in fields {
        writer.write_field(f)?;
    }
    Ok(writer.finish()?.into_inner())
}
