//! FQNT v1: packed quantized models.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! header   "FQNT" | version u16 | layer_count u32
//! record   body_len u32 | body | crc32(body) u32
//! body     name_len u16 | name utf8
//!          frame_out | frame_in          (k u32, rho u32, d u32, rotated u8, seed u64,
//!                                         construction_version u16)
//!          bits u8 | rows u32 | cols u32
//!          clip_mu f32 | clip_sigma f32 | clip_sigmas f32
//!          row_scale f32 * rows | row_zero f32 * rows
//!          codes: rows * ceil(cols * bits / 8) bytes
//! ```
//!
//! Codes are packed row by row as a little-endian bit stream: code `j` of a row occupies
//! bits `[j * bits, (j + 1) * bits)` counted from the least significant bit of the
//! row's first byte. Every row starts on a fresh byte and trailing bits are zero. For
//! 2, 4 and 8 bits this puts `8 / bits` whole codes in each byte.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::error::{Error, FormatError, Result};
use crate::quantizer::grid::check_bits;
use crate::quantizer::QuantizedLayer;
use crate::tff::{FrameParams, Rotation, CONSTRUCTION_VERSION};

pub const MAGIC: [u8; 4] = *b"FQNT";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 10;
const FRAME_BYTES: usize = 4 + 4 + 4 + 1 + 8 + 2;

pub fn row_bytes(cols: usize, bits: u8) -> usize {
    (cols * bits as usize).div_ceil(8)
}

/// Packs a row-major `rows x cols` code matrix.
pub fn pack_codes(codes: &[u8], rows: usize, cols: usize, bits: u8) -> Result<Vec<u8>> {
    check_bits(bits)?;
    if codes.len() != rows * cols {
        return Err(Error::shape(format!(
            "{} codes for a {rows}x{cols} matrix",
            codes.len()
        )));
    }
    let maxq = ((1u16 << bits) - 1) as u8;
    let rb = row_bytes(cols, bits);
    let mut out = vec![0u8; rows * rb];
    let b = bits as usize;
    for (r, row) in codes.chunks(cols.max(1)).take(rows).enumerate() {
        let dst = &mut out[r * rb..(r + 1) * rb];
        for (j, &c) in row.iter().enumerate() {
            if c > maxq {
                return Err(Error::invalid(format!(
                    "code {c} at ({r}, {j}) does not fit in {bits} bits"
                )));
            }
            let bit = j * b;
            let v = (c as u16) << (bit % 8);
            dst[bit / 8] |= v as u8;
            if bit % 8 + b > 8 {
                dst[bit / 8 + 1] |= (v >> 8) as u8;
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pack_codes`].
pub fn unpack_codes(bytes: &[u8], rows: usize, cols: usize, bits: u8) -> Result<Vec<u8>> {
    check_bits(bits)?;
    let rb = row_bytes(cols, bits);
    if bytes.len() != rows * rb {
        return Err(Error::shape(format!(
            "{} packed bytes, a {rows}x{cols} matrix at {bits} bits needs {}",
            bytes.len(),
            rows * rb
        )));
    }
    let b = bits as usize;
    let mask = (1u16 << bits) - 1;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let src = &bytes[r * rb..(r + 1) * rb];
        for j in 0..cols {
            let bit = j * b;
            let mut v = src[bit / 8] as u16;
            if bit % 8 + b > 8 {
                v |= (src[bit / 8 + 1] as u16) << 8;
            }
            out.push(((v >> (bit % 8)) & mask) as u8);
        }
    }
    Ok(out)
}

fn put_frame(out: &mut Vec<u8>, p: &FrameParams) {
    out.extend_from_slice(&(p.k as u32).to_le_bytes());
    out.extend_from_slice(&(p.rho as u32).to_le_bytes());
    out.extend_from_slice(&(p.d as u32).to_le_bytes());
    let (flag, seed) = match p.rotation {
        Rotation::Identity => (0u8, 0u64),
        Rotation::Seeded(s) => (1u8, s),
    };
    out.push(flag);
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&CONSTRUCTION_VERSION.to_le_bytes());
}

fn layer_body(q: &QuantizedLayer) -> Result<Vec<u8>> {
    q.validate()?;
    let name = q.name.as_bytes();
    if name.len() > u16::MAX as usize {
        return Err(Error::invalid("layer name longer than 65535 bytes"));
    }
    let mut out = Vec::with_capacity(body_len(q));
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name);
    put_frame(&mut out, &q.frame_out);
    put_frame(&mut out, &q.frame_in);
    out.push(q.bits);
    out.extend_from_slice(&(q.rows as u32).to_le_bytes());
    out.extend_from_slice(&(q.cols as u32).to_le_bytes());
    for v in [q.clip_mu, q.clip_sigma, q.clip_sigmas] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in q.row_scale.iter().chain(&q.row_zero) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&pack_codes(&q.codes, q.rows, q.cols, q.bits)?);
    Ok(out)
}

fn body_len(q: &QuantizedLayer) -> usize {
    2 + q.name.len() + 2 * FRAME_BYTES + 1 + 4 + 4 + 12 + 8 * q.rows + q.rows * row_bytes(q.cols, q.bits)
}

/// One framed layer record: length, body, CRC32 of the body.
pub fn serialize_layer(q: &QuantizedLayer) -> Result<Vec<u8>> {
    let body = layer_body(q)?;
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    Ok(out)
}

pub fn serialize(layers: &[QuantizedLayer]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for q in layers {
        out.extend_from_slice(&serialize_layer(q)?);
    }
    Ok(out)
}

pub fn write_model(path: &Path, layers: &[QuantizedLayer]) -> Result<()> {
    write_atomic(path, &serialize(layers)?)
}

pub fn read_model(path: &Path) -> Result<Vec<QuantizedLayer>> {
    deserialize(&std::fs::read(path)?)
}

/// Bounds-checked little-endian cursor; positions in errors are absolute file offsets.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], base: usize) -> Self {
        Self { bytes, pos: 0, base }
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::Truncated {
                offset: self.offset(),
                needed: n - (self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.invalid_at(0, "length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn invalid_at(&self, back: usize, what: impl Into<String>) -> FormatError {
        FormatError::Invalid {
            offset: self.offset() - back,
            what: what.into(),
        }
    }

    fn frame(&mut self) -> Result<FrameParams, FormatError> {
        let k = self.u32()? as usize;
        let rho = self.u32()? as usize;
        let d = self.u32()? as usize;
        let flag = self.u8()?;
        let seed = self.u64()?;
        let version = self.u16()?;
        if version != CONSTRUCTION_VERSION {
            return Err(self.invalid_at(
                2,
                format!("frame construction version {version}, this build supports {CONSTRUCTION_VERSION}"),
            ));
        }
        let rotation = match flag {
            0 => Rotation::Identity,
            1 => Rotation::Seeded(seed),
            f => return Err(self.invalid_at(11, format!("rotation flag {f}"))),
        };
        Ok(FrameParams::new(k, rho, d, rotation))
    }
}

fn parse_body(body: &[u8], base: usize) -> Result<QuantizedLayer> {
    let mut r = Reader::new(body, base);
    let name_len = r.u16()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| r.invalid_at(name_len, "layer name is not UTF-8"))?
        .to_string();
    let frame_out = r.frame()?;
    let frame_in = r.frame()?;
    let bits = r.u8()?;
    if check_bits(bits).is_err() {
        return Err(r.invalid_at(1, format!("bits = {bits}")).into());
    }
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let clip_mu = r.f32()?;
    let clip_sigma = r.f32()?;
    let clip_sigmas = r.f32()?;
    let row_scale = r.f32s(rows)?;
    let row_zero = r.f32s(rows)?;
    let packed = r.take(rows.saturating_mul(row_bytes(cols, bits)))?;
    if r.pos != body.len() {
        return Err(r
            .invalid_at(0, format!("{} trailing bytes in record", body.len() - r.pos))
            .into());
    }
    let codes = unpack_codes(packed, rows, cols, bits)?;
    let q = QuantizedLayer {
        name,
        frame_out,
        frame_in,
        bits,
        rows,
        cols,
        codes,
        row_scale,
        row_zero,
        clip_mu,
        clip_sigma,
        clip_sigmas,
    };
    q.validate().map_err(|e| FormatError::Invalid {
        offset: base,
        what: e.to_string(),
    })?;
    Ok(q)
}

fn parse_header(bytes: &[u8]) -> Result<usize> {
    let mut r = Reader::new(bytes, 0);
    let found = r.array::<4>()?;
    if found != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found,
        }
        .into());
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: VERSION,
        }
        .into());
    }
    Ok(r.u32()? as usize)
}

/// Splits off record `index` at `offset`: returns `(body, stored crc, record length)`.
fn frame_record(bytes: &[u8], offset: usize) -> Result<(&[u8], u32, usize), FormatError> {
    let mut r = Reader::new(&bytes[offset..], offset);
    let len = r.u32()? as usize;
    let body = r.take(len)?;
    let crc = r.u32()?;
    Ok((body, crc, len + 8))
}

pub fn deserialize(bytes: &[u8]) -> Result<Vec<QuantizedLayer>> {
    let count = parse_header(bytes)?;
    let mut offset = HEADER_BYTES;
    let mut layers = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        let (body, stored, len) = frame_record(bytes, offset)?;
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(FormatError::Checksum {
                index,
                offset,
                stored,
                computed,
            }
            .into());
        }
        layers.push(parse_body(body, offset + 4)?);
        offset += len;
    }
    if offset != bytes.len() {
        return Err(FormatError::Invalid {
            offset,
            what: format!("{} bytes after the last record", bytes.len() - offset),
        }
        .into());
    }
    Ok(layers)
}

#[derive(Debug, Clone)]
pub struct RecordInspection {
    pub index: usize,
    pub offset: usize,
    pub record_bytes: usize,
    pub crc_ok: bool,
    pub stored_crc: u32,
    pub computed_crc: u32,
    /// Decoded layer when the body parses (even if the checksum failed).
    pub layer: Option<QuantizedLayer>,
    pub parse_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Inspection {
    pub version: u16,
    pub declared_layers: usize,
    pub file_bytes: usize,
    pub records: Vec<RecordInspection>,
    /// Structural failure that stopped the scan.
    pub fatal: Option<FormatError>,
}

impl Inspection {
    pub fn all_ok(&self) -> bool {
        self.fatal.is_none()
            && self.records.len() == self.declared_layers
            && self.records.iter().all(|r| r.crc_ok && r.parse_error.is_none())
    }
}

/// Walks the file record by record, reporting checksum status for each one instead of
/// stopping at the first mismatch.
pub fn inspect(bytes: &[u8]) -> Result<Inspection> {
    let declared_layers = parse_header(bytes)?;
    let mut out = Inspection {
        version: VERSION,
        declared_layers,
        file_bytes: bytes.len(),
        records: Vec::new(),
        fatal: None,
    };
    let mut offset = HEADER_BYTES;
    for index in 0..declared_layers {
        let (body, stored, len) = match frame_record(bytes, offset) {
            Ok(v) => v,
            Err(e) => {
                out.fatal = Some(e);
                return Ok(out);
            }
        };
        let computed = crc32fast::hash(body);
        let (layer, parse_error) = match parse_body(body, offset + 4) {
            Ok(q) => (Some(q), None),
            Err(e) => (None, Some(e.to_string())),
        };
        out.records.push(RecordInspection {
            index,
            offset,
            record_bytes: len,
            crc_ok: stored == computed,
            stored_crc: stored,
            computed_crc: computed,
            layer,
            parse_error,
        });
        offset += len;
    }
    if offset != bytes.len() {
        out.fatal = Some(FormatError::Invalid {
            offset,
            what: format!("{} bytes after the last record", bytes.len() - offset),
        });
    }
    Ok(out)
}

/// One line per layer plus a header line.
pub fn format_inspection(ins: &Inspection) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "FQNT v{} layers={} bytes={}",
        ins.version, ins.declared_layers, ins.file_bytes
    );
    for r in &ins.records {
        let crc = if r.crc_ok { "OK" } else { "FAIL" };
        match &r.layer {
            Some(q) => {
                let _ = writeln!(
                    s,
                    "layer {} name={} dims={}x{} frame_out={} frame_in={} bits={} offset={} bytes={} crc={crc}",
                    r.index,
                    q.name,
                    q.rows,
                    q.cols,
                    q.frame_out,
                    q.frame_in,
                    q.bits,
                    r.offset,
                    r.record_bytes,
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    "layer {} offset={} bytes={} crc={crc} error={}",
                    r.index,
                    r.offset,
                    r.record_bytes,
                    r.parse_error.as_deref().unwrap_or("unknown"),
                );
            }
        }
    }
    if let Some(e) = &ins.fatal {
        let _ = writeln!(s, "error: {e}");
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayerStorage {
    pub name: String,
    /// Original weight shape `d_out x d_in`.
    pub d_out: usize,
    pub d_in: usize,
    pub rows: usize,
    pub cols: usize,
    pub bits: u8,
    pub code_bytes: usize,
    pub grid_bytes: usize,
    /// Record framing, name, frame parameters, shape and clip statistics.
    pub metadata_bytes: usize,
    pub total_bytes: usize,
    pub fp32_equivalent_bytes: usize,
    pub compression_ratio: f64,
    /// `bits * r`, using the input-side redundancy.
    pub nominal_bits: f64,
    /// `bits * r_out * r_in`: code bits per original weight.
    pub exact_bits: f64,
    /// All stored bits of the record per original weight.
    pub effective_bits: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StorageReport {
    pub layers: Vec<LayerStorage>,
    pub header_bytes: usize,
    pub code_bytes: usize,
    pub grid_bytes: usize,
    /// Includes the file header.
    pub metadata_bytes: usize,
    pub total_bytes: usize,
    pub fp32_equivalent_bytes: usize,
    pub compression_ratio: f64,
}

pub fn layer_storage(q: &QuantizedLayer) -> LayerStorage {
    let (d_out, d_in) = (q.frame_out.d, q.frame_in.d);
    let code_bytes = q.rows * row_bytes(q.cols, q.bits);
    let grid_bytes = 8 * q.rows;
    let total_bytes = body_len(q) + 8;
    let fp32 = 4 * d_out * d_in;
    let r_out = q.frame_out.redundancy().as_f64();
    let r_in = q.frame_in.redundancy().as_f64();
    LayerStorage {
        name: q.name.clone(),
        d_out,
        d_in,
        rows: q.rows,
        cols: q.cols,
        bits: q.bits,
        code_bytes,
        grid_bytes,
        metadata_bytes: total_bytes - code_bytes - grid_bytes,
        total_bytes,
        fp32_equivalent_bytes: fp32,
        compression_ratio: fp32 as f64 / total_bytes as f64,
        nominal_bits: q.bits as f64 * r_in,
        exact_bits: q.bits as f64 * r_out * r_in,
        effective_bits: 8.0 * total_bytes as f64 / (d_out * d_in) as f64,
    }
}

/// Byte accounting of the serialized model; `total_bytes` equals the file size.
pub fn storage_report(layers: &[QuantizedLayer]) -> StorageReport {
    let per: Vec<LayerStorage> = layers.iter().map(layer_storage).collect();
    let sum = |f: fn(&LayerStorage) -> usize| per.iter().map(f).sum::<usize>();
    let code_bytes = sum(|l| l.code_bytes);
    let grid_bytes = sum(|l| l.grid_bytes);
    let metadata_bytes = sum(|l| l.metadata_bytes) + HEADER_BYTES;
    let total_bytes = code_bytes + grid_bytes + metadata_bytes;
    let fp32 = sum(|l| l.fp32_equivalent_bytes);
    StorageReport {
        layers: per,
        header_bytes: HEADER_BYTES,
        code_bytes,
        grid_bytes,
        metadata_bytes,
        total_bytes,
        fp32_equivalent_bytes: fp32,
        compression_ratio: if total_bytes > 0 {
            fp32 as f64 / total_bytes as f64
        } else {
            0.0
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    pub(crate) fn random_layer(seed: u64, bits: u8) -> QuantizedLayer {
        let mut s = Stream::new(seed);
        let fo = FrameParams::new(3, 2, 4, Rotation::Seeded(seed));
        let fi = FrameParams::new(1, 5, 5, Rotation::Identity);
        let (rows, cols) = (fo.frame_dim(), fi.frame_dim());
        let maxq = 1u64 << bits;
        QuantizedLayer {
            name: format!("layer.{seed}"),
            frame_out: fo,
            frame_in: fi,
            bits,
            rows,
            cols,
            codes: (0..rows * cols).map(|_| s.below(maxq) as u8).collect(),
            row_scale: (0..rows).map(|_| s.uniform() as f32).collect(),
            row_zero: (0..rows).map(|_| s.below(maxq) as f32).collect(),
            clip_mu: s.normal() as f32,
            clip_sigma: s.uniform() as f32,
            clip_sigmas: 2.0,
        }
    }

    #[test]
    fn format_examples() {
        assert_eq!(pack_codes(&[0, 1, 2, 3], 1, 4, 2).unwrap(), vec![0xE4]);
        assert_eq!(pack_codes(&[3], 1, 1, 2).unwrap(), vec![0x03]);
        assert_eq!(pack_codes(&[0xA, 0x5], 1, 2, 4).unwrap(), vec![0x5A]);
        assert_eq!(pack_codes(&[1, 2], 2, 1, 8).unwrap(), vec![1, 2]);
        // rows are byte aligned
        assert_eq!(
            pack_codes(&[1, 2, 3, 3, 2, 1], 2, 3, 2).unwrap(),
            vec![0b11_10_01, 0b01_10_11]
        );
        assert!(pack_codes(&[4], 1, 1, 2).is_err());
    }

    #[test]
    fn odd_widths_straddle_bytes() {
        let codes = [5u8, 7, 1];
        let packed = pack_codes(&codes, 1, 3, 3).unwrap();
        assert_eq!(packed, vec![0b01_111_101, 0b0]);
        assert_eq!(unpack_codes(&packed, 1, 3, 3).unwrap(), codes);
    }

    #[test]
    fn empty_model() {
        let bytes = serialize(&[]).unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES);
        assert!(deserialize(&bytes).unwrap().is_empty());
        assert_eq!(storage_report(&[]).total_bytes, HEADER_BYTES);
    }

    #[test]
    fn layer_round_trip_and_sizes() {
        for bits in 2..=8 {
            let layers = vec![random_layer(1, bits), random_layer(2, bits)];
            let bytes = serialize(&layers).unwrap();
            assert_eq!(deserialize(&bytes).unwrap(), layers);
            assert_eq!(storage_report(&layers).total_bytes, bytes.len());
        }
    }

    #[test]
    fn corruption_is_located() {
        let layers = vec![random_layer(1, 2), random_layer(2, 2)];
        let bytes = serialize(&layers).unwrap();
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 6] ^= 0x10;
        match deserialize(&bad) {
            Err(Error::Format(FormatError::Checksum { index, .. })) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        let ins = inspect(&bad).unwrap();
        assert!(ins.records[0].crc_ok && !ins.records[1].crc_ok);
        assert!(format_inspection(&ins).contains("crc=FAIL"));
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(
            deserialize(&v),
            Err(Error::Format(FormatError::UnsupportedVersion { found: 2, .. }))
        ));
        assert!(matches!(
            deserialize(&bytes[..bytes.len() - 3]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
    }

    #[test]
    fn storage_arithmetic() {
        let q = random_layer(3, 2);
        let s = layer_storage(&q);
        assert_eq!(s.code_bytes, 6 * 2);
        assert_eq!(s.grid_bytes, 6 * 8);
        assert_eq!(s.total_bytes, s.code_bytes + s.grid_bytes + s.metadata_bytes);
        assert!((s.nominal_bits - 2.0).abs() < 1e-12);
        assert!((s.exact_bits - 3.0).abs() < 1e-12);
    }
}
