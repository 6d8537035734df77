//! Binary segment file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ECGS" | u16 version | u32 sample_rate | u32 segment_len | u64 count
//! count × ( u8 label | segment_len × f32 )
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, FormatError, Result};

pub const SEGMENT_MAGIC: [u8; 4] = *b"ECGS";
pub const SEGMENT_VERSION: u16 = 1;

/// Rows of equal-length windows with one byte label each.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFile {
    pub sample_rate: u32,
    pub segment_len: usize,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl SegmentFile {
    pub fn new(sample_rate: u32, segment_len: usize) -> Self {
        Self { sample_rate, segment_len, inputs: Vec::new(), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, row: Vec<f64>, label: u8) -> Result<()> {
        if row.len() != self.segment_len {
            return Err(FormatError::ShapeMismatch(format!(
                "row of {} samples in a file of {}-sample segments",
                row.len(),
                self.segment_len
            ))
            .into());
        }
        self.inputs.push(row);
        self.labels.push(label);
        Ok(())
    }

    /// Inputs rounded through `f32`, i.e. what a write/read cycle yields.
    pub fn quantized(&self) -> Self {
        Self {
            inputs: self.inputs.iter().map(|r| r.iter().map(|&v| f64::from(v as f32)).collect()).collect(),
            ..self.clone()
        }
    }
}

pub fn encode_segments<W: Write>(mut w: W, data: &SegmentFile) -> Result<()> {
    if data.inputs.len() != data.labels.len() {
        return Err(FormatError::ShapeMismatch(format!(
            "{} rows but {} labels",
            data.inputs.len(),
            data.labels.len()
        ))
        .into());
    }
    let segment_len = u32::try_from(data.segment_len)
        .map_err(|_| FormatError::ShapeMismatch("segment length exceeds u32".into()))?;
    w.write_all(&SEGMENT_MAGIC)?;
    w.write_all(&SEGMENT_VERSION.to_le_bytes())?;
    w.write_all(&data.sample_rate.to_le_bytes())?;
    w.write_all(&segment_len.to_le_bytes())?;
    w.write_all(&(data.inputs.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(1 + 4 * data.segment_len);
    for (row, &label) in data.inputs.iter().zip(&data.labels) {
        if row.len() != data.segment_len {
            return Err(FormatError::ShapeMismatch(format!(
                "row of {} samples, header says {}",
                row.len(),
                data.segment_len
            ))
            .into());
        }
        buf.clear();
        buf.push(label);
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub(crate) fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], context: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(FormatError::Truncated { context }),
        _ => Error::Io(e),
    })
}

pub fn decode_segments<R: Read>(mut r: R) -> Result<SegmentFile> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if magic != SEGMENT_MAGIC {
        return Err(FormatError::BadMagic { expected: SEGMENT_MAGIC, found: magic }.into());
    }
    let mut b2 = [0u8; 2];
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    read_exact_or(&mut r, &mut b2, "version")?;
    let version = u16::from_le_bytes(b2);
    if version != SEGMENT_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    read_exact_or(&mut r, &mut b4, "sample rate")?;
    let sample_rate = u32::from_le_bytes(b4);
    read_exact_or(&mut r, &mut b4, "segment length")?;
    let segment_len = u32::from_le_bytes(b4) as usize;
    read_exact_or(&mut r, &mut b8, "row count")?;
    let count = u64::from_le_bytes(b8);
    if count > 0 && segment_len == 0 {
        return Err(FormatError::ShapeMismatch("rows declared with zero segment length".into()).into());
    }

    let mut out = SegmentFile::new(sample_rate, segment_len);
    let mut row_bytes = vec![0u8; 1 + 4 * segment_len];
    for _ in 0..count {
        read_exact_or(&mut r, &mut row_bytes, "segment row")?;
        let row = row_bytes[1..]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        out.inputs.push(row);
        out.labels.push(row_bytes[0]);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(FormatError::ShapeMismatch(format!("trailing bytes after {count} rows")).into());
    }
    Ok(out)
}

pub fn write_segments(path: impl AsRef<Path>, data: &SegmentFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_segments(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn read_segments(path: impl AsRef<Path>) -> Result<SegmentFile> {
    decode_segments(BufReader::new(File::open(path)?))
}
