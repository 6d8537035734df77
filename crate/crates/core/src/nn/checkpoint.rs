//! Weight checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ECGW" | u16 version | u32 entry_count
//! entry_count × ( u16 name_len | name (UTF-8) | u8 ndims | ndims × u32 | u8 frozen )
//! for each entry in manifest order: product(dims) × f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dataset::format::read_exact_or;
use crate::error::{Error, FormatError, Result};

use super::{LayerParams, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ECGW";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    pub data: Vec<f32>,
}

/// Ordered list of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, tensor: &Tensor<T>, frozen: bool) {
        self.entries.push(CheckpointEntry {
            name: name.into(),
            shape: tensor.shape().to_vec(),
            frozen,
            data: tensor.data().iter().map(|v| v.as_f64() as f32).collect(),
        });
    }

    /// Store `<prefix>.weight` and `<prefix>.bias`.
    pub fn push_layer<T: Scalar>(&mut self, prefix: &str, params: &LayerParams<T>) {
        self.push(format!("{prefix}.weight"), &params.weights, !params.trainable);
        self.push(format!("{prefix}.bias"), &params.bias, !params.trainable);
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Load a tensor, checking its shape.
    pub fn tensor<T: Scalar>(&self, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let e = self.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if e.shape != shape {
            return Err(Error::Checkpoint(format!("{name}: shape {:?}, expected {shape:?}", e.shape)));
        }
        Tensor::new(e.shape.clone(), e.data.iter().map(|&v| T::of(f64::from(v))).collect())
    }

    /// Load `<prefix>.weight` / `<prefix>.bias` with the expected shapes.
    pub fn layer<T: Scalar>(&self, prefix: &str, weight_shape: &[usize], trainable: bool) -> Result<LayerParams<T>> {
        let out = *weight_shape.last().unwrap_or(&0);
        Ok(LayerParams {
            weights: self.tensor(&format!("{prefix}.weight"), weight_shape)?,
            bias: self.tensor(&format!("{prefix}.bias"), &[out])?,
            trainable,
        })
    }

    /// SHA-256 over names, shapes and values of entries whose name starts with `prefix`.
    pub fn digest(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for e in self.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            h.update((e.name.len() as u64).to_le_bytes());
            h.update(e.name.as_bytes());
            for &d in &e.shape {
                h.update((d as u64).to_le_bytes());
            }
            for v in &e.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn encode<W: Write>(&self, mut w: W) -> Result<()> {
        let count = u32::try_from(self.entries.len()).map_err(|_| Error::Checkpoint("too many entries".into()))?;
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&count.to_le_bytes())?;
        for e in &self.entries {
            let name_len =
                u16::try_from(e.name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {}", e.name)))?;
            let ndims = u8::try_from(e.shape.len()).map_err(|_| Error::Checkpoint("too many dimensions".into()))?;
            if e.shape.iter().product::<usize>() != e.data.len() {
                return Err(Error::Checkpoint(format!("{}: data length differs from shape", e.name)));
            }
            w.write_all(&name_len.to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&[ndims])?;
            for &d in &e.shape {
                let d = u32::try_from(d).map_err(|_| Error::Checkpoint("dimension exceeds u32".into()))?;
                w.write_all(&d.to_le_bytes())?;
            }
            w.write_all(&[u8::from(e.frozen)])?;
        }
        for e in &self.entries {
            let bytes: Vec<u8> = e.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.encode(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    pub fn decode<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact_or(&mut r, &mut magic, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic { expected: CHECKPOINT_MAGIC, found: magic }.into());
        }
        let mut b1 = [0u8; 1];
        let mut b2 = [0u8; 2];
        let mut b4 = [0u8; 4];
        read_exact_or(&mut r, &mut b2, "version")?;
        let version = u16::from_le_bytes(b2);
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        read_exact_or(&mut r, &mut b4, "entry count")?;
        let count = u32::from_le_bytes(b4) as usize;
        let mut manifest = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            read_exact_or(&mut r, &mut b2, "name length")?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            read_exact_or(&mut r, &mut name, "name")?;
            let name = String::from_utf8(name)
                .map_err(|_| FormatError::ShapeMismatch("tensor name is not UTF-8".into()))?;
            read_exact_or(&mut r, &mut b1, "rank")?;
            let mut shape = Vec::with_capacity(b1[0] as usize);
            for _ in 0..b1[0] {
                read_exact_or(&mut r, &mut b4, "dimension")?;
                shape.push(u32::from_le_bytes(b4) as usize);
            }
            read_exact_or(&mut r, &mut b1, "frozen flag")?;
            if b1[0] > 1 {
                return Err(FormatError::ShapeMismatch(format!("{name}: frozen flag {}", b1[0])).into());
            }
            manifest.push((name, shape, b1[0] == 1));
        }
        let mut entries = Vec::with_capacity(manifest.len());
        for (name, shape, frozen) in manifest {
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; 4 * n];
            read_exact_or(&mut r, &mut bytes, "weights")?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            entries.push(CheckpointEntry { name, shape, frozen, data });
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(FormatError::ShapeMismatch("trailing bytes after weights".into()).into());
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.encode(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        let w = Tensor::new(vec![2, 1, 3], vec![0.5f64, -1.0, 2.0, 3.25, 0.0, 1e-3]).unwrap();
        let p = LayerParams { weights: w, bias: Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap(), trainable: false };
        c.push_layer("trunk.conv1", &p);
        c.push("head.0.out.weight", &Tensor::<f64>::zeros(vec![4, 1]), false);
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"ECGW");
        let back = Checkpoint::decode(&bytes[..]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert!(back.get("trunk.conv1.weight").unwrap().frozen);
    }

    #[test]
    fn corrupted_inputs() {
        let mut bytes = sample().to_bytes();
        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 1]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bytes[..]), Err(Error::Format(FormatError::BadMagic { .. }))));
    }

    #[test]
    fn shape_checked_on_load() {
        let c = sample();
        assert!(c.layer::<f64>("trunk.conv1", &[2, 1, 3], false).is_ok());
        assert!(matches!(c.layer::<f64>("trunk.conv1", &[3, 1, 3], false), Err(Error::Checkpoint(_))));
        assert!(c.tensor::<f32>("nope", &[1]).is_err());
    }

    #[test]
    fn digest_scoped_by_prefix() {
        let a = sample();
        let mut b = sample();
        b.entries[2].data[0] = 9.0;
        assert_eq!(a.digest("trunk."), b.digest("trunk."));
        assert_ne!(a.digest(""), b.digest(""));
    }
}
