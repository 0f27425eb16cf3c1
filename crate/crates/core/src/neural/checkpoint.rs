//! Versioned binary parameter container.
//!
//! Layout (all integers little-endian): magic `JMFCKPT1`, `u32` version, 32-byte
//! configuration hash, `u32` tensor count, then per tensor a `u32` name length,
//! the UTF-8 name, a `u32` rank, `u64` dimensions and the `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"JMFCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn vector(name: &str, data: Vec<f64>) -> Self {
        NamedTensor {
            name: name.to_string(),
            shape: vec![data.len()],
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub tensors: Vec<NamedTensor>,
}

/// SHA-256 of a configuration's canonical text form.
pub fn config_hash(config_text: &str) -> [u8; 32] {
    Sha256::digest(config_text.as_bytes()).into()
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor '{name}'")))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&self.config_hash)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(Error::Format(format!("tensor '{}' shape does not match its data", t.name)));
            }
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for d in &t.shape {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        if &read_exact::<8>(r)? != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(read_exact(r)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config_hash = read_exact::<32>(r)?;
        let count = u32::from_le_bytes(read_exact(r)?) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u32::from_le_bytes(read_exact(r)?) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = u32::from_le_bytes(read_exact(r)?) as usize;
            let shape = (0..rank)
                .map(|_| Ok(u64::from_le_bytes(read_exact(r)?) as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| Ok(f64::from_le_bytes(read_exact(r)?)))
                .collect::<Result<Vec<_>>>()?;
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Checkpoint { config_hash, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let ck = Checkpoint {
            config_hash: config_hash("{\"lr\":0.0005}"),
            tensors: vec![
                NamedTensor::vector("mode_net", vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, std::f64::consts::PI]),
                NamedTensor {
                    name: "gain".into(),
                    shape: vec![2, 3],
                    data: (0..6).map(|v| v as f64 / 7.0).collect(),
                },
            ],
        };
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let back = Checkpoint::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config_hash, ck.config_hash);
        for (a, b) in back.tensors.iter().zip(&ck.tensors) {
            assert_eq!(a.shape, b.shape);
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        assert!(Checkpoint::read(&mut &b"NOTACKPT"[..]).is_err());
        let ck = Checkpoint {
            config_hash: [0; 32],
            tensors: vec![NamedTensor::vector("a", vec![1.0, 2.0])],
        };
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(Checkpoint::read(&mut buf.as_slice()).is_err());
    }
}
