//! Versioned binary policy file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"AVLABPOL"  u32 version
//! u8 tag length, tag bytes ("ppo" | "sac")
//! u64 seed
//! u32 hash length, hash bytes (UTF-8)
//! u32 layer count n, n x u32 layer widths
//! u64 parameter count, parameters as f64 in layer order
//! ```

use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::mlp::Mlp;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AVLABPOL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Ppo,
    Sac,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Sac => "sac",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(Algorithm::Ppo),
            "sac" => Ok(Algorithm::Sac),
            other => Err(Error::config(format!("unknown algorithm {other:?}, expected ppo or sac"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub config_hash: String,
    /// Policy trunk.
    pub net: Mlp,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.net.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let tag = self.algorithm.tag().as_bytes();
        out.push(tag.len() as u8);
        out.extend_from_slice(tag);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.config_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_hash.as_bytes());
        let dims = self.net.dims();
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.net.num_params() as u64).to_le_bytes());
        for p in self.net.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "not a policy checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("checkpoint format version {version}, this build reads version {FORMAT_VERSION}"),
            ));
        }
        let tag_len = r.take(1)?[0] as usize;
        let tag = r.string(tag_len)?;
        let algorithm = tag.parse().map_err(|_| Error::format(path, format!("unknown algorithm tag {tag:?}")))?;
        let seed = r.u64()?;
        let hash_len = r.u32()? as usize;
        let config_hash = r.string(hash_len)?;
        let n_layers = r.u32()? as usize;
        if n_layers > 1024 {
            return Err(Error::format(path, format!("implausible layer count {n_layers}")));
        }
        let dims = (0..n_layers).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n_params = r.u64()? as usize;
        if n_params.checked_mul(8) != Some(bytes.len() - r.pos) {
            return Err(Error::format(
                path,
                format!("header declares {n_params} parameters but {} bytes follow", bytes.len() - r.pos),
            ));
        }
        let params = (0..n_params).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let net = Mlp::from_params(&dims, params).map_err(|e| Error::format(path, e.to_string()))?;
        Ok(Self { algorithm, seed, config_hash, net })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.path, "checkpoint truncated"));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(self.path, "checkpoint string is not UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Checkpoint {
            algorithm: Algorithm::Ppo,
            seed: 42,
            config_hash: "abc123".into(),
            net: Mlp::random(&[4, 5, 2], 1.0, &mut rng).unwrap(),
        }
    }

    #[test]
    fn roundtrip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..8], b"AVLABPOL");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], b"\x03ppo");
        let n = sample().net.num_params();
        assert_eq!(&bytes[bytes.len() - 8 * n..bytes.len() - 8 * n + 8], &sample().net.params()[0].to_le_bytes());
    }

    #[test]
    fn rejects_other_versions() {
        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes, Path::new("p.bin")).unwrap_err();
        assert!(err.to_string().contains("version 2"), "{err}");
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("p")).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..10], Path::new("p")).is_err());
        assert!(Checkpoint::from_bytes(b"hello world, not a checkpoint", Path::new("p")).is_err());
    }
}
