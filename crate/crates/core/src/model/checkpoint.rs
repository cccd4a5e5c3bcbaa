//! Binary checkpoint: magic, version, text header, little-endian f32
//! tensors, and a trailing SHA-256 over everything before it.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, Network};
use crate::error::{Error, Result};
use crate::numeric::Scalar;

const MAGIC: &[u8; 8] = b"EYAUTHCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let header = format!("{}lineage={}\n", net.config().to_text(), net.lineage.replace('\n', " "));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for tensor in [net.params(), net.running()] {
        out.extend_from_slice(&(tensor.len() as u64).to_le_bytes());
        for v in tensor {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or(Error::Checksum)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor<T: Scalar>(&mut self) -> Result<Vec<T>> {
        let n = usize::try_from(self.u64()?).map_err(|_| Error::Checksum)?;
        let bytes = self.take(n.checked_mul(4).ok_or(Error::Checksum)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect())
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    if bytes.len() < MAGIC.len() + 8 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    // Version is checked before the digest so a newer format reports as such.
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let mut r = Reader { buf: body, pos: 12 };
    let header_len = r.u32()? as usize;
    let header = std::str::from_utf8(r.take(header_len)?).map_err(|_| Error::Checksum)?;
    let config = ModelConfig::from_text(header)?;
    let lineage = header
        .lines()
        .find_map(|l| l.strip_prefix("lineage="))
        .unwrap_or("")
        .to_string();
    let params = r.tensor()?;
    let running = r.tensor()?;
    if r.pos != body.len() {
        return Err(Error::Checksum);
    }
    Network::from_parts(config, params, running, lineage)
}

pub fn save<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network<f32> {
        let cfg = ModelConfig::uniform(4, 2, vec![6, 3]).with_input(2, 16);
        let mut n = Network::init(&cfg, 5).unwrap();
        n.lineage = "seed=5 iter=0".into();
        n
    }

    #[test]
    fn round_trip_is_exact_for_f32() {
        let n = net();
        let back: Network<f32> = from_bytes(&to_bytes(&n)).unwrap();
        assert_eq!(back, n);
        assert_eq!(back.lineage, n.lineage);
    }

    #[test]
    fn corruption_and_truncation_detected() {
        let bytes = to_bytes(&net());
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(from_bytes::<f32>(&flipped), Err(Error::Checksum)));
        assert!(matches!(from_bytes::<f32>(&bytes[..bytes.len() - 5]), Err(Error::Checksum)));
        assert!(matches!(from_bytes::<f32>(&bytes[..10]), Err(Error::Checksum)));
    }

    #[test]
    fn unknown_version_rejected() {
        let mut bytes = to_bytes(&net());
        bytes[8] = 9;
        assert!(matches!(
            from_bytes::<f32>(&bytes),
            Err(Error::Version { found: 9, expected: 1 })
        ));
    }
}
