//! Transformed-sequence cache: a flat little-endian `f32` file
//! (channel-major) next to a `key = value` text header.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Task;

use super::{TransformedSequence, CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub subject: String,
    pub round: u8,
    pub session: u8,
    pub task: Task,
    pub rate: f64,
    pub length: usize,
    pub stats_id: String,
}

fn header_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("hdr")
}

pub fn write_cached(data_path: &Path, header: &CacheHeader, seq: &TransformedSequence) -> Result<()> {
    debug_assert_eq!(header.length, seq.len);
    let mut bytes = Vec::with_capacity(seq.data.len() * 4);
    for v in &seq.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(data_path, bytes).map_err(|e| Error::io(data_path, e))?;
    let text = toml::to_string(header).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let hp = header_path(data_path);
    fs::write(&hp, text).map_err(|e| Error::io(&hp, e))
}

pub fn read_cached(data_path: &Path) -> Result<(CacheHeader, TransformedSequence)> {
    let hp = header_path(data_path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: CacheHeader = toml::from_str(&text).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    if bytes.len() != header.length * CHANNELS * 4 {
        return Err(Error::InvalidInput(format!(
            "cache {} holds {} bytes, header says {} steps",
            data_path.display(),
            bytes.len(),
            header.length
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let seq = TransformedSequence {
        data,
        len: header.length,
        rate_hz: header.rate,
    };
    Ok((header, seq))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let seq = TransformedSequence {
            data: (0..12).map(|v| v as f32 * 0.25 - 1.0).collect(),
            len: 3,
            rate_hz: 125.0,
        };
        let header = CacheHeader {
            subject: "007".into(),
            round: 2,
            session: 1,
            task: Task::Tex,
            rate: 125.0,
            length: 3,
            stats_id: "abc".into(),
        };
        let path = dir.path().join("x.f32");
        write_cached(&path, &header, &seq).unwrap();
        let (h, s) = read_cached(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(s, seq);
        let raw = fs::read(&path).unwrap();
        assert_eq!(&raw[..4], &(-1.0f32).to_le_bytes());
    }
}
