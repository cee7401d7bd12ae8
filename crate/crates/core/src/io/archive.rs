use std::path::Path;

use super::array::{decode_arrays, encode_array, NamedArray};
use crate::error::{CheckpointError, Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"FLOWAR01";

pub fn encode_archive(arrays: &[NamedArray]) -> Result<Vec<u8>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = ARCHIVE_MAGIC.to_vec();
    for a in arrays {
        if !seen.insert(a.name.as_str()) {
            return Err(Error::Config(format!("duplicate archive entry {}", a.name)));
        }
        encode_array(&mut out, a);
    }
    Ok(out)
}

pub fn decode_archive(bytes: &[u8]) -> Result<Vec<NamedArray>> {
    if bytes.len() < 8 || &bytes[..6] != b"FLOWAR" {
        return Err(CheckpointError::CorruptHeader("missing FLOWAR magic".into()).into());
    }
    if &bytes[..8] != ARCHIVE_MAGIC {
        return Err(CheckpointError::VersionMismatch {
            expected: "01".into(),
            found: String::from_utf8_lossy(&bytes[6..8]).into_owned(),
        }
        .into());
    }
    Ok(decode_arrays(&bytes[8..])?)
}

pub fn write_archive(path: &Path, arrays: &[NamedArray]) -> Result<()> {
    let bytes = encode_archive(arrays)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<Vec<NamedArray>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&bytes)
}
