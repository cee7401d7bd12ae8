use crate::error::CheckpointError;

/// A named, shaped f64 array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        NamedArray { name: name.into(), shape, data }
    }
}

/// Appends `(u32 name length, name, u32 rank, u64 extents, f64 payload)`,
/// all little-endian.
pub fn encode_array(out: &mut Vec<u8>, array: &NamedArray) {
    out.extend_from_slice(&(array.name.len() as u32).to_le_bytes());
    out.extend_from_slice(array.name.as_bytes());
    out.extend_from_slice(&(array.shape.len() as u32).to_le_bytes());
    for &e in &array.shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in &array.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Payload(format!(
                "{what}: need {n} bytes at offset {}, only {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes consecutive arrays until the input is exhausted. Names must be unique.
pub fn decode_arrays(bytes: &[u8]) -> Result<Vec<NamedArray>, CheckpointError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let mut out: Vec<NamedArray> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| CheckpointError::Payload("array name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        if rank > 8 {
            return Err(CheckpointError::Payload(format!("array {name}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("extent")? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&n| n <= bytes.len() / 8)
            .ok_or_else(|| CheckpointError::Payload(format!("array {name}: payload larger than file")))?;
        let payload = cur.take(len * 8, "payload")?;
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if !seen.insert(name.clone()) {
            return Err(CheckpointError::Payload(format!("duplicate array name {name}")));
        }
        out.push(NamedArray { name, shape, data });
    }
    Ok(out)
}
