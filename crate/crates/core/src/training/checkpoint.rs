use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CheckpointError, Error, Result};
use crate::flow::{FlowConfig, MultiscaleFlow, ParamStore};
use crate::io::{decode_arrays, encode_array, NamedArray};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FLOWCK01";

/// Training bookkeeping stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: usize,
    /// Mean NLL of the last epoch; NaN when untrained.
    pub nll: f64,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        TrainingMeta { epoch: 0, nll: f64::NAN }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    format_version: u32,
    data_initialized: bool,
    training: TrainingMeta,
    flow: FlowConfig,
}

/// Layout: magic, u64 LE descriptor length, TOML descriptor, then named
/// arrays (parameters followed by fixed buffers).
pub fn encode_checkpoint(flow: &MultiscaleFlow, meta: &TrainingMeta) -> Result<Vec<u8>> {
    let desc = Descriptor {
        format_version: 1,
        data_initialized: flow.data_initialized(),
        training: meta.clone(),
        flow: flow.config().clone(),
    };
    let text = toml::to_string(&desc).map_err(|e| CheckpointError::Descriptor(e.to_string()))?;
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for store in [flow.params(), flow.buffers()] {
        for slot in store.slots() {
            let arr = NamedArray::new(slot.name.clone(), slot.shape.clone(), store.values()[slot.range()].to_vec());
            encode_array(&mut out, &arr);
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(MultiscaleFlow, TrainingMeta)> {
    if bytes.len() < 8 || &bytes[..6] != b"FLOWCK" {
        return Err(CheckpointError::CorruptHeader("missing FLOWCK magic".into()).into());
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::VersionMismatch {
            expected: "01".into(),
            found: String::from_utf8_lossy(&bytes[6..8]).into_owned(),
        }
        .into());
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Payload("missing descriptor length".into()).into());
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let end = 16usize
        .checked_add(usize::try_from(len).unwrap_or(usize::MAX))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| CheckpointError::Payload("descriptor extends past end of file".into()))?;
    let text = std::str::from_utf8(&bytes[16..end])
        .map_err(|_| CheckpointError::Descriptor("descriptor is not UTF-8".into()))?;
    let desc: Descriptor = toml::from_str(text).map_err(|e| CheckpointError::Descriptor(e.to_string()))?;
    if desc.format_version != 1 {
        return Err(CheckpointError::VersionMismatch {
            expected: "1".into(),
            found: desc.format_version.to_string(),
        }
        .into());
    }
    let arrays = decode_arrays(&bytes[end..])?;
    let mut flow = MultiscaleFlow::new(desc.flow, 0).map_err(|e| CheckpointError::Descriptor(e.to_string()))?;
    let mut by_name: HashMap<&str, &NamedArray> =
        arrays.iter().map(|a| (a.name.as_str(), a)).collect();
    fill_store(flow.params_mut(), &mut by_name)?;
    fill_store(flow.buffers_mut(), &mut by_name)?;
    if let Some(extra) = by_name.keys().next() {
        return Err(CheckpointError::Payload(format!("unexpected array {extra}")).into());
    }
    flow.set_data_initialized(desc.data_initialized);
    Ok((flow, desc.training))
}

fn fill_store(store: &mut ParamStore, by_name: &mut HashMap<&str, &NamedArray>) -> Result<()> {
    for idx in 0..store.slots().len() {
        let slot = store.slot(idx).clone();
        let arr = by_name
            .remove(slot.name.as_str())
            .ok_or_else(|| CheckpointError::Payload(format!("missing array {}", slot.name)))?;
        if arr.shape != slot.shape {
            return Err(CheckpointError::Payload(format!(
                "array {} has shape {:?}, architecture expects {:?}",
                slot.name, arr.shape, slot.shape
            ))
            .into());
        }
        store.get_mut(idx).copy_from_slice(&arr.data);
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, flow: &MultiscaleFlow, meta: &TrainingMeta) -> Result<()> {
    let bytes = encode_checkpoint(flow, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(MultiscaleFlow, TrainingMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_flow() -> MultiscaleFlow {
        let cfg = FlowConfig { height: 8, width: 8, levels: 2, steps_per_level: 2, hidden: 4, ..Default::default() };
        let mut flow = MultiscaleFlow::new(cfg, 3).unwrap();
        flow.perturb_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1), 0.05);
        flow
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let flow = small_flow();
        let meta = TrainingMeta { epoch: 4, nll: -123.25 };
        let a = encode_checkpoint(&flow, &meta).unwrap();
        let (loaded, meta2) = decode_checkpoint(&a).unwrap();
        assert_eq!(meta2, meta);
        let b = encode_checkpoint(&loaded, &meta2).unwrap();
        assert_eq!(a, b);
        assert_eq!(loaded.params().values(), flow.params().values());
    }

    #[test]
    fn loaded_flow_reproduces_forward_exactly() {
        let flow = small_flow();
        let (loaded, _) = decode_checkpoint(&encode_checkpoint(&flow, &TrainingMeta::default()).unwrap()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let z = flow.latent_from_vec(crate::training::LaplacianPrior.sample(flow.dim(), &mut rng)).unwrap();
        let (a, la) = flow.forward(&z).unwrap();
        let (b, lb) = loaded.forward(&z).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.to_bits(), lb.to_bits());
    }

    #[test]
    fn error_variants() {
        let bytes = encode_checkpoint(&small_flow(), &TrainingMeta::default()).unwrap();
        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(decode_checkpoint(truncated), Err(Error::Checkpoint(CheckpointError::Payload(_)))));
        let mut wrong_version = bytes.clone();
        wrong_version[7] = b'2';
        assert!(matches!(
            decode_checkpoint(&wrong_version),
            Err(Error::Checkpoint(CheckpointError::VersionMismatch { .. }))
        ));
        let mut garbage = bytes.clone();
        garbage[0] = b'X';
        assert!(matches!(decode_checkpoint(&garbage), Err(Error::Checkpoint(CheckpointError::CorruptHeader(_)))));
        assert!(matches!(decode_checkpoint(&bytes[..4]), Err(Error::Checkpoint(CheckpointError::CorruptHeader(_)))));
    }
}
