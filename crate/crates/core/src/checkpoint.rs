//! Model checkpoint container and its JSON sidecar.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "CUBA" | version u16 | layer count u32 | sizes u32 × (count+1)
//! dropout f32 | per layer: threshold f32, current_decay f32,
//! voltage_decay f32, weights f32 × n_in·n_out (input-major)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::write_atomic;
use crate::error::{Error, Result};
use crate::snn::{CubaNetwork, CubaParams, Layer, Sample, TrainConfig};
use crate::types::EncodingConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CUBA";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub train_config: TrainConfig,
    pub encoding: EncodingConfig,
    pub class_names: Vec<String>,
    pub dataset_fingerprint: String,
    pub tool_version: String,
}

/// SHA-256 over every sample's dimensions, payload and label.
pub fn dataset_fingerprint(samples: &[Sample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        for d in s.tensor.dims() {
            h.update((d as u64).to_le_bytes());
        }
        h.update(s.tensor.as_slice().iter().map(|&x| x as u8).collect::<Vec<_>>());
        h.update((s.label as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn encode_checkpoint(net: &CubaNetwork) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    b.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for size in net.layer_sizes() {
        b.extend_from_slice(&(size as u32).to_le_bytes());
    }
    b.extend_from_slice(&(net.dropout_p as f32).to_le_bytes());
    for layer in &net.layers {
        let p = layer.params;
        for x in [p.threshold, p.current_decay, p.voltage_decay] {
            b.extend_from_slice(&(x as f32).to_le_bytes());
        }
        for &w in &layer.weights {
            b.extend_from_slice(&(w as f32).to_le_bytes());
        }
    }
    b
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(Error::TruncatedPayload {
                expected: end,
                found: self.bytes.len(),
            });
        }
        let out = self.bytes[self.pos..end].try_into().expect("length checked");
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f64::from(f32::from_le_bytes(self.take()?)))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CubaNetwork> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = c.take()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: CHECKPOINT_MAGIC,
        });
    }
    let version = u16::from_le_bytes(c.take()?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = c.u32()?;
    let sizes = (0..=count).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let dropout = c.f32()?;
    let mut layers = Vec::with_capacity(count);
    for w in sizes.windows(2) {
        let params = CubaParams {
            threshold: c.f32()?,
            current_decay: c.f32()?,
            voltage_decay: c.f32()?,
        };
        let weights = (0..w[0] * w[1]).map(|_| c.f32()).collect::<Result<Vec<_>>>()?;
        layers.push(Layer {
            n_in: w[0],
            n_out: w[1],
            weights,
            params,
        });
    }
    CubaNetwork::from_layers(layers, dropout)
}

pub fn checkpoint_sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_checkpoint(path: &Path, net: &CubaNetwork, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &encode_checkpoint(net))?;
    write_atomic(&checkpoint_sidecar(path), &serde_json::to_vec_pretty(meta)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(CubaNetwork, Option<CheckpointMeta>)> {
    let net = decode_checkpoint(&fs::read(path)?)?;
    let side = checkpoint_sidecar(path);
    let meta = if side.exists() {
        Some(serde_json::from_slice(&fs::read(side)?)?)
    } else {
        None
    };
    Ok((net, meta))
}
