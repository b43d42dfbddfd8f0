use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Scalar, Tensor};

const MAGIC: &[u8; 5] = b"GZRD1";
/// Header lengths beyond this are treated as corruption.
const MAX_HEADER: u64 = 1 << 24;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

/// The JSON header of a checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub precision: Precision,
    pub init_seed: u64,
    pub activation: String,
    pub init: String,
    pub tensors: BTreeMap<String, TensorEntry>,
}

impl CheckpointMeta {
    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.shape.iter().product::<usize>()).sum()
    }
}

fn corrupt<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::CorruptCheckpoint(msg.into()))
}

pub fn write_checkpoint<T: Scalar, W: Write>(w: &mut W, model: &Model<T>) -> Result<()> {
    let width = T::PRECISION.byte_width();
    let mut tensors = BTreeMap::new();
    let mut offset = 0;
    for (spec, p) in model.layout().iter().zip(model.params()) {
        tensors.insert(
            spec.name.clone(),
            TensorEntry {
                shape: p.shape().to_vec(),
                offset,
            },
        );
        offset += p.len() * width;
    }
    let meta = CheckpointMeta {
        config: model.config().clone(),
        precision: T::PRECISION,
        init_seed: model.init_seed(),
        activation: "gelu_tanh".into(),
        init: "kaiming_uniform".into(),
        tensors,
    };
    let header = serde_json::to_vec(&meta)?;
    let mut payload = Vec::with_capacity(offset);
    for p in model.params() {
        for &v in p.data() {
            v.write_le(&mut payload);
        }
    }
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&payload)?;
    Ok(())
}

/// Reads the header, leaving the reader at the payload.
pub fn read_header<R: Read>(r: &mut R) -> Result<CheckpointMeta> {
    let mut magic = [0u8; 5];
    if r.read_exact(&mut magic).is_err() || &magic != MAGIC {
        return corrupt("bad magic bytes");
    }
    let mut len = [0u8; 8];
    if r.read_exact(&mut len).is_err() {
        return corrupt("truncated header length");
    }
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return corrupt(format!("header length {len} is implausible"));
    }
    let mut header = vec![0u8; len as usize];
    if r.read_exact(&mut header).is_err() {
        return corrupt("truncated header");
    }
    serde_json::from_slice(&header).or_else(|e| corrupt(format!("header: {e}")))
}

/// Loads a model, converting the payload to `T` if stored at the other
/// precision.
pub fn read_checkpoint<T: Scalar, R: Read>(r: &mut R) -> Result<Model<T>> {
    let meta = read_header(r)?;
    if let Err(e) = meta.config.validate() {
        return corrupt(format!("config: {e}"));
    }
    let layout = super::param_layout(&meta.config)?;
    if layout.len() != meta.tensors.len() {
        return corrupt(format!(
            "{} tensors, config implies {}",
            meta.tensors.len(),
            layout.len()
        ));
    }
    let width = meta.precision.byte_width();
    let mut offset = 0;
    for spec in &layout {
        match meta.tensors.get(&spec.name) {
            Some(e) if e.shape == spec.shape && e.offset == offset => {}
            Some(e) => {
                return corrupt(format!(
                    "{} is {:?} at {}, expected {:?} at {offset}",
                    spec.name, e.shape, e.offset, spec.shape
                ))
            }
            None => return corrupt(format!("missing tensor {}", spec.name)),
        }
        offset += spec.len() * width;
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != offset {
        return corrupt(format!("payload is {} bytes, expected {offset}", payload.len()));
    }
    let mut params = Vec::with_capacity(layout.len());
    let mut chunks = payload.chunks_exact(width);
    for spec in &layout {
        let data: Vec<T> = chunks
            .by_ref()
            .take(spec.len())
            .map(|b| match meta.precision {
                Precision::F32 => T::of(f32::read_le(b) as f64),
                Precision::F64 => T::of(f64::read_le(b)),
            })
            .collect();
        params.push(Tensor::new(spec.shape.clone(), data)?);
    }
    Model::from_parts(meta.config, meta.init_seed, params)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSize;

    fn bytes<T: Scalar>(m: &Model<T>) -> Vec<u8> {
        let mut b = Vec::new();
        write_checkpoint(&mut b, m).unwrap();
        b
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Model::<f32>::new(ModelConfig::new(ModelSize::Xs, 2), 5).unwrap();
        let b = bytes(&m);
        let back: Model<f32> = read_checkpoint(&mut b.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(bytes(&back), b);
    }

    #[test]
    fn damage_is_detected() {
        let m = Model::<f32>::new(ModelConfig::new(ModelSize::Xs, 2), 5).unwrap();
        let b = bytes(&m);
        let mut bad = b.clone();
        bad[0] ^= 1;
        assert!(matches!(
            read_checkpoint::<f32, _>(&mut bad.as_slice()),
            Err(Error::CorruptCheckpoint(_))
        ));
        let short = &b[..b.len() - 1];
        assert!(read_checkpoint::<f32, _>(&mut &short[..]).is_err());
        let mut long = b.clone();
        long.push(0);
        assert!(read_checkpoint::<f32, _>(&mut long.as_slice()).is_err());
    }

    #[test]
    fn header_counts_match_the_model() {
        let m = Model::<f64>::new(ModelConfig::new(ModelSize::S, 4), 1).unwrap();
        let b = bytes(&m);
        let meta = read_header(&mut b.as_slice()).unwrap();
        assert_eq!(meta.param_count(), m.param_count());
        assert_eq!(meta.precision, Precision::F64);
        let as_f32: Model<f32> = read_checkpoint(&mut b.as_slice()).unwrap();
        assert_eq!(as_f32.param_count(), m.param_count());
    }
}
