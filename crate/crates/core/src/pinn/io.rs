//! Model file format (all integers and floats little-endian):
//!
//! ```text
//! magic          8 bytes  "GRIDPINN"
//! version        u32      MODEL_FORMAT_VERSION
//! n_sizes        u32      number of layer sizes (layers + 1)
//! sizes          n_sizes x u32
//! activation     u8       1 = tanh (hidden layers)
//! output_mode    u8       0 = linear, 1 = activated
//! output_scale   2 x f64
//! input_lo       9 x f64
//! input_hi       9 x f64
//! params         f64 x n_params   (per layer: row-major weights, then biases)
//! meta_len       u32
//! meta           meta_len bytes of JSON: machine, f_base, domain, train, seed
//! checksum       32 bytes SHA-256 of everything above
//! ```

use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::domain::{DomainBox, N_INPUTS, N_OUTPUTS};
use super::mlp::{MlpModel, ModelMeta, OutputMode};
use super::train::TrainConfig;
use crate::machine::MachineParams;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GRIDPINN";
const ACT_TANH: u8 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a model file")]
    BadMagic,
    #[error("model format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("model file checksum mismatch")]
    Checksum,
}

#[derive(Serialize, Deserialize)]
struct MetaRecord {
    machine: MachineParams,
    f_base: f64,
    domain: DomainBox,
    train: Option<TrainConfig>,
    seed: u64,
}

/// Serializes a model into bytes.
pub fn write_model(m: &MlpModel) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    let sizes = m.layer_sizes();
    b.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for s in &sizes {
        b.extend_from_slice(&(*s as u32).to_le_bytes());
    }
    b.push(ACT_TANH);
    b.push(match m.output_mode {
        OutputMode::Linear => 0,
        OutputMode::Activated => 1,
    });
    let floats = m.output_scale.iter().chain(&m.input_lo).chain(&m.input_hi);
    for v in floats.chain(m.params_flat().iter()) {
        b.extend_from_slice(&v.to_le_bytes());
    }
    let meta = MetaRecord {
        machine: m.meta.machine.clone(),
        f_base: m.meta.f_base,
        domain: m.meta.domain.clone(),
        train: m.meta.train.clone(),
        seed: m.meta.seed,
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    b.extend_from_slice(&(json.len() as u32).to_le_bytes());
    b.extend_from_slice(&json);
    let digest = Sha256::digest(&b);
    b.extend_from_slice(&digest);
    b
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelIoError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelIoError::Corrupt("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelIoError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelIoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelIoError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| ModelIoError::Corrupt("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Parses a model from bytes.
pub fn read_model(bytes: &[u8]) -> Result<MlpModel, ModelIoError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let mut c = Cursor { buf: bytes, pos: MAGIC.len() };
    let version = c.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(ModelIoError::Version { found: version, expected: MODEL_FORMAT_VERSION });
    }
    if bytes.len() < 32 + c.pos {
        return Err(ModelIoError::Corrupt("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(ModelIoError::Checksum);
    }
    let mut c = Cursor { buf: body, pos: c.pos };
    let n_sizes = c.u32()? as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(ModelIoError::Corrupt(format!("implausible layer count {n_sizes}")));
    }
    let sizes = (0..n_sizes).map(|_| c.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
    if sizes[0] != N_INPUTS || sizes[n_sizes - 1] != N_OUTPUTS || sizes.iter().any(|&s| s == 0 || s > 1 << 16) {
        return Err(ModelIoError::Corrupt(format!("unsupported layer sizes {sizes:?}")));
    }
    if c.u8()? != ACT_TANH {
        return Err(ModelIoError::Corrupt("unknown activation".into()));
    }
    let output_mode = match c.u8()? {
        0 => OutputMode::Linear,
        1 => OutputMode::Activated,
        t => return Err(ModelIoError::Corrupt(format!("unknown output mode {t}"))),
    };
    let head = c.f64s(N_OUTPUTS + 2 * N_INPUTS)?;
    let placeholder = ModelMeta {
        machine: MachineParams {
            h: 1.0,
            d: 0.0,
            xd: 1.0,
            xd_p: 1.0,
            xq: 1.0,
            xq_p: 1.0,
            rs: 0.0,
            td0_p: 1.0,
            tq0_p: 1.0,
            tm: 0.0,
            efd: 0.0,
            model: crate::machine::MachineModel::Simplified,
        },
        f_base: 60.0,
        domain: DomainBox::default(),
        train: None,
        seed: 0,
    };
    let mut m = MlpModel::zeros(&sizes[1..n_sizes - 1], output_mode, placeholder);
    m.output_scale.copy_from_slice(&head[..N_OUTPUTS]);
    m.input_lo.copy_from_slice(&head[N_OUTPUTS..N_OUTPUTS + N_INPUTS]);
    m.input_hi.copy_from_slice(&head[N_OUTPUTS + N_INPUTS..]);
    let params = c.f64s(m.n_params())?;
    m.set_params_flat(&params);
    let meta_len = c.u32()? as usize;
    let meta: MetaRecord = serde_json::from_slice(c.take(meta_len)?)
        .map_err(|e| ModelIoError::Corrupt(format!("metadata: {e}")))?;
    if c.pos != body.len() {
        return Err(ModelIoError::Corrupt("trailing bytes".into()));
    }
    m.meta = ModelMeta {
        machine: meta.machine,
        f_base: meta.f_base,
        domain: meta.domain,
        train: meta.train,
        seed: meta.seed,
    };
    m.check().map_err(ModelIoError::Corrupt)?;
    Ok(m)
}

pub fn save_model(m: &MlpModel, path: &Path) -> Result<(), ModelIoError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&write_model(m))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel, ModelIoError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pinn::mlp::tests::{random_inputs, random_model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = random_model(&[7, 5, 3], 8, OutputMode::Activated);
        m.meta.train = Some(TrainConfig { delay: Some(3), ..Default::default() });
        m.meta.seed = 99;
        m.output_scale = [0.1 + 1e-17, 3.3];
        let back = read_model(&write_model(&m)).unwrap();
        assert_eq!(back, m);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let x = random_inputs(&mut rng).to_array();
            assert_eq!(m.forward(&x).map(f64::to_bits), back.forward(&x).map(f64::to_bits));
        }
    }

    #[test]
    fn truncated_and_tampered_files_are_rejected() {
        let bytes = write_model(&random_model(&[4], 1, OutputMode::Linear));
        for cut in [0, 5, 12, 40, bytes.len() - 1] {
            assert!(read_model(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut t = bytes.clone();
        t[100] ^= 1;
        assert!(matches!(read_model(&t), Err(ModelIoError::Checksum)));
        let mut v = bytes.clone();
        v[8] = 7;
        assert!(matches!(read_model(&v), Err(ModelIoError::Version { found: 7, .. })));
        assert!(matches!(read_model(b"not a model at all"), Err(ModelIoError::BadMagic)));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        let m = random_model(&[3], 2, OutputMode::Linear);
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }
}
