//! Model checkpoint container.
//!
//! Layout: magic "DLAB", u32 LE format version, u32 LE header length, a JSON
//! header describing the payload, then raw little-endian f64 blocks for each
//! parameter in header order. The decoder treats the input as untrusted:
//! every length, shape, and value is validated before allocation or use.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{make_schedule, DenoiserModel, ModelConfig, NoiseSchedule, ScheduleSpec, Vocab};
use crate::error::{Error, Result};
use crate::gradcore::{ParamStore, Tensor};

pub const MAGIC: [u8; 4] = *b"DLAB";
pub const FORMAT_VERSION: u32 = 1;

/// Caps keep a hostile header from requesting absurd allocations.
const MAX_HEADER_BYTES: usize = 16 << 20;
const MAX_PARAM_ELEMENTS: usize = 100_000_000;
const MAX_DIM: usize = 10_000_000;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Denoiser,
    Embedder,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamHeader {
    pub name: String,
    pub group: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: PayloadKind,
    pub model: Option<ModelConfig>,
    pub vocab: Option<Vocab>,
    pub schedule: Option<ScheduleSpec>,
    /// Free-form provenance: producing stage, parent checkpoint hash, etc.
    #[serde(default)]
    pub meta: std::collections::BTreeMap<String, String>,
    pub params: Vec<ParamHeader>,
}

/// A decoded container before interpretation as a specific model kind.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
}

pub fn encode(header: &CheckpointHeader, params: &ParamStore) -> Result<Vec<u8>> {
    if header.params.len() != params.len() {
        return Err(Error::config("header/param count mismatch"));
    }
    for (ph, pe) in header.params.iter().zip(params.entries()) {
        if ph.name != pe.name || ph.shape != pe.tensor.shape() {
            return Err(Error::config(format!(
                "header entry {} does not match stored tensor",
                ph.name
            )));
        }
    }
    let head = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(12 + head.len() + params.total_elements() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(head.len() as u32).to_le_bytes());
    out.extend_from_slice(&head);
    for e in params.entries() {
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Strict decode of an untrusted byte buffer.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let need = |n: usize, what: &str| -> Result<()> {
        if bytes.len() < n {
            Err(Error::Format(format!("truncated before {what}")))
        } else {
            Ok(())
        }
    };
    need(12, "header length")?;
    if bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let head_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if head_len > MAX_HEADER_BYTES {
        return Err(Error::Format(format!("header length {head_len} too large")));
    }
    need(12 + head_len, "header body")?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..12 + head_len])
        .map_err(|e| Error::Format(format!("header json: {e}")))?;

    let mut total: usize = 0;
    for p in &header.params {
        if p.shape.is_empty() || p.shape.iter().any(|&d| d == 0 || d > MAX_DIM) {
            return Err(Error::Format(format!("bad shape for {}", p.name)));
        }
        let n = p
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("shape overflow for {}", p.name)))?;
        total = total
            .checked_add(n)
            .ok_or_else(|| Error::Format("total element overflow".into()))?;
        if total > MAX_PARAM_ELEMENTS {
            return Err(Error::Format("parameter payload too large".into()));
        }
    }
    let payload = &bytes[12 + head_len..];
    if payload.len() != total * 8 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header wants {}",
            payload.len(),
            total * 8
        )));
    }

    let mut store = ParamStore::new();
    let mut off = 0usize;
    for p in &header.params {
        let n: usize = p.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let s = off + i * 8;
            let v = f64::from_le_bytes(payload[s..s + 8].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "non-finite value in parameter {}",
                    p.name
                )));
            }
            data.push(v);
        }
        off += n * 8;
        store.insert(&p.name, &p.group, Tensor::new(p.shape.clone(), data)?)?;
    }
    Ok(Checkpoint {
        header,
        params: store,
    })
}

fn header_for_denoiser(
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    meta: std::collections::BTreeMap<String, String>,
) -> CheckpointHeader {
    CheckpointHeader {
        kind: PayloadKind::Denoiser,
        model: Some(model.cfg),
        vocab: Some(model.vocab.clone()),
        schedule: Some(schedule.spec()),
        meta,
        params: model
            .params
            .entries()
            .iter()
            .map(|e| ParamHeader {
                name: e.name.clone(),
                group: e.group.clone(),
                shape: e.tensor.shape().to_vec(),
            })
            .collect(),
    }
}

pub fn encode_denoiser(
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    meta: std::collections::BTreeMap<String, String>,
) -> Result<Vec<u8>> {
    encode(&header_for_denoiser(model, schedule, meta), &model.params)
}

pub fn save_denoiser(
    path: &Path,
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    meta: std::collections::BTreeMap<String, String>,
) -> Result<String> {
    let bytes = encode_denoiser(model, schedule, meta)?;
    let hash = hex_sha256(&bytes);
    fs::write(path, &bytes)?;
    Ok(hash)
}

/// Decoded denoiser plus its schedule and the container hash.
#[derive(Debug)]
pub struct LoadedDenoiser {
    pub model: DenoiserModel,
    pub schedule: NoiseSchedule,
    pub meta: std::collections::BTreeMap<String, String>,
    pub file_hash: String,
}

pub fn decode_denoiser(bytes: &[u8]) -> Result<LoadedDenoiser> {
    let ck = decode(bytes)?;
    if ck.header.kind != PayloadKind::Denoiser {
        return Err(Error::Format("checkpoint is not a denoiser".into()));
    }
    let cfg = ck
        .header
        .model
        .ok_or_else(|| Error::Format("missing model config".into()))?;
    let vocab = ck
        .header
        .vocab
        .ok_or_else(|| Error::Format("missing vocab".into()))?;
    let sspec = ck
        .header
        .schedule
        .ok_or_else(|| Error::Format("missing schedule".into()))?;
    let schedule = make_schedule(sspec.t_count, sspec.beta_start, sspec.beta_end)?;
    let model = DenoiserModel {
        cfg,
        vocab,
        params: ck.params,
    };
    validate_denoiser_shapes(&model)?;
    Ok(LoadedDenoiser {
        model,
        schedule,
        meta: ck.header.meta,
        file_hash: hex_sha256(bytes),
    })
}

pub fn load_denoiser(path: &Path) -> Result<LoadedDenoiser> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Dependency(format!("checkpoint {} unreadable: {e}", path.display()))
    })?;
    decode_denoiser(&bytes)
}

/// The header is attacker-controlled; shapes must agree with the declared
/// architecture before any forward pass indexes into them.
fn validate_denoiser_shapes(m: &DenoiserModel) -> Result<()> {
    m.cfg.validate()?;
    let d = m.cfg.input_dim();
    let h = m.cfg.hidden;
    let mut want: Vec<(String, Vec<usize>)> = vec![
        ("time_proj.w".into(), vec![m.cfg.time_features, h]),
        ("time_proj.b".into(), vec![h]),
        ("cond_embed.table".into(), vec![m.vocab.len(), m.cfg.embed_dim]),
        ("cond_proj.w".into(), vec![m.cfg.embed_dim, h]),
        ("cond_proj.b".into(), vec![h]),
        ("trunk.in.w".into(), vec![d, h]),
        ("trunk.in.b".into(), vec![h]),
    ];
    for b in 0..m.cfg.blocks {
        want.push((format!("trunk.block{b}.w1"), vec![h, h]));
        want.push((format!("trunk.block{b}.b1"), vec![h]));
        want.push((format!("trunk.block{b}.w2"), vec![h, h]));
        want.push((format!("trunk.block{b}.b2"), vec![h]));
    }
    want.push(("trunk.out.w".into(), vec![h, d]));
    want.push(("trunk.out.b".into(), vec![d]));

    if m.params.len() != want.len() {
        return Err(Error::Format(format!(
            "expected {} parameters, found {}",
            want.len(),
            m.params.len()
        )));
    }
    for (name, shape) in want {
        let t = m
            .params
            .get(&name)
            .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Format(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                t.shape(),
                shape
            )));
        }
    }
    Ok(())
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in d {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex_sha256(&fs::read(path)?))
}
