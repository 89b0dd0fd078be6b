//! Checkpoint container: a flat binary file holding named f32 tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "PTCK"
//! version u8       1
//! count   u32      number of records
//! record  repeated:
//!   name_len u16
//!   name     UTF-8 bytes
//!   rank     u8
//!   dims     u32 x rank
//!   data     f32 x prod(dims)
//! ```
//!
//! The model configuration is stored first as reserved `__config.*` records
//! (one f32 scalar each), so a checkpoint is self-describing; the network
//! parameters follow in construction order. Save/load round-trips are
//! bit-exact and re-serialization is byte-identical.

use std::path::Path;

use thiserror::Error;

use super::config::{FusionKind, ModelConfig, ModelError, RefineKind};
use super::PanTinyModel;

const MAGIC: &[u8; 4] = b"PTCK";
const VERSION: u8 = 1;
const CONFIG_PREFIX: &str = "__config.";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint is missing {0}")]
    Missing(String),
    #[error("checkpoint parameter {0} does not match the model")]
    ParamMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn fusion_index(kind: FusionKind) -> f32 {
    match kind {
        FusionKind::EnhancedConv => 0.0,
        FusionKind::Conv1x1 => 1.0,
        FusionKind::ChannelAttn => 2.0,
        FusionKind::GatedConv => 3.0,
    }
}

fn fusion_from_index(v: f32) -> Option<FusionKind> {
    match v as i64 {
        0 => Some(FusionKind::EnhancedConv),
        1 => Some(FusionKind::Conv1x1),
        2 => Some(FusionKind::ChannelAttn),
        3 => Some(FusionKind::GatedConv),
        _ => None,
    }
}

fn refine_index(kind: RefineKind) -> f32 {
    match kind {
        RefineKind::Conv => 0.0,
        RefineKind::ChannelAttn => 1.0,
        RefineKind::LargeConv => 2.0,
    }
}

fn refine_from_index(v: f32) -> Option<RefineKind> {
    match v as i64 {
        0 => Some(RefineKind::Conv),
        1 => Some(RefineKind::ChannelAttn),
        2 => Some(RefineKind::LargeConv),
        _ => None,
    }
}

/// The `(name, value)` scalar records that encode a config.
fn config_records(c: &ModelConfig) -> Vec<(String, f32)> {
    let b = |v: bool| if v { 1.0 } else { 0.0 };
    vec![
        ("__config.channels".into(), c.channels as f32),
        ("__config.num_blocks".into(), c.num_blocks as f32),
        ("__config.ffn_expansion".into(), c.ffn_expansion),
        ("__config.attn_heads".into(), c.attn_heads as f32),
        ("__config.fusion_kind".into(), fusion_index(c.fusion_kind)),
        ("__config.refine_kind".into(), refine_index(c.refine_kind)),
        ("__config.ms_bands".into(), c.ms_bands as f32),
        ("__config.upsample_scale".into(), c.upsample_scale as f32),
        ("__config.global_residual".into(), b(c.global_residual)),
        ("__config.fuse_before_body".into(), b(c.fuse_before_body)),
    ]
}

fn write_record(out: &mut Vec<u8>, name: &str, dims: &[u32], data: &[f32]) {
    debug_assert_eq!(dims.iter().product::<u32>() as usize, data.len());
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize a model (config plus all parameters) to checkpoint bytes.
pub fn checkpoint_bytes(model: &PanTinyModel) -> Vec<u8> {
    let config = config_records(model.config());
    let params = model.parameters();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&((config.len() + params.len()) as u32).to_le_bytes());
    for (name, value) in &config {
        write_record(&mut out, name, &[1], &[*value]);
    }
    for (name, tensor) in &params {
        let s = tensor.shape();
        let dims = [s.b as u32, s.c as u32, s.h as u32, s.w as u32];
        write_record(&mut out, name, &dims, tensor.data());
    }
    out
}

pub fn save_checkpoint(model: &PanTinyModel, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Record {
    name: String,
    dims: Vec<u32>,
    data: Vec<f32>,
}

fn parse_records(bytes: &[u8]) -> Result<Vec<Record>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = r.u32("record count")?;
    let mut records = Vec::with_capacity(count as usize);
    for i in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| CheckpointError::Corrupt(format!("record {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")?);
        }
        let numel: usize = dims.iter().map(|&d| d as usize).product();
        let raw = r.take(numel * 4, &format!("data of {name}"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(Record { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes after the last record",
            bytes.len() - r.pos
        )));
    }
    Ok(records)
}

fn config_from_records(records: &[Record]) -> Result<ModelConfig, CheckpointError> {
    let get = |field: &str| -> Result<f32, CheckpointError> {
        let full = format!("{CONFIG_PREFIX}{field}");
        records
            .iter()
            .find(|r| r.name == full)
            .filter(|r| r.data.len() == 1)
            .map(|r| r.data[0])
            .ok_or(CheckpointError::Missing(full))
    };
    let fusion_raw = get("fusion_kind")?;
    let refine_raw = get("refine_kind")?;
    Ok(ModelConfig {
        channels: get("channels")? as usize,
        num_blocks: get("num_blocks")? as usize,
        ffn_expansion: get("ffn_expansion")?,
        attn_heads: get("attn_heads")? as usize,
        fusion_kind: fusion_from_index(fusion_raw).ok_or_else(|| {
            CheckpointError::Corrupt(format!("unknown fusion_kind index {fusion_raw}"))
        })?,
        refine_kind: refine_from_index(refine_raw).ok_or_else(|| {
            CheckpointError::Corrupt(format!("unknown refine_kind index {refine_raw}"))
        })?,
        ms_bands: get("ms_bands")? as usize,
        upsample_scale: get("upsample_scale")? as usize,
        global_residual: get("global_residual")? != 0.0,
        fuse_before_body: get("fuse_before_body")? != 0.0,
    })
}

/// Rebuild a model from checkpoint bytes. Every model parameter must be
/// present with matching dimensions, and no unknown records are allowed.
pub fn load_checkpoint_bytes(bytes: &[u8]) -> Result<PanTinyModel, CheckpointError> {
    let records = parse_records(bytes)?;
    let config = config_from_records(&records)?;
    let mut model = PanTinyModel::build(config, 0)?;

    let expected: std::collections::HashMap<String, [u32; 4]> = model
        .parameters()
        .into_iter()
        .map(|(name, t)| {
            let s = t.shape();
            (name, [s.b as u32, s.c as u32, s.h as u32, s.w as u32])
        })
        .collect();

    let mut restored = 0usize;
    for record in &records {
        if record.name.starts_with(CONFIG_PREFIX) {
            continue;
        }
        let dims = expected
            .get(&record.name)
            .ok_or_else(|| CheckpointError::ParamMismatch(record.name.clone()))?;
        if record.dims != dims {
            return Err(CheckpointError::ParamMismatch(record.name.clone()));
        }
        model
            .set_param(&record.name, &record.data)
            .map_err(|_| CheckpointError::ParamMismatch(record.name.clone()))?;
        restored += 1;
    }
    if restored != expected.len() {
        let seen: std::collections::HashSet<&str> =
            records.iter().map(|r| r.name.as_str()).collect();
        let missing = expected
            .keys()
            .find(|name| !seen.contains(name.as_str()))
            .cloned()
            .unwrap_or_else(|| "a parameter".to_string());
        return Err(CheckpointError::Missing(missing));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<PanTinyModel, CheckpointError> {
    load_checkpoint_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_model() -> PanTinyModel {
        let config = ModelConfig {
            channels: 8,
            num_blocks: 2,
            attn_heads: 2,
            upsample_scale: 2,
            fusion_kind: FusionKind::GatedConv,
            refine_kind: RefineKind::LargeConv,
            global_residual: false,
            ..ModelConfig::small()
        };
        let mut model = PanTinyModel::build(config, 77).unwrap();
        // Non-init values so restoring actually proves data flow.
        model.set_param("encoder.bias", &vec![0.125; 8]).unwrap();
        model
    }

    #[test]
    fn round_trip_restores_config_and_every_bit() {
        let model = test_model();
        let bytes = checkpoint_bytes(&model);
        let loaded = load_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(loaded.config(), model.config());
        let a = model.parameters();
        let b = loaded.parameters();
        assert_eq!(a.len(), b.len());
        for ((na, ta), (nb, tb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            let bits_a: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{na}");
        }
    }

    #[test]
    fn reserialization_is_byte_identical() {
        let model = test_model();
        let bytes = checkpoint_bytes(&model);
        let again = checkpoint_bytes(&load_checkpoint_bytes(&bytes).unwrap());
        assert_eq!(bytes, again);
    }

    #[test]
    fn header_layout_is_as_documented() {
        let model = test_model();
        let bytes = checkpoint_bytes(&model);
        assert_eq!(&bytes[..4], b"PTCK");
        assert_eq!(bytes[4], 1);
        let count = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]);
        assert_eq!(count as usize, model.parameters().len() + 10);
    }

    #[test]
    fn file_round_trip_works() {
        let model = test_model();
        let dir = std::env::temp_dir().join("ptck-roundtrip-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ptck");
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config(), model.config());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_magic_version_and_truncation_are_rejected() {
        let model = test_model();
        let bytes = checkpoint_bytes(&model);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(load_checkpoint_bytes(&bad_magic), Err(CheckpointError::BadMagic)));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(
            load_checkpoint_bytes(&bad_version),
            Err(CheckpointError::UnsupportedVersion(9))
        ));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(load_checkpoint_bytes(truncated), Err(CheckpointError::Corrupt(_))));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(load_checkpoint_bytes(&trailing), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn missing_parameter_is_reported() {
        let model = test_model();
        let full = checkpoint_bytes(&model);
        // Rebuild the file with the last parameter record dropped.
        let records = parse_records(&full).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&((records.len() - 1) as u32).to_le_bytes());
        for record in &records[..records.len() - 1] {
            write_record(&mut out, &record.name, &record.dims, &record.data);
        }
        assert!(matches!(load_checkpoint_bytes(&out), Err(CheckpointError::Missing(_))));
    }
}
