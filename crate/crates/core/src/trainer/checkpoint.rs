//! Binary checkpoint and code-table files.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! b"UVACKPT\0" | u32 version | u64 manifest length | manifest JSON
//! repeated: u32 name length | name | u64 value count | f32 values
//! 32-byte SHA-256 of everything above
//! ```
//!
//! Code file layout: `b"UVACODE\0" | u32 header length | header JSON | f32
//! values` with the geometry table first, then the appearance table.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::body_model::{AnchorMesh, Skeleton};
use crate::canonical_field::StructuredCodes;
use crate::error::{Result, UvaError};
use crate::model::{Avatar, ModelConfig, ModelParams, SwapAppearance, PARAM_BLOCKS};
use crate::nn::Mlp;

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"UVACKPT\0";
const CODE_MAGIC: &[u8; 8] = b"UVACODE\0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub iteration: u64,
    pub skeleton: Skeleton,
    pub mesh: AnchorMesh,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub vertex_order_hash: String,
    pub blocks: Vec<BlockInfo>,
    pub swapped: bool,
}

fn push_block(out: &mut Vec<u8>, name: &str, values: impl ExactSizeIterator<Item = f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn named_blocks(avatar: &Avatar<f32>) -> Vec<(String, Vec<f32>)> {
    let mut blocks: Vec<(String, Vec<f32>)> = PARAM_BLOCKS
        .iter()
        .zip(avatar.params.blocks())
        .map(|(n, b)| (n.to_string(), b.to_vec()))
        .collect();
    if let Some(s) = &avatar.swap {
        blocks.push(("swap.color".into(), s.color.params.clone()));
        blocks.push(("swap.shading".into(), s.shading.params.clone()));
        blocks.push((
            "swap.vertex_weight".into(),
            s.vertex_weight.iter().map(|w| *w as f32).collect(),
        ));
    }
    blocks
}

/// Serialises the avatar; the bytes depend only on its state.
pub fn checkpoint_bytes(avatar: &Avatar<f32>, train: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let blocks = named_blocks(avatar);
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        iteration: avatar.iteration,
        skeleton: avatar.skeleton().clone(),
        mesh: avatar.mesh().clone(),
        model: avatar.config.clone(),
        train: train.cloned(),
        vertex_order_hash: avatar.mesh().topology_hash(),
        blocks: blocks
            .iter()
            .map(|(n, b)| BlockInfo {
                name: n.clone(),
                len: b.len(),
            })
            .collect(),
        swapped: avatar.swap.is_some(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| UvaError::Load(format!("manifest: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, b) in &blocks {
        push_block(&mut out, name, b.iter().copied());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn save_checkpoint(avatar: &Avatar<f32>, train: Option<&TrainConfig>, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(avatar, train)?;
    std::fs::write(path, bytes).map_err(|e| UvaError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| UvaError::Load("file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| UvaError::Load("length does not fit in memory".into()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| UvaError::Load("block too large".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect())
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(Avatar<f32>, CheckpointManifest)> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(UvaError::Load("not a checkpoint file".into()));
    }
    let mut r = Reader { bytes, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(UvaError::Load(format!(
            "checkpoint format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(UvaError::Load("checksum mismatch (file truncated or corrupt)".into()));
    }
    let mut r = Reader { bytes: body, pos: 12 };
    let json_len = r.len()?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(r.take(json_len)?).map_err(|e| UvaError::Load(format!("manifest: {e}")))?;
    let mut blocks = std::collections::HashMap::new();
    while r.pos < body.len() {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| UvaError::Load("block name is not utf-8".into()))?;
        let n = r.len()?;
        blocks.insert(name, r.f32s(n)?);
    }
    for b in &manifest.blocks {
        match blocks.get(&b.name) {
            Some(v) if v.len() == b.len => {}
            _ => return Err(UvaError::Load(format!("block {} missing or wrong length", b.name))),
        }
    }
    let mut take = |name: &str| {
        blocks
            .remove(name)
            .ok_or_else(|| UvaError::Load(format!("block {name} missing")))
    };
    let cfg = &manifest.model;
    let cond = 3 * (manifest.skeleton.bone_count() - 1);
    let mlp = |spec, params: Vec<f32>, name: &str| {
        Mlp::with_params(spec, params).ok_or_else(|| UvaError::Load(format!("block {name} does not match its network")))
    };
    let delta = mlp(cfg.motion.delta_spec(cfg.field.pe_frequencies, cond), take("delta")?, "delta")?;
    let density = mlp(cfg.field.density_spec(), take("density")?, "density")?;
    let color = mlp(cfg.field.color_spec(), take("color")?, "color")?;
    let shading = mlp(cfg.field.shading_spec(cond), take("shading")?, "shading")?;
    let codes = StructuredCodes {
        dim: cfg.field.code_dim,
        geo: take("codes.geo")?,
        rgb: take("codes.rgb")?,
    };
    let swap = if manifest.swapped {
        Some(SwapAppearance {
            color: mlp(cfg.field.color_spec(), take("swap.color")?, "swap.color")?,
            shading: mlp(cfg.field.shading_spec(cond), take("swap.shading")?, "swap.shading")?,
            vertex_weight: take("swap.vertex_weight")?.into_iter().map(|w| w as f64).collect(),
        })
    } else {
        None
    };
    let params = ModelParams {
        delta,
        nets: crate::canonical_field::FieldNetworks { density, color, shading },
        codes,
    };
    let avatar = Avatar::from_parts(
        manifest.skeleton.clone(),
        manifest.mesh.clone(),
        manifest.model.clone(),
        params,
        swap,
        manifest.iteration,
    )
    .map_err(|e| UvaError::Load(e.to_string()))?;
    Ok((avatar, manifest))
}

pub fn load_checkpoint(path: &Path) -> Result<(Avatar<f32>, CheckpointManifest)> {
    let bytes = std::fs::read(path).map_err(|e| UvaError::io(path, e))?;
    parse_checkpoint(&bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeHeader {
    pub dtype: String,
    /// `[tables, vertices, code_dim]`.
    pub shape: [usize; 3],
    pub tables: Vec<String>,
    pub vertex_order_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodeFile {
    pub header: CodeHeader,
    pub codes: StructuredCodes<f32>,
}

pub fn export_codes(avatar: &Avatar<f32>, path: &Path) -> Result<CodeHeader> {
    let codes = &avatar.params.codes;
    let header = CodeHeader {
        dtype: "float32".into(),
        shape: [2, codes.vertex_count(), codes.dim],
        tables: vec!["geo".into(), "rgb".into()],
        vertex_order_hash: avatar.mesh().topology_hash(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| UvaError::json(path, e))?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * (codes.geo.len() + codes.rgb.len()));
    out.extend_from_slice(CODE_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in codes.geo.iter().chain(&codes.rgb) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| UvaError::io(path, e))?;
    Ok(header)
}

pub fn import_codes(path: &Path) -> Result<CodeFile> {
    let bytes = std::fs::read(path).map_err(|e| UvaError::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != CODE_MAGIC {
        return Err(UvaError::Load(format!("{} is not a code file", path.display())));
    }
    let mut r = Reader { bytes: &bytes, pos: 8 };
    let n = r.u32()? as usize;
    let header: CodeHeader = serde_json::from_slice(r.take(n)?).map_err(|e| UvaError::json(path, e))?;
    if header.dtype != "float32" || header.shape[0] != 2 {
        return Err(UvaError::Load(format!("unsupported code layout {:?} {:?}", header.dtype, header.shape)));
    }
    let per = header.shape[1] * header.shape[2];
    let geo = r.f32s(per)?;
    let rgb = r.f32s(per)?;
    if r.pos != bytes.len() {
        return Err(UvaError::Load("trailing bytes after code tables".into()));
    }
    Ok(CodeFile {
        codes: StructuredCodes {
            dim: header.shape[2],
            geo,
            rgb,
        },
        header,
    })
}
