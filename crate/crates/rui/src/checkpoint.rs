//! Checkpoint files: magic `RUICKPT1`, a little-endian `u64` header length,
//! a JSON header (format version, the full config text, and each
//! parameter's name, shape and element offset), then all parameters as
//! little-endian f32 in header order.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use rui_core::compute::{ParamStore, Tensor};
use rui_core::config::RuiConfig;
use rui_core::model::RuiModel;
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 8] = b"RUICKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: String,
    params: Vec<Entry>,
}

pub fn encode(model: &RuiModel) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for (name, t) in model.params.iter() {
        entries.push(Entry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        version: VERSION,
        config: model.config.to_text(),
        params: entries,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<RuiModel> {
    ensure!(
        bytes.len() >= 16 && &bytes[..8] == MAGIC,
        "not a checkpoint file"
    );
    let hlen = u64::from_le_bytes(bytes[8..16].try_into()?) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .context("truncated checkpoint header")?;
    let header: Header = serde_json::from_slice(body)?;
    if header.version != VERSION {
        bail!(
            "checkpoint format version {} is not supported",
            header.version
        );
    }
    let config = RuiConfig::parse(&header.config)?;
    let data = &bytes[16 + hlen..];
    let mut params = ParamStore::new();
    for e in &header.params {
        let n: usize = e.shape.iter().product();
        let raw = data
            .get(4 * e.offset..4 * (e.offset + n))
            .with_context(|| format!("checkpoint truncated in {}", e.name))?;
        let vals = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(&e.name, Tensor::new(&e.shape, vals)?)?;
    }
    Ok(RuiModel::from_params(config, params)?)
}

pub fn save(model: &RuiModel, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    // write-then-rename so an interrupted save never clobbers the last good file
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<RuiModel> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("loading checkpoint {}", path.display()))
}
