//! On-disk layout: `manifest.json`, `oic.jsonl`, `stc.jsonl`, one JSON
//! object per line. Serialization is deterministic: OIc in id order, STc in
//! record order.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ObjectId, OicRecord, SpatialTemporalStore, StcRecord, StoreMeta};
use crate::error::{D3aError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const OIC_FILE: &str = "oic.jsonl";
pub const STC_FILE: &str = "stc.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub schema: u32,
    #[serde(flatten)]
    pub meta: StoreMeta,
    pub next_object_id: ObjectId,
    pub oic_count: usize,
    pub stc_count: usize,
}

fn jsonl<T: Serialize>(items: impl Iterator<Item = T>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, &item)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

struct Encoded {
    manifest: Vec<u8>,
    oic: Vec<u8>,
    stc: Vec<u8>,
}

fn encode(store: &SpatialTemporalStore) -> Result<Encoded> {
    let manifest = StoreManifest {
        schema: SCHEMA_VERSION,
        meta: store.meta.clone(),
        next_object_id: store.next_object_id,
        oic_count: store.oic.len(),
        stc_count: store.stc.len(),
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
    manifest_bytes.push(b'\n');
    Ok(Encoded {
        manifest: manifest_bytes,
        oic: jsonl(store.oic.values())?,
        stc: jsonl(store.stc.iter())?,
    })
}

pub(crate) fn serialized_size(store: &SpatialTemporalStore) -> Result<u64> {
    let e = encode(store)?;
    Ok((e.manifest.len() + e.oic.len() + e.stc.len()) as u64)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| D3aError::io(path, e))?;
    f.write_all(bytes).map_err(|e| D3aError::io(path, e))?;
    f.sync_all().map_err(|e| D3aError::io(path, e))
}

/// Writes the store under `dir`, creating it if needed. Returns bytes written.
pub fn persist(store: &SpatialTemporalStore, dir: &Path) -> Result<u64> {
    fs::create_dir_all(dir).map_err(|e| D3aError::io(dir, e))?;
    let e = encode(store)?;
    write_file(&dir.join(OIC_FILE), &e.oic)?;
    write_file(&dir.join(STC_FILE), &e.stc)?;
    write_file(&dir.join(MANIFEST_FILE), &e.manifest)?;
    Ok((e.manifest.len() + e.oic.len() + e.stc.len()) as u64)
}

/// Parses one record per line. A malformed final line without a trailing
/// newline is treated as a torn write and dropped with a warning.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| D3aError::io(path, e))?;
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if !complete && i + 1 == lines.len() => {
                warn!("{}:{}: truncating partial trailing line", path.display(), i + 1);
            }
            Err(e) => {
                return Err(D3aError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn load(dir: &Path) -> Result<SpatialTemporalStore> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| D3aError::io(&manifest_path, e))?;
    let manifest: StoreManifest = serde_json::from_str(&text).map_err(|e| D3aError::Corrupt {
        path: manifest_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.schema != SCHEMA_VERSION {
        return Err(D3aError::Corrupt {
            path: manifest_path,
            line: 1,
            message: format!("unsupported schema {}", manifest.schema),
        });
    }
    let oic: Vec<OicRecord> = read_jsonl(&dir.join(OIC_FILE))?;
    let stc: Vec<StcRecord> = read_jsonl(&dir.join(STC_FILE))?;
    if oic.len() != manifest.oic_count || stc.len() != manifest.stc_count {
        warn!(
            "{}: manifest counts ({}, {}) differ from loaded ({}, {})",
            dir.display(),
            manifest.oic_count,
            manifest.stc_count,
            oic.len(),
            stc.len()
        );
    }
    SpatialTemporalStore::from_parts(manifest.meta, manifest.next_object_id, oic, stc)
}
