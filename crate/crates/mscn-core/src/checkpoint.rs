//! Checkpoint directory format: `meta.json` plus one binary blob per named
//! tensor. Blobs carry a self-describing header (`name\0dtype\0rank\0dims...\0`)
//! followed by row-major little-endian values, and round-trip bit-exactly.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{MscnParams, NetworkConfig};
use crate::nn::Parameterized;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub crate_version: String,
    pub kind: String,
    pub config: NetworkConfig,
    /// Seeds that produced this checkpoint, in order (init seed, then one
    /// per training phase).
    pub seed_history: Vec<u64>,
    pub tensors: Vec<String>,
    /// Free-form string attributes (e.g. baseline normalization flag).
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
}

fn tensor_file(name: &str) -> String {
    // Parameter names only contain [A-Za-z0-9_.]; keep them readable.
    format!("{name}.bin")
}

fn write_blob(path: &Path, name: &str, t: &Array2<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + t.len() * 8);
    buf.extend_from_slice(name.as_bytes());
    buf.push(0);
    buf.extend_from_slice(b"f64");
    buf.push(0);
    buf.extend_from_slice(b"2");
    buf.push(0);
    for d in [t.nrows(), t.ncols()] {
        buf.extend_from_slice(d.to_string().as_bytes());
        buf.push(0);
    }
    for &v in t.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn read_field<'a>(bytes: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a [u8]> {
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos] != 0 {
        *pos += 1;
    }
    if *pos >= bytes.len() {
        return Err(Error::Checkpoint(format!("truncated header ({what})")));
    }
    let field = &bytes[start..*pos];
    *pos += 1;
    Ok(field)
}

fn read_blob(path: &Path) -> Result<(String, Array2<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pos = 0;
    let name = String::from_utf8_lossy(read_field(&bytes, &mut pos, "name")?).into_owned();
    let dtype = read_field(&bytes, &mut pos, "dtype")?;
    if dtype != b"f64" {
        return Err(Error::Checkpoint(format!(
            "unsupported dtype {:?} in {name}",
            String::from_utf8_lossy(dtype)
        )));
    }
    let rank: usize = String::from_utf8_lossy(read_field(&bytes, &mut pos, "rank")?)
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad rank in {name}")))?;
    if rank != 2 {
        return Err(Error::Checkpoint(format!("unsupported rank {rank} in {name}")));
    }
    let mut shape = [0usize; 2];
    for s in shape.iter_mut() {
        *s = String::from_utf8_lossy(read_field(&bytes, &mut pos, "shape")?)
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad shape in {name}")))?;
    }
    let n = shape[0] * shape[1];
    let data = &bytes[pos..];
    if data.len() != n * 8 {
        return Err(Error::Checkpoint(format!(
            "{name}: expected {} data bytes, found {}",
            n * 8,
            data.len()
        )));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let arr = Array2::from_shape_vec((shape[0], shape[1]), values)
        .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
    Ok((name, arr))
}

/// Writes a checkpoint directory (created if absent, existing blobs replaced).
pub fn save_tensors(
    dir: &Path,
    kind: &str,
    config: &NetworkConfig,
    seed_history: &[u64],
    named: &[(String, Array2<f64>)],
) -> Result<()> {
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        kind: kind.to_string(),
        config: config.clone(),
        seed_history: seed_history.to_vec(),
        tensors: Vec::new(),
        attrs: BTreeMap::new(),
    };
    save_tensors_with(dir, meta, named)
}

/// Like [`save_tensors`] but with a caller-built meta record (`tensors` is
/// filled in here).
pub fn save_tensors_with(
    dir: &Path,
    mut meta: CheckpointMeta,
    named: &[(String, Array2<f64>)],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    meta.tensors = named.iter().map(|(n, _)| n.clone()).collect();
    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&meta_path, json).map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    for (name, t) in named {
        write_blob(&dir.join(tensor_file(name)), name, t)?;
    }
    Ok(())
}

pub fn load_meta(dir: &Path) -> Result<CheckpointMeta> {
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::MissingCheckpoint(dir.display().to_string()));
    }
    let json =
        fs::read_to_string(&meta_path).map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    Ok(serde_json::from_str(&json)?)
}

pub fn load_tensors(dir: &Path) -> Result<(CheckpointMeta, HashMap<String, Array2<f64>>)> {
    let meta = load_meta(dir)?;
    let mut map = HashMap::new();
    for name in &meta.tensors {
        let (stored_name, arr) = read_blob(&dir.join(tensor_file(name)))?;
        if &stored_name != name {
            return Err(Error::Checkpoint(format!(
                "blob name {stored_name} does not match manifest entry {name}"
            )));
        }
        map.insert(stored_name, arr);
    }
    Ok((meta, map))
}

pub fn save_mscn(dir: &Path, params: &MscnParams, seed_history: &[u64]) -> Result<()> {
    save_tensors(
        dir,
        "mscn",
        &params.config,
        seed_history,
        &params.named_tensors(),
    )
}

/// Restores tensors into a parameter record by name, requiring an exact
/// name and shape match for every entry.
pub fn restore_into(
    target: &mut dyn Parameterized,
    tensors: &HashMap<String, Array2<f64>>,
) -> Result<()> {
    let mut missing = Vec::new();
    target.visit_mut("", &mut |name, t| match tensors.get(name) {
        Some(stored) if stored.dim() == t.dim() => t.assign(stored),
        _ => missing.push(name.to_string()),
    });
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!(
            "missing or mismatched tensors: {}",
            missing.join(", ")
        )))
    }
}

pub fn load_mscn(dir: &Path) -> Result<(MscnParams, CheckpointMeta)> {
    let (meta, tensors) = load_tensors(dir)?;
    let mut params = MscnParams::init(&meta.config, 0)?;
    restore_into(&mut params, &tensors)?;
    Ok((params, meta))
}
