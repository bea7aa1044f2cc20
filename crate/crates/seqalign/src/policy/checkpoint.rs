//! Versioned binary checkpoints: a fixed header (magic, version,
//! architecture, flags, seed) followed by each parameter tensor as
//! little-endian float64 row-major with a length-prefixed name, plus a JSON
//! sidecar recording shapes and the seed for human inspection.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::error::{Error, Result};

use super::{Policy, PolicyConfig};

const MAGIC: &[u8; 4] = b"SQAC";
const VERSION: u32 = 1;

/// Sidecar path: `<checkpoint>.json` next to the blob.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".json");
    PathBuf::from(name)
}

fn tensor_shape(policy: &Policy, name: &str) -> Vec<usize> {
    let d = policy.config.dim;
    let h = policy.config.hidden;
    if name.starts_with("gcn.") {
        return vec![d, d];
    }
    match name {
        "fusion_weight" => vec![h, 2 * d],
        "fusion_bias" => vec![h],
        "mie_weight" => vec![d, d],
        "head_weight" => vec![2, h + 1],
        "value_weight" => vec![2 * d],
        "value_bias" => vec![1],
        _ => unreachable!("unknown tensor {name}"),
    }
}

/// Serialize the policy to `path` (and its JSON sidecar).
pub fn save(policy: &Policy, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(policy.config.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(policy.config.hidden as u32).to_le_bytes());
    buf.extend_from_slice(&(policy.config.layers as u32).to_le_bytes());
    let flags: u32 = if policy.config.use_mie { 1 } else { 0 };
    buf.extend_from_slice(&flags.to_le_bytes());
    buf.extend_from_slice(&policy.config.seed.to_le_bytes());
    let names = policy.params.tensor_names();
    buf.extend_from_slice(&(names.len() as u32).to_le_bytes());
    let mut shapes = serde_json::Map::new();
    for name in &names {
        let data = policy.params.tensor_data(name).unwrap();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in &data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        shapes.insert(name.clone(), json!(tensor_shape(policy, name)));
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
    let sidecar = json!({
        "format_version": VERSION,
        "dim": policy.config.dim,
        "hidden": policy.config.hidden,
        "layers": policy.config.layers,
        "use_mie": policy.config.use_mie,
        "seed": policy.config.seed,
        "tensors": shapes,
    });
    let sidecar_file = sidecar_path(path);
    fs::write(&sidecar_file, serde_json::to_string_pretty(&sidecar).unwrap())
        .map_err(|e| Error::io(&sidecar_file, e))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Deserialize a policy from `path`, validating structure and finiteness.
pub fn load(path: &Path) -> Result<Policy> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a policy checkpoint (bad magic)", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let dim = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let layers = r.u32()? as usize;
    let flags = r.u32()?;
    let seed = r.u64()?;
    let config = PolicyConfig {
        dim,
        hidden,
        layers,
        seed,
        use_mie: flags & 1 != 0,
    };
    let mut policy = Policy::new(config)?;
    let expected = policy.params.tensor_names();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {count} tensors stored, architecture needs {}",
            path.display(),
            expected.len()
        )));
    }
    let mut seen = vec![false; expected.len()];
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint(format!("{}: tensor name is not UTF-8", path.display())))?
            .to_string();
        let len = r.u64()? as usize;
        let data = r.f64_vec(len)?;
        let idx = expected
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::Checkpoint(format!("{}: unknown tensor '{name}'", path.display())))?;
        if seen[idx] {
            return Err(Error::Checkpoint(format!("{}: tensor '{name}' appears twice", path.display())));
        }
        seen[idx] = true;
        policy
            .params
            .set_tensor_data(&name, &data)
            .map_err(|e| Error::Checkpoint(format!("{}: tensor '{name}': {e}", path.display())))?;
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} trailing bytes after last tensor",
            path.display(),
            buf.len() - r.pos
        )));
    }
    if let Some(tensor) = policy.params.first_non_finite() {
        return Err(Error::Checkpoint(format!(
            "{}: tensor '{tensor}' contains non-finite values",
            path.display()
        )));
    }
    Ok(policy)
}
