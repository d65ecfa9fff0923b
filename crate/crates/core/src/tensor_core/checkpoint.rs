//! JSON parameter checkpoints and atomic file output.
//!
//! ```json
//! {"format_version": 1, "params": {"name": {"shape": [2, 3], "data": [...]}}}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format_version: u32,
    params: BTreeMap<String, Entry>,
}

pub fn to_json(store: &ParamStore) -> Result<String> {
    let params = store
        .iter()
        .map(|(name, t)| {
            (
                name.to_string(),
                Entry {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                },
            )
        })
        .collect();
    Ok(serde_json::to_string(&Checkpoint {
        format_version: FORMAT_VERSION,
        params,
    })?)
}

pub fn from_json(text: &str) -> Result<ParamStore> {
    let ckpt: Checkpoint =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if ckpt.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format_version {}",
            ckpt.format_version
        )));
    }
    let mut store = ParamStore::new();
    for (name, entry) in ckpt.params {
        let t = Tensor::new(entry.shape, entry.data)
            .map_err(|e| Error::Checkpoint(format!("parameter `{name}`: {e}")))?;
        store.insert(name, t);
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    write_atomic(path, to_json(store)?.as_bytes())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    from_json(&fs::read_to_string(path)?)
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::new(vec![2], vec![0.1, -1.0 / 3.0]).unwrap());
        store.insert("b.w", Tensor::new(vec![1, 3], vec![1e-300, 7.0, f64::EPSILON]).unwrap());
        let back = from_json(&to_json(&store).unwrap()).unwrap();
        assert_eq!(back.checksum(), store.checksum());
    }

    #[test]
    fn rejects_other_versions() {
        let text = r#"{"format_version": 2, "params": {}}"#;
        assert!(matches!(from_json(text), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
