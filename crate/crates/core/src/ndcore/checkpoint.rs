//! Checkpoint format.
//!
//! Two files per checkpoint: `<path>` holds every tensor as consecutive
//! little-endian `f32` values, `<path>.manifest` is UTF-8 text:
//!
//! ```text
//! # free-form comment
//! @key = value                      (model configuration echo)
//! param enc1.conv1.weight 32x3x3x3 0
//! buffer enc1.bn1.running_mean 32 3456
//! ```
//!
//! The last column is the byte offset into the binary file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ndcore::element::Element;
use crate::ndcore::param::{ParamStore, Role};

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn fmt_shape(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    s.split('x').map(|d| d.parse().ok()).collect()
}

/// Saves every entry of `store`; `config` lines are echoed into the manifest.
pub fn save<T: Element>(path: &Path, store: &ParamStore<T>, config: &[(String, String)]) -> Result<()> {
    let mut bin = Vec::new();
    let mut text = String::from("# mitoseg checkpoint v1\n");
    for (k, v) in config {
        text.push_str(&format!("@{k} = {v}\n"));
    }
    for e in store.entries() {
        let role = match e.role {
            Role::Param => "param",
            Role::Buffer => "buffer",
        };
        text.push_str(&format!("{role} {} {} {}\n", e.name, fmt_shape(e.tensor.shape()), bin.len()));
        for &v in e.tensor.data().iter() {
            bin.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    write_atomic(path, &bin)?;
    write_atomic(&manifest_path(path), text.as_bytes())
}

/// Configuration echo (`@key = value` lines) of a checkpoint manifest.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.strip_prefix('@'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

/// Loads values into an already constructed `store`, validating that the
/// manifest lists exactly the store's tensors with matching shapes.
pub fn load<T: Element>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let bin = fs::read(path).map_err(|e| Error::io(path, e))?;

    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('@') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [_, name, shape, offset] = cols[..] else {
            return Err(bad(format!("manifest line {}: expected 4 columns", lineno + 1)));
        };
        let shape = parse_shape(shape).ok_or_else(|| bad(format!("manifest line {}: bad shape", lineno + 1)))?;
        let offset: usize = offset
            .parse()
            .map_err(|_| bad(format!("manifest line {}: bad offset", lineno + 1)))?;
        let tensor = store
            .get(name)
            .ok_or_else(|| bad(format!("`{name}` is not part of the model")))?;
        if tensor.shape() != shape.as_slice() {
            return Err(bad(format!(
                "`{name}` has shape {:?} in the checkpoint but {:?} in the model",
                shape,
                tensor.shape()
            )));
        }
        let n = tensor.numel();
        let bytes = bin
            .get(offset..offset + 4 * n)
            .ok_or_else(|| bad(format!("`{name}` runs past the end of the data file")))?;
        let mut dst = tensor.data_mut();
        for (d, chunk) in dst.iter_mut().zip(bytes.chunks_exact(4)) {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !v.is_finite() {
                return Err(bad(format!("`{name}` contains a non-finite value")));
            }
            *d = T::lit(v as f64);
        }
        seen.insert(name.to_string());
    }
    if let Some(missing) = store.entries().iter().find(|e| !seen.contains(&e.name)) {
        return Err(bad(format!("`{}` is missing from the checkpoint", missing.name)));
    }
    Ok(())
}
