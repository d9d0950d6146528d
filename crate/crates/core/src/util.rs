use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Round half away from zero to `decimals` places.
pub fn round_to(x: f64, decimals: u32) -> f64 {
    let s = 10f64.powi(decimals as i32);
    let r = (x * s).round() / s;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Write through a sibling temp file and rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn create_dir_all(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Files in `dir` with the given extension, sorted by natural order of their stems.
pub fn list_with_extension(dir: &Path, ext: &str) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.is_file() && p.extension().and_then(|e| e.to_str()) == Some(ext) {
            out.push(p);
        }
    }
    out.sort_by(|a, b| natural_key(a).cmp(&natural_key(b)));
    Ok(out)
}

fn natural_key(p: &Path) -> (String, u64, String) {
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    let head = stem[..stem.len() - digits.len()].to_string();
    let n = digits.chars().rev().collect::<String>().parse().unwrap_or(0);
    (head, n, stem)
}

/// Size the worker pool used by voxelization and resampling; 0 keeps the default.
#[cfg(feature = "parallel")]
pub fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Invalid(format!("--jobs {n}: {e}")))
}

#[cfg(not(feature = "parallel"))]
pub fn set_threads(_n: usize) -> Result<()> {
    Ok(())
}
