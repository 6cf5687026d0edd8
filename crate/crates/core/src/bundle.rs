//! Named tensor bundles: a directory with one `.mlmt` file per array and a
//! `manifest.txt` of `name = file` lines (`#` starts a comment).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::{self, AnyTensor};
use crate::tensor::{Element, Tensor};

pub const MANIFEST: &str = "manifest.txt";

fn file_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.mlmt")
}

pub fn save_bundle<T: Element>(dir: impl AsRef<Path>, arrays: &[(String, Tensor<T>)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("# name = file\n");
    for (name, t) in arrays {
        if name.contains('=') || name.trim() != name || name.is_empty() {
            return Err(Error::Bundle(format!("invalid array name {name:?}")));
        }
        let file = file_name(name);
        format::save(t, dir.join(&file))?;
        manifest.push_str(&format!("{name} = {file}\n"));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<BTreeMap<String, AnyTensor>> {
    let dir = dir.as_ref();
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in manifest.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, file) = line
            .split_once('=')
            .ok_or_else(|| Error::Bundle(format!("manifest line {}: expected `name = file`", lineno + 1)))?;
        let file = file.trim();
        if file.contains('/') || file.contains('\\') || file == ".." {
            return Err(Error::Bundle(format!(
                "manifest line {}: file must be local",
                lineno + 1
            )));
        }
        out.insert(name.trim().to_string(), format::load(dir.join(file))?);
    }
    Ok(out)
}

/// Loads a bundle whose arrays all have element type `T`.
pub fn load_bundle_as<T: Element>(dir: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor<T>>> {
    load_bundle(dir)?
        .into_iter()
        .map(|(name, t)| {
            if t.dtype() != T::DTYPE {
                return Err(Error::Bundle(format!(
                    "array {name} is {}, expected {}",
                    t.dtype().name(),
                    T::DTYPE.name()
                )));
            }
            let typed = match t {
                AnyTensor::F32(t) => t.cast::<T>()?,
                AnyTensor::F64(t) => t.cast::<T>()?,
            };
            Ok((name, typed))
        })
        .collect()
}
