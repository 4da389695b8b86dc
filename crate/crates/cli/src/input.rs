//! Loading instances and configs, and parsing list-valued flags.

use std::fmt;
use std::path::Path;

use anyhow::Context;
use nalgebra::DVector;
use serde::de::DeserializeOwned;

use pgsaddle_core::instance::BUNDLED;
use pgsaddle_core::{load_instance, Instance};

/// Marks an error as bad input (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// A file path, or the name of a bundled instance when no such file exists.
pub fn instance(spec: &str) -> anyhow::Result<Instance> {
    let path = Path::new(spec);
    if !path.exists() && BUNDLED.contains(&spec) {
        return Ok(Instance::bundled(spec)?);
    }
    if !path.exists() {
        return Err(invalid(format!("instance file {spec} does not exist (bundled: {})", BUNDLED.join(", "))));
    }
    load_instance(path).map_err(|e| invalid(format!("{spec}: {e}")))
}

pub fn json_file<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| invalid(format!("--{flag}: cannot parse {s:?}: {e}"))))
        .collect()
}

pub fn seeds(text: Option<&str>, default: &[u64]) -> anyhow::Result<Vec<u64>> {
    let seeds = match text {
        Some(t) => parse_list("seeds", t)?,
        None => default.to_vec(),
    };
    if seeds.is_empty() {
        return Err(invalid("--seeds must list at least one seed"));
    }
    Ok(seeds)
}

pub fn usizes(flag: &str, text: &str) -> anyhow::Result<Vec<usize>> {
    let v: Vec<usize> = parse_list(flag, text)?;
    if v.is_empty() {
        return Err(invalid(format!("--{flag} must not be empty")));
    }
    Ok(v)
}

pub fn vector(flag: &str, text: &str, dim: usize) -> anyhow::Result<DVector<f64>> {
    let v: Vec<f64> = parse_list(flag, text)?;
    if v.len() != dim {
        return Err(invalid(format!("--{flag} has {} entries, the policy has {dim} parameters", v.len())));
    }
    Ok(DVector::from_vec(v))
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}
